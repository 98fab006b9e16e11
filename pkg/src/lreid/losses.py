"""Training objectives.

New-instance terms: identity cross-entropy, batch-hard triplet, auxiliary
orthogonality, and tempered KL distillation against the teacher's logits.
Buffer-instance terms: old-instance triplet, cosine-structure consistency
(L1 between self-similarity matrices), and soft-target supervision. Teacher
outputs are always treated as constants; only the student receives gradients.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class TripletBatch:
    """Row features plus mined (anchor, positive, negative) index triples."""

    features: Tensor
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


def identity_loss(logits, labels):
    """Mean cross-entropy of the logits against integer labels."""
    labels = np.asarray(labels)
    n, width = logits.shape
    if labels.min() < 0 or labels.max() >= width:
        raise ValueError(f"label out of range for {width} registered classes")
    onehot = np.zeros((n, width), dtype=T.get_default_dtype())
    onehot[np.arange(n), labels] = 1.0
    return T.neg(T.mean(T.sum_(T.mul(T.log_softmax(logits, axis=-1), Tensor(onehot)), axis=1)))


def pairwise_distances(values):
    """Euclidean distance matrix between rows of a value array."""
    sq = (values * values).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * values @ values.T
    return np.sqrt(np.maximum(d2, 0.0))


def mine_triplets(features, labels):
    """Batch-hard mining: hardest positive and hardest negative per anchor.

    Distances are euclidean on the feature values; gradient flow is deferred
    to triplet_loss. Requires every identity to appear at least twice and at
    least two identities in the batch. Ties resolve to the lowest index.
    """
    values = features.data if isinstance(features, Tensor) else np.asarray(features)
    labels = np.asarray(labels)
    n = len(labels)
    same = labels[:, None] == labels[None, :]
    positive_mask = same & ~np.eye(n, dtype=bool)
    negative_mask = ~same
    if not positive_mask.any(axis=1).all():
        lonely = labels[~positive_mask.any(axis=1)][0]
        raise ValueError(f"identity {lonely} has a single instance in the batch")
    if not negative_mask.any(axis=1).all():
        raise ValueError("batch contains a single identity; no negatives to mine")
    dist = pairwise_distances(values)
    pos = np.where(positive_mask, dist, -np.inf).argmax(axis=1)
    neg = np.where(negative_mask, dist, np.inf).argmin(axis=1)
    feats = features if isinstance(features, Tensor) else Tensor(features)
    return TripletBatch(features=feats, anchor=np.arange(n), positive=pos, negative=neg)


def triplet_loss(batch, margin=0.0):
    """Mean hinge max(d(a,p) - d(a,n) + margin, 0) over the mined triples."""
    f = batch.features
    fa = T.take(f, batch.anchor)
    fp = T.take(f, batch.positive)
    fn = T.take(f, batch.negative)
    d_ap = _row_distance(fa, fp)
    d_an = _row_distance(fa, fn)
    return T.mean(T.relu(T.add(T.sub(d_ap, d_an), margin)))


def _row_distance(a, b):
    diff = T.sub(a, b)
    return T.sqrt(T.sum_(T.mul(diff, diff), axis=1))


def distill_kl_loss(teacher_logits, student_logits, temperature):
    """Mean KL(softmax(teacher/T) || softmax(student/T)); teacher is constant."""
    teacher_logits = np.asarray(teacher_logits.data if isinstance(teacher_logits, Tensor) else teacher_logits)
    if teacher_logits.shape[-1] != student_logits.shape[-1]:
        raise ValueError(
            f"logit widths differ: teacher {teacher_logits.shape[-1]}, student {student_logits.shape[-1]}"
        )
    t_log = _log_softmax_values(teacher_logits / temperature)
    t_prob = np.exp(t_log)
    entropy_term = float((t_prob * t_log).sum(axis=1).mean())
    s_log = T.log_softmax(T.mul(student_logits, 1.0 / temperature), axis=-1)
    cross = T.mean(T.sum_(T.mul(Tensor(t_prob), s_log), axis=1))
    return T.sub(entropy_term, cross)


def soft_target_loss(teacher_logits, student_logits):
    """Soft-target cross-entropy: -mean sum softmax(teacher) * log_softmax(student)."""
    teacher_logits = np.asarray(teacher_logits.data if isinstance(teacher_logits, Tensor) else teacher_logits)
    if teacher_logits.shape[-1] != student_logits.shape[-1]:
        raise ValueError(
            f"logit widths differ: teacher {teacher_logits.shape[-1]}, student {student_logits.shape[-1]}"
        )
    t_prob = np.exp(_log_softmax_values(teacher_logits))
    s_log = T.log_softmax(student_logits, axis=-1)
    return T.neg(T.mean(T.sum_(T.mul(Tensor(t_prob), s_log), axis=1)))


def consistency_loss(teacher_stack, student_stack):
    """L1 gap between the two models' row-cosine self-similarity matrices.

    Stacks are B x (S+1) x D embeddings; rows are compared across the whole
    flattened stack. The teacher matrix is a constant target.
    """
    t_vals = np.asarray(teacher_stack.data if isinstance(teacher_stack, Tensor) else teacher_stack)
    if t_vals.shape != tuple(student_stack.shape):
        raise ValueError(f"stack shapes differ: {t_vals.shape} vs {student_stack.shape}")
    rows = t_vals.reshape(-1, t_vals.shape[-1])
    t_norm = rows / np.sqrt((rows * rows).sum(axis=1, keepdims=True) + 1e-12)
    t_gram = t_norm @ t_norm.T
    s_rows = T.reshape(student_stack, (rows.shape[0], rows.shape[1]))
    s_norm = T.l2_normalize(s_rows, axis=1)
    s_gram = T.matmul(s_norm, T.transpose(s_norm, (1, 0)))
    return T.mean(T.abs_(T.sub(s_gram, Tensor(t_gram))))


def base_loss(id_term, triplet_term, ortho_term):
    """New-instance training loss: identity + triplet + orthogonality."""
    return T.add(T.add(id_term, triplet_term), ortho_term)


def alignment_loss(triplet_old_term, consistency_term):
    """Buffer-instance representation alignment: old triplet + consistency."""
    return T.add(triplet_old_term, consistency_term)


def total_loss(base, distill, align, soft):
    """Unit-weight sum of the four loss groups."""
    return T.add(T.add(T.add(base, distill), align), soft)


def _log_softmax_values(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
