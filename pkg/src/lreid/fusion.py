"""Constraints between the primary and auxiliary embeddings.

Two operations: push the auxiliary embeddings of a batch apart (mean absolute
pairwise cosine), and fold them into the primary embedding with per-sample
weights 1 - cos(P, A^s). Gradients flow through the weights; nothing is
detached here.
"""

import warnings

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _zero_norm_mask(*arrays):
    mask = np.zeros(arrays[0].shape[:-1], dtype=bool)
    for arr in arrays:
        mask |= (arr == 0).all(axis=-1)
    return mask


def orthogonality_loss(aux):
    """Mean over batch and unordered pairs i<j of |cos(A^i, A^j)|.

    Returns a zero scalar when fewer than two auxiliaries exist. Zero-norm
    vectors contribute cosine 0 (with a warning).
    """
    s = len(aux)
    if s < 2:
        return Tensor(np.asarray(0.0, dtype=T.get_default_dtype()))
    terms = []
    for i in range(s):
        for j in range(i + 1, s):
            mask = _zero_norm_mask(aux[i].data, aux[j].data)
            if mask.any():
                warnings.warn("zero-norm auxiliary embedding; treating cosine as 0")
            terms.append(T.mean(T.abs_(T.cosine_rows(aux[i], aux[j], zero_mask=mask))))
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.mul(total, 1.0 / len(terms))


def integrate(primary, aux, clamp_weights=False):
    """Fuse auxiliaries into the primary: P_hat = P + sum_s (1 - w_s) * A^s.

    w_s is the per-sample cosine between P and A^s. With clamp_weights the
    cosines are clipped to [0, 1] before use (off by default; cosine spans
    [-1, 1] and the fusion rule is applied literally). Returns the fused
    embedding and the stacked weights (S, B) for logging.
    """
    weights = []
    fused = primary
    for a in aux:
        mask = _zero_norm_mask(primary.data)
        if mask.any():
            warnings.warn("zero-norm primary embedding; fusion weight falls back to 0")
        w = T.cosine_rows(primary, a, zero_mask=mask | _zero_norm_mask(a.data))
        if clamp_weights:
            # relu(w) - relu(w - 1) clips to [0, 1] while staying differentiable
            w = T.sub(T.relu(w), T.relu(T.sub(w, 1.0)))
        weights.append(w)
        coeff = T.reshape(T.sub(1.0, w), (w.shape[0], 1))
        fused = T.add(fused, T.mul(coeff, a))
    weight_values = np.stack([w.data for w in weights]) if weights else np.zeros((0, primary.shape[0]))
    return fused, weight_values
