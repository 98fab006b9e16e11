"""Finite-difference verification of every training loss.

Each scenario rebuilds its loss from leaf tensors so central differences
(h=1e-5, 64-bit) can probe the same computation the backward pass claims to
differentiate. Triplet indices are mined once per scenario and frozen: the
mining choice is piecewise constant and must not flip under perturbation.
"""

from dataclasses import dataclass

import numpy as np

from . import fusion
from . import losses as L
from . import tensor as T
from .rng import derive_rng
from .tensor import Tensor


@dataclass
class LossCheck:
    name: str
    max_rel_error: float
    passed: bool


def finite_difference(fn, leaves, h=1e-5):
    """Central-difference gradients of scalar fn() w.r.t. each leaf's values."""
    grads = []
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = fn().item()
            flat[i] = original - h
            down = fn().item()
            flat[i] = original
            g[i] = (up - down) / (2.0 * h)
        grads.append(g.reshape(leaf.data.shape))
    return grads


def max_relative_error(analytic, numeric, floor=1e-3):
    """Worst per-coordinate |a - f| / max(|a|, |f|, floor) across all leaves."""
    worst = 0.0
    for a, f in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float((np.abs(a - f) / denom).max()))
    return worst


def check_gradients(fn, leaves, h=1e-5):
    """Compare reverse-mode gradients of fn() against central differences."""
    analytic_map = T.gradient_of(fn(), leaves)
    analytic = [analytic_map[leaf] for leaf in leaves]
    numeric = finite_difference(fn, leaves, h=h)
    return max_relative_error(analytic, numeric)


# -- loss scenarios -----------------------------------------------------------


def _leaf(rng, shape):
    return Tensor(rng.normal(0.0, 1.0, size=shape), requires_grad=True)


def _frozen_triplet(features_fn, labels):
    """Mine once on current values; return a loss closure with fixed indices."""
    batch = L.mine_triplets(features_fn(), labels)
    anchor, positive, negative = batch.anchor, batch.positive, batch.negative

    def fn():
        return L.triplet_loss(
            L.TripletBatch(features=features_fn(), anchor=anchor, positive=positive, negative=negative),
            margin=0.1,
        )

    return fn


def _scenario_ortho(rng, s):
    aux = [_leaf(rng, (4, 8)) for _ in range(max(s, 2))]
    return lambda: fusion.orthogonality_loss(aux), aux


def _scenario_identity(rng, s):
    logits = _leaf(rng, (4, 5))
    labels = np.array([0, 2, 1, 4])
    return lambda: L.identity_loss(logits, labels), [logits]


def _scenario_triplet(rng, s):
    features = _leaf(rng, (4, 8))
    labels = np.array([0, 0, 1, 1])
    return _frozen_triplet(lambda: features, labels), [features]


def _scenario_distill(rng, s):
    teacher = rng.normal(0.0, 1.0, size=(4, 5))
    student = _leaf(rng, (4, 5))
    return lambda: L.distill_kl_loss(teacher, student, temperature=2.0), [student]


def _scenario_consistency(rng, s):
    teacher = rng.normal(0.0, 1.0, size=(3, s + 1, 8))
    student = _leaf(rng, (3, s + 1, 8))
    return lambda: L.consistency_loss(teacher, student), [student]


def _scenario_soft_targets(rng, s):
    teacher = rng.normal(0.0, 1.0, size=(4, 5))
    student = _leaf(rng, (4, 5))
    return lambda: L.soft_target_loss(teacher, student), [student]


def _new_instance_graph(rng, s):
    """Shared leaves for the composite checks: embeddings plus a head."""
    primary = _leaf(rng, (4, 8))
    aux = [_leaf(rng, (4, 8)) for _ in range(s)]
    head_w = _leaf(rng, (5, 8))
    head_b = _leaf(rng, (5,))
    labels = np.array([0, 0, 1, 1])

    def fused():
        return fusion.integrate(primary, aux)[0]

    def logits():
        return T.add(T.matmul(fused(), T.transpose(head_w, (1, 0))), head_b)

    def concat_feats():
        return T.concat([fused()] + aux, axis=1)

    leaves = [primary, *aux, head_w, head_b]
    return fused, logits, concat_feats, labels, leaves


def _scenario_base(rng, s):
    _, logits, concat_feats, labels, leaves = _new_instance_graph(rng, s)
    trip = _frozen_triplet(concat_feats, labels)

    def fn():
        aux = leaves[1 : 1 + s]
        return L.base_loss(L.identity_loss(logits(), labels), trip(), fusion.orthogonality_loss(aux))

    return fn, leaves


def _scenario_alignment(rng, s):
    primary = _leaf(rng, (4, 8))
    aux = [_leaf(rng, (4, 8)) for _ in range(s)]
    teacher_stack = rng.normal(0.0, 1.0, size=(4, s + 1, 8))
    labels = np.array([0, 0, 1, 1])

    def stack():
        fused = fusion.integrate(primary, aux)[0]
        parts = [T.reshape(fused, (4, 1, 8))] + [T.reshape(a, (4, 1, 8)) for a in aux]
        return T.concat(parts, axis=1)

    def concat_feats():
        return T.concat([fusion.integrate(primary, aux)[0]] + aux, axis=1)

    trip = _frozen_triplet(concat_feats, labels)

    def fn():
        return L.alignment_loss(trip(), L.consistency_loss(teacher_stack, stack()))

    return fn, [primary, *aux]


def _scenario_total(rng, s):
    fused_new, logits_new, feats_new, labels, leaves_new = _new_instance_graph(rng, s)
    teacher_logits_new = rng.normal(0.0, 1.0, size=(4, 5))
    trip_new = _frozen_triplet(feats_new, labels)

    primary_old = _leaf(rng, (4, 8))
    aux_old = [_leaf(rng, (4, 8)) for _ in range(s)]
    teacher_stack_old = rng.normal(0.0, 1.0, size=(4, s + 1, 8))
    teacher_logits_old = rng.normal(0.0, 1.0, size=(4, 5))
    head_w, head_b = leaves_new[-2], leaves_new[-1]

    def fused_old():
        return fusion.integrate(primary_old, aux_old)[0]

    def stack_old():
        parts = [T.reshape(fused_old(), (4, 1, 8))] + [T.reshape(a, (4, 1, 8)) for a in aux_old]
        return T.concat(parts, axis=1)

    def feats_old():
        return T.concat([fused_old()] + aux_old, axis=1)

    trip_old = _frozen_triplet(feats_old, labels)

    def fn():
        aux = leaves_new[1 : 1 + s]
        base = L.base_loss(L.identity_loss(logits_new(), labels), trip_new(), fusion.orthogonality_loss(aux))
        distill = L.distill_kl_loss(teacher_logits_new, logits_new(), temperature=2.0)
        align = L.alignment_loss(trip_old(), L.consistency_loss(teacher_stack_old, stack_old()))
        logits_old = T.add(T.matmul(fused_old(), T.transpose(head_w, (1, 0))), head_b)
        soft = L.soft_target_loss(teacher_logits_old, logits_old)
        return L.total_loss(base, distill, align, soft)

    return fn, leaves_new + [primary_old, *aux_old]


DEFAULT_SCENARIOS = (
    ("ortho", _scenario_ortho),
    ("identity", _scenario_identity),
    ("triplet", _scenario_triplet),
    ("distill", _scenario_distill),
    ("consistency", _scenario_consistency),
    ("soft_targets", _scenario_soft_targets),
    ("base", _scenario_base),
    ("alignment", _scenario_alignment),
    ("total", _scenario_total),
)


def run_suite(aux_tokens=2, seeds=(0, 1, 2, 3, 4), h=1e-5, tol=1e-4, scenarios=None):
    """Check every loss on several random draws; returns one result per loss.

    Runs in 64-bit regardless of the ambient precision and restores it after.
    """
    previous = T.get_default_dtype()
    T.set_default_dtype("float64")
    try:
        results = []
        for name, builder in scenarios or DEFAULT_SCENARIOS:
            worst = 0.0
            for seed in seeds:
                fn, leaves = builder(derive_rng(seed, 77), aux_tokens)
                worst = max(worst, check_gradients(fn, leaves, h=h))
            results.append(LossCheck(name=name, max_rel_error=worst, passed=worst < tol))
        return results
    finally:
        T.set_default_dtype(previous)
