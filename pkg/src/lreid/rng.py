"""Seed derivation and parameter initialization.

A single run seed feeds every random decision through derived streams, so
identical seed + config reproduces a run exactly regardless of which optional
subsystems (buffer sampling, extra evals) happen to draw.
"""

import numpy as np

# Stream tags; keeping them distinct makes the derived streams independent.
STREAM_INIT = 0
STREAM_DATA = 1
STREAM_BATCH = 2
STREAM_BUFFER = 3


def derive_rng(seed, *path):
    """Deterministic generator for (seed, *path); distinct paths are independent."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, path)])))


def trunc_normal(rng, shape, std=0.02, dtype=np.float64):
    """Normal(0, std) truncated to [-2*std, 2*std] by resampling."""
    out = rng.normal(0.0, std, size=shape)
    bound = 2.0 * std
    for _ in range(16):
        bad = np.abs(out) > bound
        if not bad.any():
            break
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    return np.clip(out, -bound, bound).astype(dtype)
