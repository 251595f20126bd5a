"""Dice-weighted ensemble fusion of per-model segmentation maps.

Each model's weight is its validation dice divided by the sum of all dice
scores. Maps are combined voxelwise as a weighted sum and thresholded at
0.5, where an exact 0.5 counts as foreground.
"""

from __future__ import annotations

import math
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import CountMismatch, EmptyScores, NonFiniteValue, NonPositiveScore, ShapeMismatch

THRESHOLD = 0.5


def compute_weights(scores: Sequence[float]) -> np.ndarray:
    """Normalise validation dice scores into weights summing to one.

    Units do not matter (percent and fraction give the same weights).

    >>> compute_weights([1, 1, 2]).tolist()
    [0.25, 0.25, 0.5]
    """
    d = [float(s) for s in scores]
    if not d:
        raise EmptyScores("at least one model score is required")
    bad = [s for s in d if not (math.isfinite(s) and s > 0)]
    if bad:
        raise NonPositiveScore(f"dice scores must be positive and finite, got {bad}")
    total = math.fsum(d)
    return np.array([s / total for s in d], dtype=np.float64)


def _check_inputs(preds: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if len(preds) != len(w):
        raise CountMismatch(f"{len(preds)} prediction maps but {len(w)} weights")
    if len(preds) == 0:
        raise EmptyScores("no prediction maps to fuse")
    shape = np.shape(preds[0])
    for i, p in enumerate(preds):
        if np.shape(p) != shape:
            raise ShapeMismatch(f"map {i} has shape {np.shape(p)}, expected {shape}")
    return w


def weighted_sum(preds: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Voxelwise sum of ``w_i * p_i`` accumulated in float64."""
    w = _check_inputs(preds, weights)
    acc = np.zeros(np.shape(preds[0]), dtype=np.float64)
    for wi, p in zip(w, preds):
        acc += wi * np.asarray(p, dtype=np.float64)
    return acc


def fuse(preds: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Weighted probability map (float32, clipped to [0, 1])."""
    return np.clip(weighted_sum(preds, weights), 0.0, 1.0).astype(np.float32)


def threshold_half(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    if not np.isfinite(v).all():
        raise NonFiniteValue("cannot threshold NaN or infinite values")
    return (v >= THRESHOLD).astype(np.uint8)


def fuse_and_binarize(preds: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    # threshold the float64 sum, never the float32 copy
    return threshold_half(weighted_sum(preds, weights))


def fuse_slabs(
    slab_streams: Sequence[Iterable[tuple[int, np.ndarray]]],
    weights: Sequence[float],
) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Fuse z-aligned slab streams, yielding ``(z0, soft, mask)`` per slab.

    Every stream must yield the same ``(z0, slab)`` sequence, e.g. from
    :func:`pulmofuse.nifti_io.iter_slabs`. Peak memory is one slab per model.
    """
    w = np.asarray(weights, dtype=np.float64)
    if len(slab_streams) != len(w):
        raise CountMismatch(f"{len(slab_streams)} prediction maps but {len(w)} weights")
    for group in zip(*slab_streams):
        z0s = {z0 for z0, _ in group}
        if len(z0s) != 1:
            raise ShapeMismatch(f"slab streams out of step: {sorted(z0s)}")
        slabs = [s for _, s in group]
        acc = weighted_sum(slabs, w)
        yield group[0][0], np.clip(acc, 0.0, 1.0).astype(np.float32), threshold_half(acc)
