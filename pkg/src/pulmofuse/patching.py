"""Patch planning, extraction and overlap-averaged stitching."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidStride, MissingPatch, OutOfBounds, PatchLargerThanVolume, ShapeMismatch
from .nifti_io import Volume


def _triple(value, name: str) -> tuple:
    if np.isscalar(value):
        value = (value,) * 3
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ValueError(f"{name} must have 3 components, got {value}")
    return value


def axis_origins(extent: int, patch: int, stride: int) -> list[int]:
    """Origins 0, stride, 2*stride, ... with the last one flush to the edge."""
    last = extent - patch
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return origins


@dataclass(frozen=True)
class PatchGrid:
    volume_shape: tuple
    patch_shape: tuple
    origins: tuple  # (x, y, z) corners, sorted by (z, y, x)

    def __len__(self) -> int:
        return len(self.origins)

    def slices(self, origin) -> tuple:
        return tuple(slice(o, o + p) for o, p in zip(origin, self.patch_shape))


def plan_patches(volume_shape, patch_shape, stride=None) -> PatchGrid:
    volume_shape = _triple(volume_shape, "volume_shape")
    patch_shape = _triple(patch_shape, "patch_shape")
    stride = patch_shape if stride is None else _triple(stride, "stride")
    if any(p < 1 for p in patch_shape) or any(n < 1 for n in volume_shape):
        raise ValueError(f"shapes must be positive: volume {volume_shape}, patch {patch_shape}")
    if any(p > n for p, n in zip(patch_shape, volume_shape)):
        raise PatchLargerThanVolume(f"patch {patch_shape} exceeds volume {volume_shape}")
    # stride > patch would leave voxels uncovered
    if any(s < 1 or s > p for s, p in zip(stride, patch_shape)):
        raise InvalidStride(f"stride {stride} must lie in [1, patch] per axis ({patch_shape})")
    per_axis = [axis_origins(n, p, s) for n, p, s in zip(volume_shape, patch_shape, stride)]
    origins = tuple(
        (x, y, z) for z, y, x in itertools.product(per_axis[2], per_axis[1], per_axis[0])
    )
    return PatchGrid(volume_shape, patch_shape, origins)


def extract_patch(v: Volume, origin, patch_shape) -> Volume:
    """Copy a sub-block; the affine is shifted to the patch corner."""
    origin = _triple(origin, "origin")
    patch_shape = _triple(patch_shape, "patch_shape")
    if any(o < 0 or o + p > n for o, p, n in zip(origin, patch_shape, v.shape)):
        raise OutOfBounds(f"patch {patch_shape} at {origin} exceeds volume {v.shape}")
    sl = tuple(slice(o, o + p) for o, p in zip(origin, patch_shape))
    affine = v.affine.copy()
    affine[:3, 3] += affine[:3, :3] @ np.asarray(origin, dtype=np.float64)
    return Volume(np.asfortranarray(v.data[sl]), v.spacing, affine)


def gaussian_importance(patch_shape, sigma_scale: float = 0.125) -> np.ndarray:
    """Centre-weighted blending map, peak 1."""
    patch_shape = _triple(patch_shape, "patch_shape")
    w = np.ones(patch_shape, dtype=np.float64)
    for axis, n in enumerate(patch_shape):
        c = (n - 1) / 2.0
        sigma = max(n * sigma_scale, 1e-6)
        g = np.exp(-0.5 * ((np.arange(n) - c) / sigma) ** 2)
        shape = [1, 1, 1]
        shape[axis] = n
        w = w * g.reshape(shape)
    return w / w.max()


class StitchAccumulator:
    """Running weighted sum and coverage for patch reassembly.

    Single-owner: callers adding patches from several threads must either
    serialise calls or give each thread its own accumulator over a disjoint
    set of patches and combine with :meth:`merge`.
    """

    def __init__(self, volume_shape, patch_shape, weighting: str = "uniform"):
        self.volume_shape = _triple(volume_shape, "volume_shape")
        self.patch_shape = _triple(patch_shape, "patch_shape")
        if weighting == "uniform":
            self._weight = None
        elif weighting == "gaussian":
            self._weight = gaussian_importance(self.patch_shape)
        else:
            raise ValueError(f"unknown weighting {weighting!r}")
        self.sum = np.zeros(self.volume_shape, dtype=np.float64)
        self.count = np.zeros(self.volume_shape, dtype=np.float64)

    def add(self, origin, patch: np.ndarray) -> None:
        patch = np.asarray(patch)
        if patch.shape != self.patch_shape:
            raise ShapeMismatch(f"patch shape {patch.shape} != {self.patch_shape}")
        sl = tuple(slice(o, o + p) for o, p in zip(origin, self.patch_shape))
        if self._weight is None:
            self.sum[sl] += patch
            self.count[sl] += 1.0
        else:
            self.sum[sl] += patch * self._weight
            self.count[sl] += self._weight

    def merge(self, other: "StitchAccumulator") -> None:
        self.sum += other.sum
        self.count += other.count

    def finalize(self) -> np.ndarray:
        if (self.count <= 0).any():
            raise MissingPatch("some voxels are not covered by any patch")
        return (self.sum / self.count).astype(np.float32, order="F")


def stitch(
    grid: PatchGrid,
    patches: Mapping[tuple, np.ndarray] | Sequence[np.ndarray],
    weighting: str = "uniform",
) -> np.ndarray:
    """Reassemble per-patch predictions into a full volume.

    ``patches`` is either a mapping ``origin -> array`` or a sequence aligned
    with ``grid.origins``. Overlaps are averaged.
    """
    if isinstance(patches, Mapping):
        missing = [o for o in grid.origins if tuple(o) not in patches]
        if missing:
            raise MissingPatch(f"no patch for origin(s) {missing[:3]}")
        items = [(o, patches[tuple(o)]) for o in grid.origins]
    else:
        if len(patches) != len(grid.origins):
            raise MissingPatch(f"{len(patches)} patches for {len(grid.origins)} origins")
        items = list(zip(grid.origins, patches))
    acc = StitchAccumulator(grid.volume_shape, grid.patch_shape, weighting)
    for origin, patch in items:
        acc.add(origin, patch.data if isinstance(patch, Volume) else patch)
    return acc.finalize()
