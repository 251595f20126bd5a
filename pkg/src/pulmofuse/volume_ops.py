"""CT preprocessing, augmentation and sum-projection rendering."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from .errors import AllUninformative, DegenerateRange, EmptyVolume, SpecOutOfRange
from .nifti_io import Volume, atomic_write

AXES = {"x": 0, "y": 1, "z": 2}
PLANES = {"axial": 2, "coronal": 1, "sagittal": 0}

MAX_ROTATION_DEG = 30.0
MAX_SHIFT_HU = 10.0


def clip_scale_hu(v: Volume, lo: float = -1000.0, hi: float = 1000.0) -> Volume:
    """Clamp intensities to ``[lo, hi]`` and map them linearly onto ``[0, 1]``."""
    if not lo < hi:
        raise DegenerateRange(f"clip range [{lo}, {hi}] is empty")
    data = np.clip(v.data.astype(np.float64), lo, hi)
    out = ((data - lo) / (hi - lo)).astype(np.float32, order="F")
    return v.with_data(out)


@dataclass(frozen=True)
class CropRecord:
    original_shape: tuple
    kept: tuple  # per-axis (start, stop)

    def uncrop(self, data: np.ndarray, fill=0) -> np.ndarray:
        """Embed a cropped array back into the original grid."""
        out = np.full(self.original_shape, fill, dtype=data.dtype, order="F")
        out[tuple(slice(a, b) for a, b in self.kept)] = data
        return out


def crop_uninformative_slices(v: Volume) -> tuple[Volume, CropRecord]:
    """Drop leading and trailing z-slices that hold only the global minimum.

    The affine translation is shifted so cropped voxels keep their world
    coordinates.
    """
    if v.data.size == 0:
        raise EmptyVolume("cannot crop an empty volume")
    lo = v.data.min()
    informative = np.flatnonzero((v.data != lo).any(axis=(0, 1)))
    if informative.size == 0:
        raise AllUninformative("every slice holds only the minimum value")
    z0, z1 = int(informative[0]), int(informative[-1]) + 1
    nx, ny, nz = v.shape
    record = CropRecord(v.shape, ((0, nx), (0, ny), (z0, z1)))
    affine = v.affine.copy()
    affine[:3, 3] += affine[:3, 2] * z0
    cropped = np.asfortranarray(v.data[:, :, z0:z1])
    return Volume(cropped, v.spacing, affine), record


@dataclass(frozen=True)
class AugmentationSpec:
    flip_axes: tuple = ()
    rotation_degrees: float = 0.0
    rotation_axis: str = "z"
    intensity_shift_hu: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if any(a not in AXES for a in self.flip_axes):
            raise SpecOutOfRange(f"flip axes must be drawn from x, y, z: {self.flip_axes}")
        if self.rotation_axis not in AXES:
            raise SpecOutOfRange(f"rotation axis must be x, y or z: {self.rotation_axis}")
        if not -MAX_ROTATION_DEG <= self.rotation_degrees <= MAX_ROTATION_DEG:
            raise SpecOutOfRange(f"rotation {self.rotation_degrees} outside [-30, 30] degrees")
        if not abs(self.intensity_shift_hu) <= MAX_SHIFT_HU:
            raise SpecOutOfRange(f"intensity shift {self.intensity_shift_hu} HU exceeds 10 HU")


def random_augmentation(seed: int, rotation_axis: str = "z") -> AugmentationSpec:
    """Draw an augmentation within the allowed ranges, reproducibly from ``seed``."""
    rng = np.random.default_rng(seed)
    flips = tuple(a for a in "xyz" if rng.random() < 0.5)
    return AugmentationSpec(
        flip_axes=flips,
        rotation_degrees=float(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)),
        rotation_axis=rotation_axis,
        intensity_shift_hu=float(rng.uniform(-MAX_SHIFT_HU, MAX_SHIFT_HU)),
        seed=seed,
    )


def rotate(data: np.ndarray, degrees: float, axis: str = "z") -> np.ndarray:
    """Rotate about ``axis`` through the grid centre (trilinear, zero fill)."""
    plane = tuple(i for i in range(3) if i != AXES[axis])
    out = ndi.rotate(
        data.astype(np.float64), degrees, axes=plane, reshape=False, order=1,
        mode="constant", cval=0.0, prefilter=False,
    )
    return out


def apply_augmentation(v: Volume, spec: AugmentationSpec, hu_range: float = 2000.0) -> Volume:
    """Flip, rotate, then shift intensities of a normalised volume.

    The shift is given in HU and converted with ``hu_range`` (the width of
    the clip window used for normalisation). The result is re-clamped to
    ``[0, 1]``.
    """
    spec.validate()
    data = np.asarray(v.data, dtype=np.float32)
    for a in spec.flip_axes:
        data = np.flip(data, axis=AXES[a])
    if spec.rotation_degrees != 0.0:
        data = rotate(data, spec.rotation_degrees, spec.rotation_axis)
    if spec.intensity_shift_hu != 0.0:
        data = data + spec.intensity_shift_hu / hu_range
    out = np.clip(data, 0.0, 1.0).astype(np.float32, order="F")
    return v.with_data(out)


def project_sum(v: Volume, plane: str = "axial") -> np.ndarray:
    """Sum voxels along the axis normal to ``plane`` (float64 accumulation).

    Axial sums over z, coronal over y, sagittal over x; the remaining two
    axes keep their order.
    """
    if plane not in PLANES:
        raise ValueError(f"unknown plane {plane!r}")
    if v.data.size == 0:
        raise EmptyVolume("cannot project an empty volume")
    return v.data.sum(axis=PLANES[plane], dtype=np.float64)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Min-max normalise to 0..255 (a constant image maps to 0)."""
    lo, hi = float(image.min()), float(image.max())
    if hi == lo:
        return np.zeros(image.shape, dtype=np.uint8)
    return np.rint((image - lo) * (255.0 / (hi - lo))).astype(np.uint8)


def encode_pgm(image: np.ndarray) -> bytes:
    """Binary PGM (P5, maxval 255); the first image axis runs left to right."""
    pixels = to_uint8(image) if image.dtype != np.uint8 else image
    rows = np.ascontiguousarray(pixels.T)
    height, width = rows.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + rows.tobytes()


def write_pgm(image: np.ndarray, path: str | Path) -> None:
    atomic_write(path, encode_pgm(image))
