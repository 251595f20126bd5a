"""Synthetic vessel phantoms and a seeded stand-in for network predictions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .errors import TubeOutOfBounds, ValidationError
from .morphology import BRANCH, MAIN, structure
from .nifti_io import Volume


@dataclass(frozen=True)
class TubeSpec:
    polyline: tuple  # points in mm
    radius_profile: tuple  # radius (mm) at each point

    def __post_init__(self):
        pts = np.asarray(self.polyline, dtype=np.float64)
        radii = np.asarray(self.radius_profile, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
            raise ValidationError("a tube needs at least two 3D points")
        if radii.shape != (len(pts),) or not (radii > 0).all():
            raise ValidationError("one positive radius per polyline point is required")

    @classmethod
    def straight(cls, start, end, radius: float) -> "TubeSpec":
        return cls((tuple(start), tuple(end)), (radius, radius))

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.polyline, dtype=np.float64)

    @property
    def radii(self) -> np.ndarray:
        return np.asarray(self.radius_profile, dtype=np.float64)


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple
    spacing: tuple
    trunk: TubeSpec
    branches: tuple = ()
    background_hu: float = -1000.0
    vessel_hu: float = 300.0
    noise_sigma: float = 20.0
    seed: int = 0

    def validate(self) -> None:
        if self.vessel_hu <= self.background_hu:
            raise ValidationError("vessel_hu must exceed background_hu")
        for b in self.branches:
            if _distance_to_polyline(b.points[0], self.trunk.points) > 1e-6:
                raise ValidationError(f"branch start {tuple(b.points[0])} is not on the trunk")
        extent = np.asarray(self.shape, dtype=np.float64) - 1
        extent = extent * np.asarray(self.spacing, dtype=np.float64)
        for tube in (self.trunk, *self.branches):
            r = tube.radii[:, None]
            if ((tube.points - r) < 0).any() or ((tube.points + r) > extent).any():
                raise TubeOutOfBounds("a tube leaves the volume")


def _distance_to_polyline(p: np.ndarray, pts: np.ndarray) -> float:
    best = np.inf
    for a, b in zip(pts[:-1], pts[1:]):
        ab = b - a
        t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p - (a + t * ab))))
    return best


def rasterize_tube(tube: TubeSpec, shape, spacing) -> np.ndarray:
    """Voxels whose centre lies within the swept radius of the polyline."""
    spacing = np.asarray(spacing, dtype=np.float64)
    out = np.zeros(shape, dtype=bool)
    pts, radii = tube.points, tube.radii
    for a, b, ra, rb in zip(pts[:-1], pts[1:], radii[:-1], radii[1:]):
        rmax = max(ra, rb)
        lo = np.maximum(np.floor((np.minimum(a, b) - rmax) / spacing).astype(int), 0)
        hi = np.minimum(np.ceil((np.maximum(a, b) + rmax) / spacing).astype(int) + 1, shape)
        if (hi <= lo).any():
            continue
        grids = np.meshgrid(
            *(np.arange(l, h) * s for l, h, s in zip(lo, hi, spacing)), indexing="ij"
        )
        ab = b - a
        denom = max(float(np.dot(ab, ab)), 1e-300)
        t = sum((g - a[i]) * ab[i] for i, g in enumerate(grids)) / denom
        t = np.clip(t, 0.0, 1.0)
        d2 = sum((g - (a[i] + t * ab[i])) ** 2 for i, g in enumerate(grids))
        r = ra + (rb - ra) * t
        out[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] |= d2 <= r * r
    return out


def rasterize_phantom(spec: PhantomSpec) -> tuple[Volume, np.ndarray, np.ndarray]:
    """Return ``(hu_volume, gt_mask, gt_regions)``.

    Region 1 is the trunk; region 2 holds branch voxels outside the trunk.
    HU values are ``background_hu`` outside, ``vessel_hu`` inside, plus
    seeded Gaussian noise when ``noise_sigma > 0``.
    """
    spec.validate()
    shape = tuple(int(s) for s in spec.shape)
    trunk = rasterize_tube(spec.trunk, shape, spec.spacing)
    branches = np.zeros(shape, dtype=bool)
    for b in spec.branches:
        branches |= rasterize_tube(b, shape, spec.spacing)
    mask = trunk | branches
    regions = np.zeros(shape, dtype=np.uint8, order="F")
    regions[branches] = BRANCH
    regions[trunk] = MAIN
    hu = np.where(mask, spec.vessel_hu, spec.background_hu).astype(np.float64)
    if spec.noise_sigma > 0:
        hu += np.random.default_rng(spec.seed).normal(0.0, spec.noise_sigma, shape)
    hu_vol = Volume(np.asfortranarray(hu.astype(np.float32)), spec.spacing)
    return hu_vol, np.asfortranarray(mask.astype(np.uint8)), regions


def cylinder_preset(radius: float = 3.0, length: float = 40.0, spacing: float = 1.0,
                    seed: int = 0, noise_sigma: float = 20.0) -> PhantomSpec:
    """Straight tube along z, centred in x and y."""
    margin = radius + 4 * spacing
    side = 2 * margin
    n_xy = int(np.ceil(side / spacing)) + 1
    n_z = int(np.ceil((length + 2 * margin) / spacing)) + 1
    c = (n_xy - 1) * spacing / 2
    trunk = TubeSpec.straight((c, c, margin), (c, c, margin + length), radius)
    return PhantomSpec((n_xy, n_xy, n_z), (spacing,) * 3, trunk,
                       noise_sigma=noise_sigma, seed=seed)


@dataclass(frozen=True)
class YGeometry:
    trunk_radius: float = 4.0
    branch_radius: float = 1.5
    trunk_length: float = 30.0
    branch_length: float = 30.0
    half_angle_deg: float = 35.0
    spacing: float = 0.5
    margin: float = 3.0


def y_preset(geom: YGeometry = YGeometry(), seed: int = 0,
             noise_sigma: float = 20.0) -> PhantomSpec:
    """Trunk along z splitting into two branches in the x-z plane."""
    g = geom
    theta = np.radians(g.half_angle_deg)
    dx = g.branch_length * np.sin(theta)
    dz = g.branch_length * np.cos(theta)
    half_x = max(dx + g.branch_radius, g.trunk_radius) + g.margin
    half_y = g.trunk_radius + g.margin
    z0 = g.trunk_radius + g.margin
    z_split = z0 + g.trunk_length
    z_top = z_split + max(dz + g.branch_radius, g.trunk_radius) + g.margin
    s = g.spacing
    shape = (int(np.ceil(2 * half_x / s)) + 1, int(np.ceil(2 * half_y / s)) + 1,
             int(np.ceil(z_top / s)) + 1)
    cx = (shape[0] - 1) * s / 2
    cy = (shape[1] - 1) * s / 2
    split = (cx, cy, z_split)
    trunk = TubeSpec.straight((cx, cy, z0), split, g.trunk_radius)
    left = TubeSpec.straight(split, (cx - dx, cy, z_split + dz), g.branch_radius)
    right = TubeSpec.straight(split, (cx + dx, cy, z_split + dz), g.branch_radius)
    return PhantomSpec(shape, (s, s, s), trunk, (left, right),
                       noise_sigma=noise_sigma, seed=seed)


PRESETS = {
    "cylinder": lambda seed=0: cylinder_preset(seed=seed),
    "y-bifurcation": lambda seed=0: y_preset(seed=seed),
}


@dataclass(frozen=True)
class Corruption:
    boundary_flip_prob: float = 0.0
    detach_blob_count: int = 0
    blob_radius: int = 2
    blob_gap: tuple = field(default=(3, 8))  # voxel distance range from the mask

    def is_zero(self) -> bool:
        return self.boundary_flip_prob == 0 and self.detach_blob_count == 0


def mock_predict(gt_mask: np.ndarray, corruption: Corruption = Corruption(),
                 seed: int = 0) -> np.ndarray:
    """Seeded imitation of a network probability map.

    Boundary voxels (one voxel inside or outside the mask surface) are
    flipped with ``boundary_flip_prob``; ``detach_blob_count`` spheres are
    added a few voxels away from the mask. Voxels in the boundary band and
    in blobs get graded confidences, so thresholding at 0.5 reproduces the
    corrupted mask exactly. With no corruption the mask is returned as float.
    """
    gt = np.asarray(gt_mask) != 0
    if corruption.is_zero():
        return gt.astype(np.float32)
    if not 0.0 <= corruption.boundary_flip_prob <= 1.0:
        raise ValidationError("boundary_flip_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    st = structure(6)
    band = (ndi.binary_dilation(gt, st) & ~gt) | (gt & ~ndi.binary_erosion(gt, st))
    flips = band & (rng.random(gt.shape) < corruption.boundary_flip_prob)
    pred = gt ^ flips

    blobs = np.zeros(gt.shape, dtype=bool)
    if corruption.detach_blob_count > 0:
        gap = ndi.distance_transform_edt(~gt)
        lo, hi = corruption.blob_gap
        r = corruption.blob_radius
        candidates = np.argwhere((gap >= lo + r) & (gap <= hi + r))
        if len(candidates):
            picks = rng.choice(len(candidates), size=corruption.detach_blob_count,
                               replace=len(candidates) < corruption.detach_blob_count)
            ball = np.indices((2 * r + 1,) * 3) - r
            ball = (ball ** 2).sum(axis=0) <= r * r
            for c in candidates[np.sort(picks)]:
                lo_c = np.maximum(c - r, 0)
                hi_c = np.minimum(c + r + 1, gt.shape)
                b = ball[tuple(slice(l - (cc - r), h - (cc - r))
                               for l, h, cc in zip(lo_c, hi_c, c))]
                blobs[tuple(slice(l, h) for l, h in zip(lo_c, hi_c))] |= b
    pred |= blobs

    # graded confidence on the uncertain voxels, 0/1 elsewhere
    uncertain = band | blobs
    conf = rng.uniform(0.2, 1.0, gt.shape)
    soft = np.where(pred, 1.0, 0.0)
    soft = np.where(uncertain, 0.5 + (soft - 0.5) * conf, soft)
    return np.asfortranarray(soft.astype(np.float32))
