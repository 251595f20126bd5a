"""Non-neural pieces of a pulmonary-artery segmentation pipeline.

NIfTI-1 I/O, CT preprocessing, patch tiling, dice-weighted ensemble fusion,
connected-component post-processing, trunk/branch decomposition and
multi-level dice evaluation, plus synthetic vessel phantoms for testing.
"""

from .ensemble import compute_weights, fuse, fuse_and_binarize, threshold_half
from .metrics import DiceReport, average_reports, cca_tradeoff_report, dice, multi_level_dice
from .morphology import (
    connected_components,
    decompose_main_vs_branches,
    distance_transform,
    largest_component,
    skeletonize,
)
from .nifti_io import NiftiHeader, Volume, read_nifti, write_nifti

__version__ = "0.1.0"

__all__ = [
    "DiceReport",
    "NiftiHeader",
    "Volume",
    "average_reports",
    "cca_tradeoff_report",
    "compute_weights",
    "connected_components",
    "decompose_main_vs_branches",
    "dice",
    "distance_transform",
    "fuse",
    "fuse_and_binarize",
    "largest_component",
    "multi_level_dice",
    "read_nifti",
    "skeletonize",
    "threshold_half",
    "write_nifti",
]
