"""Sparse voxel CNN operators on perfect spatial hash tables."""

from .batch import SuperPsh, batch_levels, build_super, locate, locate_many, psh_hierarchy
from .ops import ConvSpec
from .psh import ConstructionError, PshLevel, build_psh, query, validate
from .voxel import InputModel, SparseVoxelSet, coarsen, hierarchy, normalize_model, voxelize

__version__ = "0.1.0"

__all__ = [
    "ConstructionError", "ConvSpec", "InputModel", "PshLevel", "SparseVoxelSet", "SuperPsh",
    "batch_levels", "build_psh", "build_super", "coarsen", "hierarchy", "locate",
    "locate_many", "normalize_model", "psh_hierarchy", "query", "validate", "voxelize",
]
