"""Perspective-aware fusion of depth maps with surface normal maps."""

__version__ = "0.1.0"

from .camera import CameraIntrinsics, back_project, normals_from_depth, project
from .estimators import NaiveFusion, OrthoFusion, PGFusion, PTGVFusion
from .exceptions import DepthFuseError, DomainError, PFMError, SolverError
from .gradfield import DifferenceOperator
from .grids import read_mask, read_pfm, write_mask, write_pfm
from .metrics import benchmark_report, mae_normals, rmse
from .pipeline import (FusionMethod, fuse, fuse_naive, fuse_ortho_direct, fuse_pg,
                       fuse_ptgv)
from .solver_ls import LsParams, fuse_ls
from .solver_tgv import TgvParams, fuse_tgv
from .synth import DegradationSpec, Scene, default_scene, degrade, make_scene

__all__ = [
    "CameraIntrinsics", "DegradationSpec", "DepthFuseError", "DifferenceOperator",
    "DomainError", "FusionMethod", "LsParams", "NaiveFusion", "OrthoFusion",
    "PFMError", "PGFusion", "PTGVFusion", "Scene", "SolverError", "TgvParams",
    "back_project", "benchmark_report", "default_scene", "degrade", "fuse",
    "fuse_ls", "fuse_naive", "fuse_ortho_direct", "fuse_pg", "fuse_ptgv",
    "fuse_tgv", "mae_normals", "make_scene", "normals_from_depth", "project",
    "read_mask", "read_pfm", "rmse", "write_mask", "write_pfm",
]
