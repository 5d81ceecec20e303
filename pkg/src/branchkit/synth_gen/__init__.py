"""Parametric branch/tree models and the clouds sampled from them."""
from .branch import BranchModel, TreeModel, fit_spline, resample_skeleton, tube_surface
from .render import RayCaster, render_partial
from .sampling import corrupt_gaps, jitter, occlude, sample_complete
from .spline import CatmullRomSpline
from .treegen import (BranchSkeletonParams, TreeUnitParams, generate_tree_unit, random_branch_skeleton,
                      random_fb_tree, tree_from_skeletons)
from .truth import branch_truth, tree_truth
from .types import PointCloud, SkeletalSphere, Skeleton, TaperProfile, ViewConfig, as_points

__all__ = [
    "BranchModel", "TreeModel", "fit_spline", "resample_skeleton", "tube_surface",
    "RayCaster", "render_partial", "corrupt_gaps", "jitter", "occlude", "sample_complete",
    "CatmullRomSpline", "BranchSkeletonParams", "TreeUnitParams", "generate_tree_unit",
    "random_branch_skeleton", "random_fb_tree", "tree_from_skeletons", "branch_truth", "tree_truth",
    "PointCloud", "SkeletalSphere", "Skeleton", "TaperProfile", "ViewConfig", "as_points",
]
