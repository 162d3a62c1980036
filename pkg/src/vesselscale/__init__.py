"""Multi-scale decomposition of 3D vessel masks, segmentation metrics and loss kernels."""

__version__ = "0.1.0"

from .branches import (
    BranchTable,
    LabeledSkeleton,
    LocalRadiusMap,
    branch_radius,
    label_branches,
    local_radius,
    reconstruct_branches,
)
from .io import load_volume, save_volume
from .losses import (
    LossBreakdown,
    LossConfig,
    contrastive_loss,
    finite_difference_check,
    soft_dice_loss,
    total_loss,
    weighted_cross_entropy,
)
from .metrics import cl_dice, dice, evaluate, hausdorff, jaccard
from .phantom import PhantomSpec, Segment, generate_tree
from .pipeline import Decomposition, decompose
from .scales import ScaleDecomposition, ScaleThresholds, assign_scales, compute_thresholds, radius_statistics
from .skeleton import Skeleton, SurfaceSet, extract_surface, skeletonize
from .volume import Volume, connected_components, resample_nearest
