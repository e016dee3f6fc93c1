"""Joint semantic segmentation and semantic edge detection in plain numpy,
trained with a decoupled cross-task consistency loss.

The segmentation output is pushed through a differentiable spatial-gradient
edge detector and penalized against the same edge targets as the dedicated
edge head, so the two task branches must agree at boundaries while their
gradients stay cleanly separated.
"""

from .edges import EdgeTarget, binary_edge_union, derive_edge_targets, spatial_gradient
from .losses import (
    LossBreakdown,
    LossWeights,
    boundary_aware_l1,
    decomposed_consistency_loss,
    multilabel_edge_loss,
    ohem_cross_entropy,
    total_loss,
)
from .model import ModelConfig, ParameterSet, SegEdgeModel
from .optim import Schedule, SgdState, grid_search, lr_at, sgd_step
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "EdgeTarget",
    "LossBreakdown",
    "LossWeights",
    "ModelConfig",
    "ParameterSet",
    "Schedule",
    "SegEdgeModel",
    "SgdState",
    "Tape",
    "Tensor",
    "binary_edge_union",
    "boundary_aware_l1",
    "decomposed_consistency_loss",
    "derive_edge_targets",
    "grid_search",
    "lr_at",
    "multilabel_edge_loss",
    "ohem_cross_entropy",
    "sgd_step",
    "spatial_gradient",
    "total_loss",
]
