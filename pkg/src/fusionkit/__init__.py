"""Multimodal fusion operators behind one pluggable interface, plus a
desk-scale question-answering harness for comparing them.

Operator catalog: full bilinear contraction, compact bilinear pooling over
count sketches (MCB), low-rank factorized bilinear pooling (MLB/MFB and
stacked MFH), Tucker-core fusion, and block-superdiagonal fusion.  Linear
CCA and trainable deep CCA cover the coordinated-representation side.  A
minimal reverse-mode tape makes every operator trainable at desk scale.
"""

from . import autodiff
from .cca import (
    CcaSolution,
    DccaModel,
    cca_correlation,
    cca_fit,
    dcca_objective,
    train_dcca,
)
from .factorized import MfbFusion, MfhFusion, MlbFusion
from .fusion import FusionOp, fusion_kinds, make_fusion
from .sketch import McbFusion, SketchPlan, circular_convolve, count_sketch
from .tensor import (
    ModeNMatricization,
    dematricize,
    full_bilinear,
    matricize,
    matrix_rank,
    mode_n_product,
    outer_product,
    tensor_from_json,
    tensor_to_json,
)
from .training import (
    NanLossError,
    Optimizer,
    evaluate,
    grad_check,
    load_checkpoint,
    save_checkpoint,
    train_epoch,
)
from .tucker_block import BlockFusion, TuckerFusion, reconstruct_block_tensor

__version__ = "0.1.0"

__all__ = [
    "BlockFusion",
    "CcaSolution",
    "DccaModel",
    "FusionOp",
    "McbFusion",
    "MfbFusion",
    "MfhFusion",
    "MlbFusion",
    "ModeNMatricization",
    "NanLossError",
    "Optimizer",
    "SketchPlan",
    "TuckerFusion",
    "autodiff",
    "cca_correlation",
    "cca_fit",
    "circular_convolve",
    "count_sketch",
    "dcca_objective",
    "dematricize",
    "evaluate",
    "full_bilinear",
    "fusion_kinds",
    "grad_check",
    "load_checkpoint",
    "make_fusion",
    "matricize",
    "matrix_rank",
    "mode_n_product",
    "outer_product",
    "reconstruct_block_tensor",
    "save_checkpoint",
    "tensor_from_json",
    "tensor_to_json",
    "train_dcca",
    "train_epoch",
]
