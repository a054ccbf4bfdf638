from .tensor import (
    DimensionError,
    Tensor,
    add,
    concat,
    embedding_lookup,
    exp,
    grad_enabled,
    layernorm,
    linear,
    log,
    matmul,
    mul,
    multi_head_attention,
    no_grad,
    powc,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    sqrt,
    sub,
    tmean,
    transpose,
    tslice,
    tsum,
)
from .losses import BoxValidationError, focal_loss, giou_loss, giou_pairwise, l1_box
from .gradcheck import grad_check
from .optim import AdamW, Parameters, SGD, clip_grad_norm
from .checkpoint import load_checkpoint, save_checkpoint
