"""Minimal numpy tensor library with reverse-mode differentiation."""
from .gradcheck import analytic_grad, grad_check, numerical_grad
from .ops import (
    conv2d,
    cosine_sim,
    cross_entropy,
    gaussian_blur,
    gaussian_kernel2d,
    gaussian_taps,
    info_nce,
    l2_normalize,
    resize_bicubic,
    resize_matrix,
    separable,
    ssim,
)
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    concat,
    exp,
    is_grad_enabled,
    log,
    logsumexp,
    matmul,
    mean,
    no_grad,
    relu,
    reshape,
    softplus,
    sqrt,
    stack,
    tabs,
    tanh,
    transpose,
    tsum,
    where,
)

__all__ = [
    "Adam", "AdamState", "Tape", "Tensor", "adam_step", "analytic_grad", "as_tensor", "backward",
    "concat", "conv2d", "cosine_sim", "cross_entropy", "exp", "gaussian_blur", "gaussian_kernel2d",
    "gaussian_taps", "grad_check", "info_nce", "is_grad_enabled", "l2_normalize", "log", "logsumexp",
    "matmul", "mean", "no_grad", "numerical_grad", "relu", "reshape", "resize_bicubic", "resize_matrix",
    "separable", "softplus", "sqrt", "ssim", "stack", "tabs", "tanh", "transpose", "tsum", "where",
]
