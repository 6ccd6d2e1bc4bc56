"""Minimal numpy tensor engine with reverse-mode autodiff."""
from . import functional
from .functional import (
    activation,
    batch_norm,
    bilinear_upsample,
    conv2d,
    conv_transpose2d,
    layer_norm,
    log_sigmoid,
    relu,
    sigmoid,
    silu,
    softmax,
    softplus,
)
from .gradcheck import GradCheckReport, check_parameters, finite_diff_check
from .optim import Adam, AdamState, adam_step, step_lr
from .tensor import (
    NonFiniteError,
    ShapeError,
    StaleTapeError,
    Tape,
    Tensor,
    add,
    backward,
    broadcast_to,
    clamp_min,
    concat,
    div,
    exp,
    flip,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    split,
    sqrt,
    stack,
    sub,
    sum_,
    transpose,
    verification_mode,
)


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch ``kind`` in {add, sub, mul, div, neg}."""
    ops = {"add": add, "sub": sub, "mul": mul, "div": div}
    if kind == "neg":
        return neg(a)
    return ops[kind](a, b)
