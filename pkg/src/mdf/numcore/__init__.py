"""Array substrate: reverse-mode differentiation, Adam, learning-rate schedule."""
from .autodiff import (
    DEFAULT_DTYPE,
    NonFiniteError,
    Tensor,
    abs_,
    add,
    as_array,
    backward,
    div,
    exp,
    grad,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    pick,
    power,
    relu,
    reshape,
    softmax,
    sort,
    sqrt,
    sub,
    sum_,
    take_rows,
    value_and_grad,
)
from .gradcheck import central_difference, relative_error
from .optim import AdamState, LrSchedule, adam_step, lr_at
