"""Differentiable core: tape tensors, model ops, Adam, gradient checking, checkpoints."""
from .init import uniform_init
from .gradcheck import analytic_grads, grad_check, per_param_errors
from .ops import (
    add,
    concat,
    conv1x1,
    cross_entropy,
    dilated_conv1d,
    gru_cell,
    gru_sequence,
    l2_normalize,
    linear,
    matmul,
    mean,
    mse,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    take,
    tanh,
    total,
    transpose,
)
from .optim import AdamState, adam_step, step_decay_lr
from .tensor import Tensor, as_tensor, no_grad

