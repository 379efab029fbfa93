from .gradcheck import GradCheckReport, evaluate_and_backprop, grad_check
from .nn import Adam, LayerNorm, Linear, Module, Param
from .random import RandomSource, sample_standard_normal
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    concat,
    default_dtype,
    gelu,
    high_precision,
    layer_norm,
    matmul,
    mean,
    mse,
    no_grad,
    relu,
    set_default_dtype,
    sigmoid,
    softmax,
    sum_,
    tanh,
    var,
)
