from glyco.autodiff.tensor import Tensor, as_tensor, grad_enabled, no_grad, parameter
from glyco.autodiff.optim import Adam, AdamState, adam_step
from glyco.autodiff.gradcheck import check_gradients, numerical_grad, relative_error
from glyco.autodiff import ops

__all__ = [
    "Tensor",
    "as_tensor",
    "grad_enabled",
    "no_grad",
    "parameter",
    "Adam",
    "AdamState",
    "adam_step",
    "check_gradients",
    "numerical_grad",
    "relative_error",
    "ops",
]
