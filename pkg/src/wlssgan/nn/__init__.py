from . import functional
from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, AdamState, adam_step
from .tensor import ContractError, Tensor, as_tensor, concat, frozen, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "ContractError",
    "GradCheckReport",
    "Tensor",
    "adam_step",
    "as_tensor",
    "concat",
    "frozen",
    "functional",
    "grad_check",
    "no_grad",
]
