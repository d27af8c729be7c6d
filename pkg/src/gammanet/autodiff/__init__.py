from . import ops
from .gradcheck import gradcheck, numerical_grad, relative_error
from .ops import DegenerateNeighborhoodError
from .params import ParamStore, Scope
from .tensor import ContractError, ShapeError, Tensor, as_tensor

__all__ = [
    "ContractError",
    "DegenerateNeighborhoodError",
    "ParamStore",
    "Scope",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "gradcheck",
    "numerical_grad",
    "ops",
    "relative_error",
]
