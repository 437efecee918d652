from .gradcheck import check_grad, numeric_grad, relative_error
from .io import load_csv, load_tensors, save_csv, save_tensors
from .norm import NormState, dropout, normalize
from .optim import SGD, Adam, OptimizerState, adam_step, sgd_step
from .tensor import *  # noqa: F401,F403
from .tensor import __all__ as _tensor_all

__all__ = list(_tensor_all) + [
    "check_grad",
    "numeric_grad",
    "relative_error",
    "load_csv",
    "save_csv",
    "load_tensors",
    "save_tensors",
    "NormState",
    "normalize",
    "dropout",
    "OptimizerState",
    "adam_step",
    "sgd_step",
    "Adam",
    "SGD",
]
