"""Dense-tensor autodiff, optimizers and checkpoint I/O."""

from augcl.numerics.autodiff import (
    ComputationGraph,
    ContractError,
    DomainError,
    Node,
    NumericsError,
    ShapeError,
    add,
    backward_grad,
    concat,
    exp,
    forward_eval,
    gather_rows,
    l2_normalize,
    log,
    matmul,
    mean,
    mul,
    neg,
    relu,
    segment_sum,
    softmax,
    sub,
    transpose,
)
from augcl.numerics.autodiff import sum as sum_  # noqa: F401
from augcl.numerics.optim import NonFiniteGradient, OptimizerState, optimizer_step

__all__ = [
    "ComputationGraph",
    "ContractError",
    "DomainError",
    "Node",
    "NonFiniteGradient",
    "NumericsError",
    "OptimizerState",
    "ShapeError",
    "add",
    "backward_grad",
    "concat",
    "exp",
    "forward_eval",
    "gather_rows",
    "l2_normalize",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "optimizer_step",
    "relu",
    "segment_sum",
    "softmax",
    "sub",
    "sum_",
    "transpose",
]
