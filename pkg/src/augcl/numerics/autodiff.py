"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations are recorded eagerly on a :class:`ComputationGraph` tape. The tape
can be replayed with new inputs (:func:`forward_eval`) and differentiated
(:func:`backward_grad`). Tensors are plain ``numpy.ndarray`` objects of dtype
float64; a node never mutates the arrays it receives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from augcl import kernels


class NumericsError(ValueError):
    """Base class for errors raised while building or evaluating a graph."""


class ShapeError(NumericsError):
    def __init__(self, message: str, node_id: int | None = None, op: str | None = None):
        where = f"node {node_id} ({op}): " if node_id is not None else ""
        super().__init__(where + message)
        self.node_id = node_id
        self.op = op


class DomainError(NumericsError):
    def __init__(self, message: str, node_id: int | None = None, op: str | None = None):
        where = f"node {node_id} ({op}): " if node_id is not None else ""
        super().__init__(where + message)
        self.node_id = node_id
        self.op = op


class ContractError(NumericsError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# --- op table --------------------------------------------------------------
# forward(values, attrs) -> array ; backward(g, out, values, attrs) -> list of grads


def _add_fwd(v, a):
    _check_broadcast(v[0], v[1])
    return v[0] + v[1]


def _add_bwd(g, out, v, a):
    return [_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)]


def _sub_fwd(v, a):
    _check_broadcast(v[0], v[1])
    return v[0] - v[1]


def _sub_bwd(g, out, v, a):
    return [_unbroadcast(g, v[0].shape), -_unbroadcast(g, v[1].shape)]


def _mul_fwd(v, a):
    _check_broadcast(v[0], v[1])
    return v[0] * v[1]


def _mul_bwd(g, out, v, a):
    return [_unbroadcast(g * v[1], v[0].shape), _unbroadcast(g * v[0], v[1].shape)]


def _neg_fwd(v, a):
    return -v[0]


def _neg_bwd(g, out, v, a):
    return [-g]


def _matmul_fwd(v, a):
    x, y = v
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
        raise ShapeError(f"matmul of {x.shape} and {y.shape}")
    return x @ y


def _matmul_bwd(g, out, v, a):
    x, y = v
    return [g @ y.T, x.T @ g]


def _transpose_fwd(v, a):
    if v[0].ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {v[0].shape}")
    return v[0].T.copy()


def _transpose_bwd(g, out, v, a):
    return [g.T]


def _relu_fwd(v, a):
    return np.maximum(v[0], 0.0)


def _relu_bwd(g, out, v, a):
    return [g * (v[0] > 0)]


def _log_fwd(v, a):
    x = v[0]
    if np.any(x <= 0):
        raise DomainError(f"log of non-positive value (min {x.min():.3g})")
    return np.log(x)


def _log_bwd(g, out, v, a):
    return [g / v[0]]


def _exp_fwd(v, a):
    return np.exp(v[0])


def _exp_bwd(g, out, v, a):
    return [g * out]


def _softmax_fwd(v, a):
    x = v[0]
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_bwd(g, out, v, a):
    return [out * (g - (g * out).sum(axis=-1, keepdims=True))]


def _norms(x):
    return np.sqrt((x * x).sum(axis=-1, keepdims=True))


def _l2n_fwd(v, a):
    x = v[0]
    n = _norms(x)
    safe = np.where(n > 0, n, 1.0)
    return np.where(n > 0, x / safe, 0.0)


def _l2n_bwd(g, out, v, a):
    n = _norms(v[0])
    safe = np.where(n > 0, n, 1.0)
    grad = (g - out * (g * out).sum(axis=-1, keepdims=True)) / safe
    return [np.where(n > 0, grad, 0.0)]


def _segsum_fwd(v, a):
    x = v[0]
    index = a["index"]
    if x.ndim != 2 or index.shape[0] != x.shape[0]:
        raise ShapeError(f"segment_sum of {x.shape} with index length {index.shape[0]}")
    return kernels.scatter_add_rows(x, index, a["n"])


def _segsum_bwd(g, out, v, a):
    return [g[a["index"]]]


def _gather_fwd(v, a):
    x = v[0]
    index = a["index"]
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather index out of range for {x.shape[0]} rows")
    return x[index]


def _gather_bwd(g, out, v, a):
    return [kernels.scatter_add_rows(g, a["index"], v[0].shape[0])]


def _sum_fwd(v, a):
    return np.asarray(v[0].sum(axis=a["axis"], keepdims=a["keepdims"]))


def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _sum_bwd(g, out, v, a):
    return [np.array(_expand_reduced(g, v[0].shape, a["axis"], a["keepdims"]))]


def _mean_fwd(v, a):
    return np.asarray(v[0].mean(axis=a["axis"], keepdims=a["keepdims"]))


def _mean_bwd(g, out, v, a):
    x = v[0]
    count = x.size if a["axis"] is None else x.shape[a["axis"]]
    return [np.array(_expand_reduced(g, x.shape, a["axis"], a["keepdims"])) / count]


def _concat_fwd(v, a):
    axis = a["axis"]
    ref = v[0].shape
    for x in v[1:]:
        if x.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(x.shape, ref)) if i != axis % x.ndim):
            raise ShapeError(f"concat of incompatible shapes {ref} and {x.shape}")
    return np.concatenate(v, axis=axis)


def _concat_bwd(g, out, v, a):
    cuts = np.cumsum([x.shape[a["axis"]] for x in v])[:-1]
    return np.split(g, cuts, axis=a["axis"])


@dataclass(frozen=True)
class OpDef:
    forward: Callable[[list, dict], np.ndarray]
    backward: Callable[[np.ndarray, np.ndarray, list, dict], list]


OPS: dict[str, OpDef] = {
    "add": OpDef(_add_fwd, _add_bwd),
    "sub": OpDef(_sub_fwd, _sub_bwd),
    "mul": OpDef(_mul_fwd, _mul_bwd),
    "neg": OpDef(_neg_fwd, _neg_bwd),
    "matmul": OpDef(_matmul_fwd, _matmul_bwd),
    "transpose": OpDef(_transpose_fwd, _transpose_bwd),
    "relu": OpDef(_relu_fwd, _relu_bwd),
    "log": OpDef(_log_fwd, _log_bwd),
    "exp": OpDef(_exp_fwd, _exp_bwd),
    "softmax": OpDef(_softmax_fwd, _softmax_bwd),
    "l2_normalize": OpDef(_l2n_fwd, _l2n_bwd),
    "segment_sum": OpDef(_segsum_fwd, _segsum_bwd),
    "gather_rows": OpDef(_gather_fwd, _gather_bwd),
    "sum": OpDef(_sum_fwd, _sum_bwd),
    "mean": OpDef(_mean_fwd, _mean_bwd),
    "concat": OpDef(_concat_fwd, _concat_bwd),
}

LEAF_OPS = ("input", "param", "const")


# --- graph -----------------------------------------------------------------


@dataclass(eq=False)
class Node:
    graph: ComputationGraph
    id: int
    op: str
    inputs: tuple[int, ...]
    attrs: dict[str, Any]
    value: np.ndarray
    name: str | None = None
    requires_grad: bool = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def named(self, name: str) -> Node:
        self.name = name
        return self

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Node({self.id}, {self.op}, shape={self.shape})"


@dataclass(eq=False)
class ComputationGraph:
    """Append-only tape of operations. Node ids are positions in ``nodes``.

    Not safe for concurrent mutation; build one graph per thread.
    """

    nodes: list[Node] = field(default_factory=list)
    params: dict[str, int] = field(default_factory=dict)

    def _leaf(self, op: str, value, name: str | None, trainable: bool) -> Node:
        arr = np.asarray(value, dtype=np.float64)
        node = Node(self, len(self.nodes), op, (), {}, arr, name, trainable)
        self.nodes.append(node)
        return node

    def input(self, name: str, value) -> Node:
        return self._leaf("input", value, name, False)

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        node = self._leaf("param", value, name, True)
        self.params[name] = node.id
        return node

    def const(self, value) -> Node:
        return self._leaf("const", value, None, False)

    def record(self, op: str, inputs: list[Node], **attrs) -> Node:
        for x in inputs:
            if x.graph is not self:
                raise ContractError("operands belong to different graphs")
        node_id = len(self.nodes)
        values = [x.value for x in inputs]
        try:
            out = OPS[op].forward(values, attrs)
        except (ShapeError, DomainError) as exc:
            raise type(exc)(str(exc), node_id, op) from None
        node = Node(
            self,
            node_id,
            op,
            tuple(x.id for x in inputs),
            attrs,
            out,
            None,
            any(x.requires_grad for x in inputs),
        )
        self.nodes.append(node)
        return node

    def __getitem__(self, key: int | str) -> Node:
        if isinstance(key, int):
            return self.nodes[key]
        for node in self.nodes:
            if node.name == key:
                return node
        raise KeyError(key)


def _as_node(graph: ComputationGraph, x) -> Node:
    return x if isinstance(x, Node) else graph.const(x)


def _graph_of(*xs) -> ComputationGraph:
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    raise ContractError("at least one operand must be a graph node")


def _binary(op, a, b):
    g = _graph_of(a, b)
    return g.record(op, [_as_node(g, a), _as_node(g, b)])


def add(a, b) -> Node:
    return _binary("add", a, b)


def sub(a, b) -> Node:
    return _binary("sub", a, b)


def mul(a, b) -> Node:
    return _binary("mul", a, b)


def matmul(a, b) -> Node:
    return _binary("matmul", a, b)


def neg(a: Node) -> Node:
    return a.graph.record("neg", [a])


def transpose(a: Node) -> Node:
    return a.graph.record("transpose", [a])


def relu(a: Node) -> Node:
    return a.graph.record("relu", [a])


def log(a: Node) -> Node:
    return a.graph.record("log", [a])


def exp(a: Node) -> Node:
    return a.graph.record("exp", [a])


def softmax(a: Node) -> Node:
    """Softmax over the last axis."""
    return a.graph.record("softmax", [a])


def l2_normalize(a: Node) -> Node:
    """Scale rows to unit norm; an all-zero row maps to zero with zero gradient."""
    return a.graph.record("l2_normalize", [a])


def segment_sum(a: Node, index, n: int) -> Node:
    """Sum rows of ``a`` into ``n`` segments given by integer ``index``."""
    return a.graph.record("segment_sum", [a], index=np.asarray(index, dtype=np.int64), n=int(n))


def gather_rows(a: Node, index) -> Node:
    return a.graph.record("gather_rows", [a], index=np.asarray(index, dtype=np.int64))


def sum(a: Node, axis: int | None = None, keepdims: bool = False) -> Node:  # noqa: A001
    return a.graph.record("sum", [a], axis=axis, keepdims=keepdims)


def mean(a: Node, axis: int | None = None, keepdims: bool = False) -> Node:
    return a.graph.record("mean", [a], axis=axis, keepdims=keepdims)


def concat(xs: list[Node], axis: int = -1) -> Node:
    return xs[0].graph.record("concat", list(xs), axis=axis)


# --- evaluation ------------------------------------------------------------


def forward_eval(graph: ComputationGraph, inputs: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Replay the tape with new values for named inputs/parameters.

    Returns the value of every named node. Unnamed inputs keep their
    recorded values.
    """
    inputs = dict(inputs or {})
    known = {n.name for n in graph.nodes if n.op in ("input", "param")}
    unknown = set(inputs) - known
    if unknown:
        raise ContractError(f"unknown inputs: {sorted(unknown)}")
    for node in graph.nodes:
        if node.op in LEAF_OPS:
            if node.name in inputs:
                new = np.asarray(inputs[node.name], dtype=np.float64)
                if new.shape != node.value.shape:
                    raise ShapeError(
                        f"input {node.name!r} expects shape {node.value.shape}, got {new.shape}", node.id, node.op
                    )
                node.value = new
            continue
        values = [graph.nodes[i].value for i in node.inputs]
        try:
            node.value = OPS[node.op].forward(values, node.attrs)
        except (ShapeError, DomainError) as exc:
            raise type(exc)(str(exc), node.id, node.op) from None
    return {n.name: n.value for n in graph.nodes if n.name is not None}


def backward_grad(graph: ComputationGraph, loss: Node | int) -> dict[str, np.ndarray]:
    """Gradients of a scalar node w.r.t. every parameter of ``graph``.

    Nodes are visited in descending id order, so the accumulation order into
    any node is fixed and results are reproducible bit for bit.
    """
    loss_node = graph.nodes[loss] if isinstance(loss, int) else loss
    if loss_node.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss_node.value.shape}")
    grads: dict[int, np.ndarray] = {loss_node.id: np.ones_like(loss_node.value)}
    for node in reversed(graph.nodes[: loss_node.id + 1]):
        g = grads.get(node.id)
        if g is None or node.op in LEAF_OPS:
            continue
        values = [graph.nodes[i].value for i in node.inputs]
        parts = OPS[node.op].backward(g, node.value, values, node.attrs)
        for src, part in zip(node.inputs, parts):
            if not graph.nodes[src].requires_grad:
                continue
            if src in grads:
                grads[src] = grads[src] + part
            else:
                grads[src] = np.array(part, dtype=np.float64)
    return {
        name: grads.get(nid, np.zeros_like(graph.nodes[nid].value)) for name, nid in graph.params.items()
    }
