import dataclasses
import threading
from collections.abc import Callable, Sequence
from logging import getLogger
from typing import Any

import numpy as np

from joint_annotator.misc import NonFiniteError, ShapeError

logger = getLogger(__name__)

Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_local = threading.local()


class Tensor:
    """float64の密テンソルです。`requires_grad=True`のもの（パラメータ）は`grad`に勾配を蓄積します。"""

    __slots__ = ("data", "grad", "name", "requires_grad", "tracked")

    def __init__(self, data: Any, *, requires_grad: bool = False, name: str = ""):
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.tracked = requires_grad
        self.name = name
        self.grad: np.ndarray | None = (
            np.zeros_like(self.data) if requires_grad else None
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on a tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.shape})"


def constant(data: Any) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


@dataclasses.dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Backward


class Graph:
    """1回の順伝播で記録された演算列（テープ）です。`with Graph() as graph:`の中でのみ記録されます。"""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Graph":
        _stack().append(self)
        return self

    def __exit__(self, *exc: Any):
        _stack().pop()

    def record(self, node: Node):
        self.nodes.append(node)

    def backward(self, loss: Tensor):
        backward(self, loss)


def _stack() -> list[Graph]:
    if not hasattr(_local, "graphs"):
        _local.graphs = []
    return _local.graphs


def current_graph() -> Graph | None:
    stack = _stack()
    return stack[-1] if stack else None


def check_finite(op: str, values: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")


def record(
    op: str, inputs: Sequence[Tensor], data: np.ndarray, backward_fn: Backward
) -> Tensor:
    """演算結果`data`からテンソルを作り、記録中のグラフがあれば逆伝播関数とともに登録します。"""
    check_finite(op, data)
    out = Tensor(data)
    graph = current_graph()
    if graph is not None and any(t.tracked for t in inputs):
        out.tracked = True
        graph.record(Node(op, tuple(inputs), out, backward_fn))
    return out


def backward(graph: Graph, loss: Tensor):
    """`loss`（スカラー）から記録と逆順に各演算を一度ずつたどり、パラメータの`grad`に勾配を加算します。"""
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        upstream = grads.pop(id(node.output), None)
        if upstream is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward(upstream)):
            if grad is None or not tensor.tracked:
                continue
            check_finite(f"{node.op}.backward", grad)
            if tensor.requires_grad:
                tensor.grad += grad  # type: ignore
            elif id(tensor) in grads:
                grads[id(tensor)] = grads[id(tensor)] + grad
            else:
                grads[id(tensor)] = grad
