from collections.abc import Sequence
from typing import Any

import numpy as np
from scipy import special

from joint_annotator.diffcore.tensor import Tensor, constant, record
from joint_annotator.misc import ShapeError


def _require(cond: bool, message: str):
    if not cond:
        raise ShapeError(message)


def matmul(a: Any, b: Any) -> Tensor:
    a, b = constant(a), constant(b)
    _require(
        a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0],
        f"matmul: incompatible shapes {a.shape} @ {b.shape}",
    )
    x, w = a.data, b.data

    def _backward(g: np.ndarray):
        return g @ w.T, x.T @ g

    return record("matmul", (a, b), x @ w, _backward)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # (n, k) + (k,) と (…) + () の2通りのみ
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    return g.sum(axis=0)


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    _require(
        a.shape == b.shape
        or b.data.ndim == 0
        or (a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]),
        f"{op}: cannot combine shapes {a.shape} and {b.shape}",
    )


def add(a: Any, b: Any) -> Tensor:
    """同じ形のテンソルの和です。`b`は行ベクトル（全行に加算）かスカラーでも構いません。"""
    a, b = constant(a), constant(b)
    _check_broadcast("add", a, b)
    shape = b.shape

    def _backward(g: np.ndarray):
        return g, _reduce_to(g, shape)

    return record("add", (a, b), a.data + b.data, _backward)


def sub(a: Any, b: Any) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast("sub", a, b)
    shape = b.shape

    def _backward(g: np.ndarray):
        return g, -_reduce_to(g, shape)

    return record("sub", (a, b), a.data - b.data, _backward)


def mul(a: Any, b: Any) -> Tensor:
    a, b = constant(a), constant(b)
    _require(a.shape == b.shape, f"mul: shape mismatch {a.shape} * {b.shape}")
    x, y = a.data, b.data

    def _backward(g: np.ndarray):
        return g * y, g * x

    return record("mul", (a, b), x * y, _backward)


def scale(a: Tensor, c: float) -> Tensor:
    def _backward(g: np.ndarray):
        return (g * c,)

    return record("scale", (a,), a.data * c, _backward)


def concat(tensors: Sequence[Any], axis: int = -1) -> Tensor:
    """最後の軸（`axis=0`なら行方向）でテンソルを連結します。"""
    ts = [constant(t) for t in tensors]
    _require(len(ts) > 0, "concat: nothing to concatenate")
    ndim = ts[0].data.ndim
    axis = axis % ndim
    for t in ts:
        _require(
            t.data.ndim == ndim
            and all(t.shape[i] == ts[0].shape[i] for i in range(ndim) if i != axis),
            f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}",
        )
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def _backward(g: np.ndarray):
        return np.split(g, splits, axis=axis)

    return record("concat", ts, np.concatenate([t.data for t in ts], axis=axis), _backward)


def take_rows(x: Tensor, idx: Sequence[int] | np.ndarray) -> Tensor:
    """`x[idx]`を取り出します（埋め込みの参照、先頭サブワードの取り出しなど）。"""
    rows = np.asarray(idx, dtype=np.int64)
    _require(
        rows.ndim == 1 and (len(rows) == 0 or (rows.min() >= 0 and rows.max() < len(x.data))),
        f"take_rows: indices out of range for {len(x.data)} rows",
    )
    shape = x.shape

    def _backward(g: np.ndarray):
        gx = np.zeros(shape)
        np.add.at(gx, rows, g)
        return (gx,)

    return record("take_rows", (x,), x.data[rows], _backward)


embedding_gather = take_rows


def transpose(a: Tensor) -> Tensor:
    _require(a.data.ndim == 2, f"transpose: expected a matrix, got {a.shape}")

    def _backward(g: np.ndarray):
        return (g.T,)

    return record("transpose", (a,), a.data.T.copy(), _backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def _backward(g: np.ndarray):
        return (g * mask,)

    return record("relu", (a,), a.data * mask, _backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def _backward(g: np.ndarray):
        return (g * (1.0 - y * y),)

    return record("tanh", (a,), y, _backward)


def softplus(a: Tensor) -> Tensor:
    x = a.data

    def _backward(g: np.ndarray):
        return (g * special.expit(x),)

    return record("softplus", (a,), np.logaddexp(0.0, x), _backward)


def softmax(a: Tensor) -> Tensor:
    y = special.softmax(a.data, axis=-1)

    def _backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record("softmax", (a,), y, _backward)


def log_softmax(a: Tensor) -> Tensor:
    y = special.log_softmax(a.data, axis=-1)

    def _backward(g: np.ndarray):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return record("log_softmax", (a,), y, _backward)


def logsumexp(a: Tensor) -> Tensor:
    """最後の軸について`log Σ exp`を取ります。"""
    x = a.data
    y = special.logsumexp(x, axis=-1)

    def _backward(g: np.ndarray):
        return (np.exp(x - np.expand_dims(y, -1)) * np.expand_dims(g, -1),)

    return record("logsumexp", (a,), np.asarray(y), _backward)


def sum(a: Tensor) -> Tensor:  # noqa: A001
    shape = a.shape

    def _backward(g: np.ndarray):
        return (np.full(shape, float(g)),)

    return record("sum", (a,), np.asarray(a.data.sum()), _backward)


def mean(a: Tensor) -> Tensor:
    shape, size = a.shape, a.data.size
    _require(size > 0, "mean: empty tensor")

    def _backward(g: np.ndarray):
        return (np.full(shape, float(g) / size),)

    return record("mean", (a,), np.asarray(a.data.mean()), _backward)


def total(tensors: Sequence[Tensor]) -> Tensor:
    """スカラーテンソルの総和です。"""
    _require(len(tensors) > 0, "total: nothing to add")
    out = tensors[0]
    for t in tensors[1:]:
        out = add(out, t)
    return out


def cross_entropy(
    logits: Tensor, targets: Sequence[int] | np.ndarray, mask: np.ndarray | None = None
) -> Tensor:
    """行ごとのsoftmax交差エントロピーの和を返します。`mask`が`False`の列は候補から除外します。"""
    x = logits.data
    y = np.asarray(targets, dtype=np.int64)
    _require(
        x.ndim == 2 and y.shape == (x.shape[0],),
        f"cross_entropy: logits {x.shape} vs targets {y.shape}",
    )
    _require(
        len(y) == 0 or (y.min() >= 0 and y.max() < x.shape[1]),
        f"cross_entropy: target id out of range for {x.shape[1]} classes",
    )
    if mask is not None:
        _require(mask.shape == x.shape, f"cross_entropy: mask {mask.shape} vs {x.shape}")
        _require(bool(np.all(mask[np.arange(len(y)), y])), "cross_entropy: masked target")
        x = np.where(mask, x, -np.inf)
    logp = special.log_softmax(x, axis=-1)
    rows = np.arange(len(y))

    def _backward(g: np.ndarray):
        grad = np.exp(logp)
        grad[rows, y] -= 1.0
        return (grad * float(g),)

    return record("cross_entropy", (logits,), np.asarray(-logp[rows, y].sum()), _backward)


def bilinear(x: Tensor, u: Tensor, y: Tensor) -> Tensor:
    """`out[i, r] = x_i · U[:, r, :] · y_i`です。`U`は`(D1, R, D2)`の形で持ちます。"""
    _require(
        x.data.ndim == 2
        and y.data.ndim == 2
        and u.data.ndim == 3
        and x.shape[0] == y.shape[0]
        and x.shape[1] == u.shape[0]
        and y.shape[1] == u.shape[2],
        f"bilinear: incompatible shapes {x.shape}, {u.shape}, {y.shape}",
    )
    d1, r, d2 = u.shape
    n = x.shape[0]
    flat_u = u.data.reshape(d1, r * d2)
    xu = (x.data @ flat_u).reshape(n, r, d2)

    def _backward(g: np.ndarray):
        gy_outer = (g[:, :, None] * y.data[:, None, :]).reshape(n, r * d2)
        gx = gy_outer @ flat_u.T
        gu = (x.data.T @ gy_outer).reshape(d1, r, d2)
        gy = (g[:, :, None] * xu).sum(axis=1)
        return gx, gu, gy

    return record("bilinear", (x, u, y), (xu * y.data[:, None, :]).sum(axis=-1), _backward)
