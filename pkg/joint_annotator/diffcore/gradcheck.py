from collections.abc import Callable, Sequence

import numpy as np

from joint_annotator.diffcore.tensor import Graph, Tensor


def analytic_grads(loss_fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.zero_grad()
    with Graph() as graph:
        loss = loss_fn()
    graph.backward(loss)
    return [p.grad.copy() for p in params]  # type: ignore


def max_relative_error(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    samples: int | None = None,
    seed: int = 0,
    floor: float = 1e-4,
) -> float:
    """解析的勾配と中心差分による数値勾配の最大相対誤差を返します。
    `samples`を指定した場合、各パラメータからその個数だけ要素を無作為に選んで比較します。"""
    rng = np.random.default_rng(seed)
    grads = analytic_grads(loss_fn, params)
    worst = 0.0

    for param, grad in zip(params, grads):
        flat = param.data.reshape(-1)
        positions = np.arange(flat.size)
        if samples is not None and samples < flat.size:
            positions = rng.choice(flat.size, size=samples, replace=False)
        for pos in positions:
            original = flat[pos]
            flat[pos] = original + eps
            plus = loss_fn().item()
            flat[pos] = original - eps
            minus = loss_fn().item()
            flat[pos] = original
            numeric = (plus - minus) / (2 * eps)
            analytic = grad.reshape(-1)[pos]
            denom = max(abs(numeric), abs(analytic), floor)
            worst = max(worst, abs(numeric - analytic) / denom)

    return worst
