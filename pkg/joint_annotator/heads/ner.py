from collections.abc import Sequence
from logging import getLogger
from typing import NamedTuple

import numpy as np
from scipy import special

from joint_annotator.diffcore import ParamStore, Tensor, glorot_uniform, record
from joint_annotator.diffcore import ops
from joint_annotator.misc import ShapeError
from joint_annotator.vars import SOFT_TAG_DIM

logger = getLogger(__name__)


class NerPath(NamedTuple):
    labels: list[int]
    score: float


def _check_crf_shapes(h: np.ndarray, transitions: np.ndarray, start: np.ndarray, end: np.ndarray):
    if h.ndim != 2 or h.shape[0] == 0:
        raise ShapeError(f"crf: emissions must be (n >= 1, K), got {h.shape}")
    k = h.shape[1]
    if transitions.shape != (k, k) or start.shape != (k,) or end.shape != (k,):
        raise ShapeError(
            f"crf: {k} labels vs transitions {transitions.shape},"
            f" start {start.shape}, end {end.shape}"
        )


def _forward_scores(h: np.ndarray, transitions: np.ndarray, start: np.ndarray) -> np.ndarray:
    alpha = np.empty_like(h)
    alpha[0] = start + h[0]
    for t in range(1, len(h)):
        alpha[t] = special.logsumexp(alpha[t - 1][:, None] + transitions, axis=0) + h[t]
    return alpha


def _backward_scores(h: np.ndarray, transitions: np.ndarray, end: np.ndarray) -> np.ndarray:
    beta = np.empty_like(h)
    beta[-1] = end
    for t in range(len(h) - 2, -1, -1):
        beta[t] = special.logsumexp(transitions + (h[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def path_score(
    h: np.ndarray,
    transitions: np.ndarray,
    start: np.ndarray,
    end: np.ndarray,
    labels: Sequence[int],
) -> float:
    y = np.asarray(labels, dtype=np.int64)
    score = start[y[0]] + h[np.arange(len(y)), y].sum() + end[y[-1]]
    return float(score + transitions[y[:-1], y[1:]].sum())


def log_partition(
    h: np.ndarray, transitions: np.ndarray, start: np.ndarray, end: np.ndarray
) -> float:
    _check_crf_shapes(h, transitions, start, end)
    return float(special.logsumexp(_forward_scores(h, transitions, start)[-1] + end))


def crf_nll(
    h: Tensor, transitions: Tensor, start: Tensor, end: Tensor, gold: Sequence[int]
) -> Tensor:
    """線形連鎖CRFの負の対数尤度`logZ − score(gold)`です。
    勾配は前向き・後ろ向きアルゴリズムで求めた周辺確率から正解の出現数を引いたものになります。"""
    x, a, s, e = h.data, transitions.data, start.data, end.data
    _check_crf_shapes(x, a, s, e)
    y = np.asarray(gold, dtype=np.int64)
    n, k = x.shape
    if y.shape != (n,) or y.min() < 0 or y.max() >= k:
        raise ShapeError(f"crf_nll: gold path {list(y)} invalid for emissions {x.shape}")

    alpha = _forward_scores(x, a, s)
    log_z = special.logsumexp(alpha[-1] + e)
    nll = log_z - path_score(x, a, s, e, y)

    def _backward(g: np.ndarray):
        beta = _backward_scores(x, a, e)
        unary = np.exp(alpha + beta - log_z)
        pair = np.zeros_like(a)
        for t in range(n - 1):
            pair += np.exp(
                alpha[t][:, None] + a + (x[t + 1] + beta[t + 1])[None, :] - log_z
            )
        gh = unary.copy()
        gh[np.arange(n), y] -= 1.0
        np.add.at(pair, (y[:-1], y[1:]), -1.0)
        gs, ge = unary[0].copy(), unary[-1].copy()
        gs[y[0]] -= 1.0
        ge[y[-1]] -= 1.0
        c = float(g)
        return gh * c, pair * c, gs * c, ge * c

    return record("crf_nll", (h, transitions, start, end), np.asarray(nll), _backward)


def crf_viterbi(
    h: np.ndarray, transitions: np.ndarray, start: np.ndarray, end: np.ndarray
) -> NerPath:
    """最大スコアのラベル列を求めます。同点の場合は各時点で小さいラベルIDを選びます。"""
    _check_crf_shapes(h, transitions, start, end)
    n = len(h)
    delta = start + h[0]
    pointers = np.zeros((n, h.shape[1]), dtype=np.int64)
    for t in range(1, n):
        candidates = delta[:, None] + transitions
        pointers[t] = candidates.argmax(axis=0)
        delta = candidates.max(axis=0) + h[t]
    delta = delta + end

    best = int(delta.argmax())
    labels = [best]
    for t in range(n - 1, 0, -1):
        best = int(pointers[t, best])
        labels.append(best)
    labels.reverse()
    return NerPath(labels, float(delta.max()))


class NerHead:
    """ソフト品詞埋め込み`t(1)`を連結した入力からの放射スコア層と、線形連鎖CRFです。"""

    def __init__(
        self,
        store: ParamStore,
        dim: int,
        num_labels: int,
        rng: np.random.Generator,
        soft_dim: int = SOFT_TAG_DIM,
    ):
        self.dim = dim
        self.soft_dim = soft_dim
        self.num_labels = num_labels
        width = dim + soft_dim
        self.weight = store.add(
            "ner.weight", glorot_uniform(rng, width, num_labels, (width, num_labels))
        )
        self.bias = store.add("ner.bias", np.zeros(num_labels))
        self.transitions = store.add("ner.transitions", np.zeros((num_labels, num_labels)))
        self.start = store.add("ner.start", np.zeros(num_labels))
        self.end = store.add("ner.end", np.zeros(num_labels))

    def emissions(self, e: Tensor, t1: Tensor | None) -> Tensor:
        """`t1`が`None`なら品詞埋め込みなしで`e`だけから計算します（`soft_dim=0`で作った場合）。"""
        parts = [e] if t1 is None else [e, t1]
        if any(p.data.ndim != 2 or p.shape[0] != e.shape[0] for p in parts):
            raise ShapeError(f"ner_emissions: row mismatch {[p.shape for p in parts]}")
        expected = [self.dim, self.soft_dim] if self.soft_dim else [self.dim]
        if [p.shape[1] for p in parts] != expected:
            raise ShapeError(
                f"ner_emissions: expected widths ({self.dim}, {self.soft_dim}),"
                f" got {[p.shape[1] for p in parts]}"
            )
        v = e if t1 is None else ops.concat(parts)
        return ops.add(ops.matmul(v, self.weight), self.bias)

    def loss(self, h: Tensor, gold: Sequence[int]) -> Tensor:
        return crf_nll(h, self.transitions, self.start, self.end, gold)

    def decode(self, h: Tensor) -> NerPath:
        return crf_viterbi(h.data, self.transitions.data, self.start.data, self.end.data)
