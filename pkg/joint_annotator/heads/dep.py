import dataclasses
from collections.abc import Sequence
from logging import getLogger
from typing import NamedTuple

import numpy as np

from joint_annotator.diffcore import ParamStore, Tensor, embedding_normal, glorot_uniform
from joint_annotator.diffcore import ops
from joint_annotator.heads.mst import mst_decode, validate_tree
from joint_annotator.misc import ShapeError
from joint_annotator.vars import FFNN_DIM, SOFT_TAG_DIM

logger = getLogger(__name__)

PROJECTIONS = ("arc_head", "arc_dep", "label_head", "label_dep")


class ParserReprs(NamedTuple):
    """ROOT（0行目）と各トークンの4種類の射影です。いずれも`(n + 1, ffnn_dim)`です。"""

    arc_head: Tensor
    arc_dep: Tensor
    label_head: Tensor
    label_dep: Tensor

    @property
    def length(self) -> int:
        return self.arc_head.shape[0] - 1


@dataclasses.dataclass(frozen=True)
class ArcScores:
    """`tensor`は学習用の`(n, n + 1)`のスコア（行`d - 1`が依存語`d`）、
    `matrix`は同じ値で対角`S[d][d]`を`-inf`にした復号用の配列です。"""

    tensor: Tensor
    matrix: np.ndarray

    @property
    def allowed(self) -> np.ndarray:
        return np.isfinite(self.matrix)


@dataclasses.dataclass(frozen=True)
class DepTree:
    heads: tuple[int, ...]
    relations: tuple[int, ...]

    def __post_init__(self):
        if len(self.heads) != len(self.relations):
            raise ShapeError(f"DepTree: {len(self.heads)} heads vs {len(self.relations)} relations")
        validate_tree(self.heads)


def _log_distance(n: int) -> np.ndarray:
    # 対角（距離0）は使われないので0で埋める
    distance = np.abs(np.arange(n + 1)[None, :] - np.arange(n + 1)[:, None]).astype(np.float64)
    np.fill_diagonal(distance, 1.0)
    return np.log(distance)


def _ordering(n: int) -> np.ndarray:
    return np.sign(np.arange(n + 1)[None, :] - np.arange(n + 1)[:, None]).astype(np.float64)


class DepHead:
    """`z_i = e_i ∘ t(2)_i`からの4つのFFNN射影、距離・語順項つきのbiaffine弧スコア、
    biaffineのラベルスコアと、それらの損失・復号です。"""

    def __init__(
        self,
        store: ParamStore,
        dim: int,
        num_relations: int,
        rng: np.random.Generator,
        soft_dim: int = SOFT_TAG_DIM,
        ffnn_dim: int = FFNN_DIM,
    ):
        self.dim = dim
        self.soft_dim = soft_dim
        self.ffnn_dim = f = ffnn_dim
        self.num_relations = r = num_relations
        width = dim + soft_dim

        self.root = store.add("dep.root", embedding_normal(rng, (1, width)))
        self.ffnn = {
            name: (
                store.add(f"dep.{name}.weight", glorot_uniform(rng, width, f, (width, f))),
                store.add(f"dep.{name}.bias", np.zeros(f)),
            )
            for name in PROJECTIONS
        }
        self.arc_weight = store.add("dep.arc.weight", glorot_uniform(rng, f, f, (f, f)))
        self.arc_head_bias = store.add("dep.arc.head_bias", np.zeros((f, 1)))
        self.arc_order = store.add("dep.arc.order", glorot_uniform(rng, f, f, (f, f)))
        self.arc_distance = store.add("dep.arc.distance", glorot_uniform(rng, f, f, (f, f)))
        self.label_bilinear = store.add("dep.label.bilinear", np.zeros((f, r, f)))
        self.label_weight = store.add("dep.label.weight", glorot_uniform(rng, 2 * f, r, (2 * f, r)))
        self.label_bias = store.add("dep.label.bias", np.zeros(r))

    def parser_reprs(self, e: Tensor, t2: Tensor | None) -> ParserReprs:
        """`t2`が`None`なら品詞埋め込みなしで`z_i = e_i`とします（`soft_dim=0`で作った場合）。"""
        parts = [e] if t2 is None else [e, t2]
        if any(p.data.ndim != 2 or p.shape[0] != e.shape[0] for p in parts):
            raise ShapeError(f"parser_reprs: row mismatch {[p.shape for p in parts]}")
        if sum(p.shape[1] for p in parts) != self.dim + self.soft_dim:
            raise ShapeError(
                f"parser_reprs: expected width {self.dim + self.soft_dim},"
                f" got {[p.shape[1] for p in parts]}"
            )
        z = ops.concat([self.root, ops.concat(parts)], axis=0)
        return ParserReprs(
            *(
                ops.relu(ops.add(ops.matmul(z, weight), bias))
                for weight, bias in (self.ffnn[name] for name in PROJECTIONS)
            )
        )

    def _pairwise(self, left: Tensor, weight: Tensor, right: Tensor) -> Tensor:
        return ops.matmul(ops.matmul(left, weight), ops.transpose(right))

    def arc_scores(self, reprs: ParserReprs) -> ArcScores:
        """`S[d][h]`を依存語`d = 1..n`、主辞候補`h = 0..n`について計算します。
        biaffine項と主辞バイアス項に、`sgn(h − d)`を掛けた語順項を足し、
        `ln|h − d|`とsoftplusで予測した対数距離の二乗誤差を引きます。"""
        n = reprs.length
        dep, head = reprs.arc_dep, reprs.arc_head

        biaffine = self._pairwise(dep, self.arc_weight, head)
        head_bias = ops.matmul(
            np.ones((n + 1, 1)), ops.transpose(ops.matmul(head, self.arc_head_bias))
        )
        ordering = ops.mul(_ordering(n), self._pairwise(dep, self.arc_order, head))
        mismatch = ops.sub(
            _log_distance(n), ops.softplus(self._pairwise(dep, self.arc_distance, head))
        )
        full = ops.sub(
            ops.add(ops.add(biaffine, head_bias), ordering), ops.mul(mismatch, mismatch)
        )
        scores = ops.take_rows(full, np.arange(1, n + 1))

        matrix = scores.data.copy()
        matrix[np.arange(n), np.arange(1, n + 1)] = -np.inf
        return ArcScores(scores, matrix)

    def label_scores(self, reprs: ParserReprs, heads: Sequence[int]) -> Tensor:
        """弧`heads[d - 1] → d`ごとの関係ラベルのスコア`(n, R)`です。"""
        n = reprs.length
        if len(heads) != n:
            raise ShapeError(f"label_scores: {len(heads)} heads for {n} tokens")
        dep = ops.take_rows(reprs.label_dep, np.arange(1, n + 1))
        head = ops.take_rows(reprs.label_head, heads)
        return ops.add(
            ops.add(
                ops.bilinear(dep, self.label_bilinear, head),
                ops.matmul(ops.concat([dep, head]), self.label_weight),
            ),
            self.label_bias,
        )

    def loss(
        self,
        arcs: ArcScores,
        labels: Tensor,
        gold_heads: Sequence[int],
        gold_relations: Sequence[int],
    ) -> Tensor:
        """弧の主辞選択（対角を除く）と正解の弧でのラベル選択の交差エントロピーの和です。
        `labels`は正解の主辞で計算したラベルスコアを渡します。"""
        validate_tree(gold_heads)
        return ops.add(
            ops.cross_entropy(arcs.tensor, gold_heads, mask=arcs.allowed),
            ops.cross_entropy(labels, gold_relations),
        )

    def decode(self, reprs: ParserReprs) -> DepTree:
        arcs = self.arc_scores(reprs)
        heads = mst_decode(arcs.matrix)
        relations = label_decode(self.label_scores(reprs, heads))
        return DepTree(tuple(heads), tuple(relations))


def label_decode(scores: Tensor) -> list[int]:
    """各弧で最大スコアのラベルIDです。同点なら小さいIDになります。"""
    return [int(i) for i in scores.data.argmax(axis=1)]
