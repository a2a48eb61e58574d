from collections.abc import Sequence
from logging import getLogger

import numpy as np

from joint_annotator.diffcore import ParamStore, Tensor, embedding_normal, glorot_uniform
from joint_annotator.diffcore import ops
from joint_annotator.misc import ShapeError
from joint_annotator.vars import SOFT_TAG_DIM

logger = getLogger(__name__)


class PosHead:
    """品詞の線形予測層と、NER用・構文解析用の2つのソフト品詞埋め込み行列`W(1)`、`W(2)`です。"""

    def __init__(
        self,
        store: ParamStore,
        dim: int,
        num_tags: int,
        rng: np.random.Generator,
        soft_dim: int = SOFT_TAG_DIM,
        tables: Sequence[int] = (1, 2),
    ):
        self.dim = dim
        self.num_tags = num_tags
        self.soft_dim = soft_dim
        self.weight = store.add("pos.weight", glorot_uniform(rng, dim, num_tags, (dim, num_tags)))
        self.bias = store.add("pos.bias", np.zeros(num_tags))
        self.soft = {
            k: store.add(
                f"pos.soft{k}", glorot_uniform(rng, num_tags, soft_dim, (soft_dim, num_tags))
            )
            for k in tables
        }

    def forward(self, e: Tensor) -> tuple[Tensor, Tensor]:
        """`logits = e·W + b`と、その行ごとのsoftmax`p`を返します。"""
        if e.data.ndim != 2 or e.shape[1] != self.dim:
            raise ShapeError(f"pos_forward: expected (n, {self.dim}), got {e.shape}")
        logits = ops.add(ops.matmul(e, self.weight), self.bias)
        return logits, ops.softmax(logits)

    def loss(self, logits: Tensor, gold: Sequence[int]) -> Tensor:
        return ops.cross_entropy(logits, gold)

    def soft_tags(self, p: Tensor, which: int) -> Tensor:
        """`t(k)_i = W(k) p_i`を全トークン分まとめて`(n, soft_dim)`で返します。"""
        return ops.matmul(p, ops.transpose(self.soft[which]))


def hard_tags(p: Tensor) -> Tensor:
    """`p`の各行を最大確率の品詞のone-hotに置き換えた定数テンソルです。"""
    onehot = np.zeros_like(p.data)
    onehot[np.arange(len(p.data)), p.data.argmax(axis=1)] = 1.0
    return Tensor(onehot)


class TagEmbedding:
    """外部の品詞タガーが付けた品詞IDを`soft_dim`次元に埋め込む表です。単独学習の構文解析器が使います。"""

    def __init__(
        self, store: ParamStore, num_tags: int, rng: np.random.Generator, dim: int = SOFT_TAG_DIM
    ):
        self.num_tags = num_tags
        self.dim = dim
        self.table = store.add("pos.embedding", embedding_normal(rng, (num_tags, dim)))

    def forward(self, tags: Sequence[int]) -> Tensor:
        return ops.embedding_gather(self.table, tags)
