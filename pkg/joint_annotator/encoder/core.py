import dataclasses
import math
from enum import Enum
from logging import getLogger
from typing import TYPE_CHECKING, Protocol

import numpy as np

from joint_annotator.diffcore import ParamStore, Tensor, embedding_normal, glorot_uniform
from joint_annotator.diffcore import ops
from joint_annotator.encoder.bpe import BpeModel, SubwordSegmentation
from joint_annotator.misc import ConfigError, ShapeError
from joint_annotator.vars import BPE_MERGES, ENCODER_DIM, ENCODER_LAYERS

if TYPE_CHECKING:
    from joint_annotator.corpus.core import Sentence
    from joint_annotator.corpus.vocab import Vocab

logger = getLogger(__name__)


class EncoderKind(Enum):
    DESK = "desk"
    PRECOMPUTED = "precomputed"


@dataclasses.dataclass(frozen=True)
class EncoderConfig:
    kind: EncoderKind = EncoderKind.DESK
    dim: int = ENCODER_DIM
    layers: int = ENCODER_LAYERS
    merges: int = BPE_MERGES
    embeddings_path: str | None = None

    def __post_init__(self):
        if self.dim <= 0:
            raise ConfigError(f"encoder dim must be positive, got {self.dim}")
        if self.layers < 0 or self.merges < 0:
            raise ConfigError("encoder layers and merges must be non-negative")
        if self.kind is EncoderKind.PRECOMPUTED and not self.embeddings_path:
            raise ConfigError("precomputed encoder needs embeddings_path")


class Encoder(Protocol):
    dim: int

    def encode(self, sentence: "Sentence") -> Tensor:
        ...


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """位置`pos`の偶数次元に`sin(pos / 10000^(2i/d))`、奇数次元に`cos`を置いた位置信号です。"""
    positions = np.arange(length)[:, None]
    rates = 1.0 / np.power(10000.0, (2 * (np.arange(dim) // 2)) / dim)
    angles = positions * rates[None, :]
    signal = np.zeros((length, dim))
    signal[:, 0::2] = np.sin(angles[:, 0::2])
    signal[:, 1::2] = np.cos(angles[:, 1::2])
    return signal


def _first_positions(seg: SubwordSegmentation) -> np.ndarray:
    scatter = np.zeros((len(seg.ids), len(seg.first)))
    scatter[list(seg.first), np.arange(len(seg.first))] = 1.0
    return scatter


class DeskEncoder:
    """サブワード埋め込みと位置信号に、単一ヘッドの自己注意層（残差＋tanhの混合）を重ねた文脈エンコーダです。
    各語は先頭サブワードの隠れ状態で表します。
    語彙`words`を渡すと、語ごとの埋め込みを先頭サブワードの位置に足します。語彙にない語（出現回数が
    `min_count`未満の語を含む）は`<unk>`の埋め込みになります。"""

    def __init__(
        self,
        store: ParamStore,
        bpe: BpeModel,
        config: EncoderConfig,
        rng: np.random.Generator,
        words: "Vocab | None" = None,
    ):
        self.bpe = bpe
        self.words = words
        self.dim = d = config.dim
        self.layers = config.layers
        self.embedding = store.add(
            "encoder.embedding", embedding_normal(rng, (len(bpe.vocab), d))
        )
        self.word_embedding = (
            None
            if words is None
            else store.add("encoder.word_embedding", embedding_normal(rng, (len(words), d)))
        )
        self.blocks: list[dict[str, Tensor]] = []
        for i in range(config.layers):
            prefix = f"encoder.layer{i}"
            self.blocks.append(
                {
                    key: store.add(f"{prefix}.{key}", glorot_uniform(rng, d, d, (d, d)))
                    for key in ("query", "key", "value", "mix")
                }
                | {"mix_bias": store.add(f"{prefix}.mix_bias", np.zeros(d))}
            )

    def segment(self, sentence: "Sentence") -> SubwordSegmentation:
        return self.bpe.segment(sentence)

    def _word_rows(self, sentence: "Sentence") -> Tensor:
        ids = [self.words.encode(form) for form in sentence.forms]  # type: ignore
        return ops.embedding_gather(self.word_embedding, ids)  # type: ignore

    def encode(self, sentence: "Sentence") -> Tensor:
        if len(sentence.tokens) == 0:
            raise ShapeError("encode: empty sentence")
        seg = self.segment(sentence)
        x = ops.add(
            ops.embedding_gather(self.embedding, seg.ids),
            sinusoidal_positions(len(seg.ids), self.dim),
        )
        if self.word_embedding is not None:
            x = ops.add(x, ops.matmul(_first_positions(seg), self._word_rows(sentence)))
        scale = 1.0 / math.sqrt(self.dim)
        for block in self.blocks:
            q = ops.matmul(x, block["query"])
            k = ops.matmul(x, block["key"])
            v = ops.matmul(x, block["value"])
            attention = ops.softmax(ops.scale(ops.matmul(q, ops.transpose(k)), scale))
            h = ops.add(x, ops.matmul(attention, v))
            x = ops.add(h, ops.tanh(ops.add(ops.matmul(h, block["mix"]), block["mix_bias"])))
        return ops.take_rows(x, seg.first)


class PrecomputedEncoder:
    """ファイルから読み込んだ語ごとの固定ベクトルを返すエンコーダです。学習対象のパラメータは持ちません。"""

    def __init__(self, path: str, dim: int):
        self.dim = dim
        self.vectors: dict[str, np.ndarray] = {}
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                word, *values = line.split()
                if len(values) != dim:
                    raise ShapeError(
                        f"{path}:{line_no}: expected {dim} values for {word!r}, got {len(values)}"
                    )
                self.vectors[word] = np.array([float(v) for v in values])
        logger.info(f"PrecomputedEncoder({path=}): {len(self.vectors)} vectors, {dim=}")

    def encode(self, sentence: "Sentence") -> Tensor:
        if len(sentence.tokens) == 0:
            raise ShapeError("encode: empty sentence")
        missing = np.zeros(self.dim)
        return Tensor(np.stack([self.vectors.get(w, missing) for w in sentence.forms]))


def build_encoder(
    store: ParamStore,
    bpe: BpeModel,
    config: EncoderConfig,
    rng: np.random.Generator,
    words: "Vocab | None" = None,
) -> Encoder:
    match config.kind:
        case EncoderKind.DESK:
            return DeskEncoder(store, bpe, config, rng, words)
        case EncoderKind.PRECOMPUTED:
            return PrecomputedEncoder(config.embeddings_path, config.dim)  # type: ignore
