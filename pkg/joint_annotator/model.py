import dataclasses
import os
from collections.abc import Callable, Sequence
from logging import getLogger

import numpy as np

from joint_annotator.corpus import Sentence, Task, Token, Vocabs
from joint_annotator.diffcore import ParamStore, Tensor
from joint_annotator.diffcore import ops
from joint_annotator.encoder import BpeModel, EncoderConfig, build_encoder
from joint_annotator.heads import DepHead, NerHead, PosHead, TagEmbedding, hard_tags
from joint_annotator.metrics import repair_bio
from joint_annotator.misc import ConfigError, VocabError, finite_guard
from joint_annotator.vars import FFNN_DIM, MERGES_FILE, SOFT_TAG_DIM

logger = getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = EncoderConfig()
    soft_dim: int = SOFT_TAG_DIM
    ffnn_dim: int = FFNN_DIM
    hard_pos_tags: bool = False
    pos_for_dep: bool = True
    task: Task = Task.JOINT

    def __post_init__(self):
        if self.soft_dim <= 0 or self.ffnn_dim <= 0:
            raise ConfigError(
                f"soft_dim and ffnn_dim must be positive, got {self.soft_dim}, {self.ffnn_dim}"
            )

    @property
    def tasks(self) -> frozenset[Task]:
        return self.task.layers


class JointModel:
    """エンコーダの上に品詞・固有表現・係り受けの3つの層を積んだ同時学習モデルです。
    品詞の確率分布からソフト品詞埋め込みを作り、NER層と構文解析層に渡します。

    `config.task`が`Task.JOINT`以外のときは、その層だけを持つ単独学習のモデルになります。
    品詞・NERのモデルは品詞埋め込みを使わず、構文解析のモデルは外部のタガーが付けた品詞
    （入力文の品詞列）を`TagEmbedding`で埋め込んで使います。"""

    def __init__(
        self,
        vocabs: Vocabs,
        merges: Sequence[tuple[str, str]],
        config: ModelConfig = ModelConfig(),
        seed: int = 0,
    ):
        tasks = config.tasks
        required = {
            "pos": Task.POS in tasks or config.task is Task.DEP,
            "ner": Task.NER in tasks,
            "deprel": Task.DEP in tasks,
        }
        for name, needed in required.items():
            if needed and len(getattr(vocabs, name)) == 0:
                raise VocabError(f"JointModel: {name} vocab is empty")

        self.vocabs = vocabs
        self.config = config
        self.store = ParamStore()
        self.bpe = BpeModel(merges, vocabs.subword)

        rng = np.random.default_rng(seed)
        d, soft = config.encoder.dim, config.soft_dim
        joint = config.task is Task.JOINT
        self.encoder = build_encoder(self.store, self.bpe, config.encoder, rng, vocabs.word)

        self.pos: PosHead | None = None
        self.ner: NerHead | None = None
        self.dep: DepHead | None = None
        self.tag_embedding: TagEmbedding | None = None
        if Task.POS in tasks:
            tables = ((1, 2) if config.pos_for_dep else (1,)) if joint else ()
            self.pos = PosHead(self.store, d, len(vocabs.pos), rng, soft, tables=tables)
        if Task.NER in tasks:
            self.ner = NerHead(self.store, d, len(vocabs.ner), rng, soft if joint else 0)
        if config.task is Task.DEP:
            self.tag_embedding = TagEmbedding(self.store, len(vocabs.pos), rng, soft)
        if Task.DEP in tasks:
            dep_soft = soft if self.tag_embedding is not None or config.pos_for_dep else 0
            self.dep = DepHead(
                self.store, d, len(vocabs.deprel), rng, dep_soft, config.ffnn_dim
            )
        logger.debug(
            f"JointModel({seed=}, task={config.task.value}): {len(self.store)} parameter tensors"
        )

    @property
    def tasks(self) -> frozenset[Task]:
        return self.config.tasks

    def _soft_tags(self, p: Tensor, which: int) -> Tensor:
        return self.pos.soft_tags(  # type: ignore
            hard_tags(p) if self.config.hard_pos_tags else p, which
        )

    def _ner_input(self, e: Tensor) -> Tensor | None:
        if self.config.task is not Task.JOINT:
            return None
        _, p = self.pos.forward(e)  # type: ignore
        return self._soft_tags(p, 1)

    def _dep_input(self, e: Tensor, sentence: Sentence) -> Tensor | None:
        if self.tag_embedding is not None:
            if not sentence.has(Task.POS):
                raise ConfigError(
                    "dep model needs POS tags on its input; tag the sentences with a POS model"
                )
            tags = [self.vocabs.pos.encode(t) for t in sentence.pos_tags]
            return self.tag_embedding.forward(tags)
        if not self.config.pos_for_dep:
            return None
        _, p = self.pos.forward(e)  # type: ignore
        return self._soft_tags(p, 2)

    @finite_guard
    def pos_loss(self, sentence: Sentence) -> Tensor:
        logits, _ = self.pos.forward(self.encoder.encode(sentence))  # type: ignore
        return self.pos.loss(  # type: ignore
            logits, [self.vocabs.pos.encode(t) for t in sentence.pos_tags]
        )

    @finite_guard
    def ner_loss(self, sentence: Sentence) -> Tensor:
        e = self.encoder.encode(sentence)
        h = self.ner.emissions(e, self._ner_input(e))  # type: ignore
        return self.ner.loss(  # type: ignore
            h, [self.vocabs.ner.encode(t) for t in sentence.ner_labels]
        )

    @finite_guard
    def dep_loss(self, sentence: Sentence) -> Tensor:
        e = self.encoder.encode(sentence)
        dep: DepHead = self.dep  # type: ignore
        reprs = dep.parser_reprs(e, self._dep_input(e, sentence))
        arcs = dep.arc_scores(reprs)
        labels = dep.label_scores(reprs, sentence.heads)
        relations = [self.vocabs.deprel.encode(r) for r in sentence.deprels]
        return dep.loss(arcs, labels, sentence.heads, relations)

    def task_loss(self, task: Task, sentences: Sequence[Sentence]) -> Tensor:
        """文ごとの損失の和を、バッチ内の文数で割った平均です。"""
        if task not in self.tasks:
            raise ConfigError(
                f"task_loss: a {self.config.task.value} model has no {task.value} layer"
            )
        if not sentences:
            raise ValueError(f"task_loss: empty {task.value} batch")
        per_sentence: Callable[[Sentence], Tensor] = {
            Task.POS: self.pos_loss,
            Task.NER: self.ner_loss,
            Task.DEP: self.dep_loss,
        }[task]
        return ops.scale(ops.total([per_sentence(s) for s in sentences]), 1.0 / len(sentences))

    def annotate(self, sentence: Sentence) -> Sentence:
        """語形だけを使って、品詞（`p`のargmax）、固有表現（Viterbi）、係り受け（最大全域木）を付与した文を返します。
        単独学習のモデルは自分の層だけを付けます。構文解析のモデルは入力文の品詞をそのまま残します。"""
        e = self.encoder.encode(sentence)
        n = len(sentence)
        tags: list[str | None] = [None] * n
        labels: list[str | None] = [None] * n
        heads: list[int | None] = [None] * n
        relations: list[str | None] = [None] * n

        if self.pos is not None:
            _, p = self.pos.forward(e)
            tags = [self.vocabs.pos.decode(int(i)) for i in p.data.argmax(axis=1)]
        elif self.tag_embedding is not None:
            tags = [t.pos for t in sentence]
        if self.ner is not None:
            path = self.ner.decode(self.ner.emissions(e, self._ner_input(e)))
            labels = repair_bio([self.vocabs.ner.decode(i) for i in path.labels])  # type: ignore
        if self.dep is not None:
            tree = self.dep.decode(self.dep.parser_reprs(e, self._dep_input(e, sentence)))
            heads = list(tree.heads)
            relations = [self.vocabs.deprel.decode(r) for r in tree.relations]

        tokens = tuple(
            Token(i, form, tag, label, head, rel)
            for i, (form, tag, label, head, rel) in enumerate(
                zip(sentence.forms, tags, labels, heads, relations), start=1
            )
        )
        return Sentence(tokens, self.tasks | ({Task.POS} if self.tag_embedding else set()))

    def save(self, directory: str):
        os.makedirs(directory, exist_ok=True)
        self.vocabs.save(directory)
        self.bpe.save(os.path.join(directory, MERGES_FILE))
        self.store.save(directory)

    @classmethod
    def load(cls, directory: str, config: ModelConfig) -> "JointModel":
        vocabs = Vocabs.load(directory)
        merges = BpeModel.load(os.path.join(directory, MERGES_FILE), vocabs.subword).merges
        model = cls(vocabs, merges, config)
        model.store.load(directory)
        return model
