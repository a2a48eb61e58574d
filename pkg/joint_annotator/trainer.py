import dataclasses
import itertools
import json
import math
import os
from collections.abc import Sequence
from logging import getLogger
from typing import Any, NamedTuple

import numpy as np
from yaml import safe_dump, safe_load

from joint_annotator.corpus import Corpus, Sentence, Task
from joint_annotator.corpus.vocab import build_vocabs
from joint_annotator.diffcore import Graph, adamw_step, clip_grad_norm
from joint_annotator.diffcore import ops
from joint_annotator.encoder import EncoderConfig, EncoderKind
from joint_annotator.leakage import Splits, audit
from joint_annotator.metrics import (
    Arcs,
    SELECTION_METRICS,
    Scores,
    attachment_scores,
    ner_f1,
    pos_accuracy,
    punct_mask,
)
from joint_annotator.misc import CheckpointError, ConfigError, finite_guard
from joint_annotator.model import JointModel, ModelConfig
from joint_annotator.vars import (
    ADAM_EPS,
    BATCH_SIZE,
    BETAS,
    CONFIG_FILE,
    EPOCHS,
    LAMBDA_NER,
    LAMBDA_POS,
    LEARNING_RATE,
    SCORES_FILE,
    WEIGHT_DECAY,
)
from joint_annotator.workers import run_all

logger = getLogger(__name__)
steps_logger = getLogger(f"{__name__}.steps")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    lambda_pos: float = LAMBDA_POS
    lambda_ner: float = LAMBDA_NER
    lr: float = LEARNING_RATE
    batch_size: int = BATCH_SIZE
    epochs: int = EPOCHS
    seed: int = 0
    grid_lr: tuple[float, ...] = ()
    grid_lambda_pos: tuple[float, ...] = ()
    grid_lambda_ner: tuple[float, ...] = ()
    eval_each_epoch: bool = True
    max_grad_norm: float | None = None
    betas: tuple[float, float] = BETAS
    eps: float = ADAM_EPS
    weight_decay: float = WEIGHT_DECAY
    min_count: int = 1
    exclude_punct: bool = False
    workers: int = 1
    model: ModelConfig = ModelConfig()

    def __post_init__(self):
        if self.lambda_pos < 0 or self.lambda_ner < 0:
            raise ConfigError(
                f"lambda_pos and lambda_ner must be >= 0, got {self.lambda_pos}, {self.lambda_ner}"
            )
        if self.lambda_pos + self.lambda_ner > 1:
            raise ConfigError(
                f"lambda_pos + lambda_ner must be <= 1, got {self.lambda_pos + self.lambda_ner}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ConfigError(f"max_grad_norm must be positive, got {self.max_grad_norm}")
        if self.min_count < 1:
            raise ConfigError(f"min_count must be >= 1, got {self.min_count}")

    @property
    def lambda_dep(self) -> float:
        return 1.0 - self.lambda_pos - self.lambda_ner

    def to_dict(self) -> dict[str, Any]:
        values = dataclasses.asdict(self)
        for key in ("grid_lr", "grid_lambda_pos", "grid_lambda_ner", "betas"):
            values[key] = list(values[key])
        values["model"]["encoder"]["kind"] = self.model.encoder.kind.value
        values["model"]["task"] = self.model.task.value
        return values

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "TrainConfig":
        values = dict(values)
        model = dict(values.pop("model", None) or {})
        encoder = dict(model.pop("encoder", None) or {})
        try:
            if "kind" in encoder:
                encoder["kind"] = EncoderKind(encoder["kind"])
            if "task" in model:
                model["task"] = Task(model["task"])
            # YAMLでは`1e-5`が文字列として読まれる
            for key in ("lambda_pos", "lambda_ner", "lr", "eps", "weight_decay", "max_grad_norm"):
                if values.get(key) is not None:
                    values[key] = float(values[key])
            for key in ("grid_lr", "grid_lambda_pos", "grid_lambda_ner", "betas"):
                if key in values:
                    values[key] = tuple(float(v) for v in values[key])
            return cls(**values, model=ModelConfig(**model, encoder=EncoderConfig(**encoder)))
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid training configuration: {err}")

    @classmethod
    def load(cls, path: str) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(safe_load(f) or {})

    def save(self, path: str):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            safe_dump(self.to_dict(), f, allow_unicode=True, sort_keys=True)


class LossBreakdown(NamedTuple):
    pos: float
    ner: float
    dep: float
    combined: float


Batches = tuple[list[Sentence], list[Sentence], list[Sentence]]


def make_epoch_schedule(
    pos: Corpus, ner: Corpus, dep: Corpus, batch_size: int, rng: np.random.Generator
) -> list[Batches]:
    """最大のコーパスをシャッフルして1回ずつ使い、小さいコーパスは並べ替えた後に復元抽出で同じ文数まで補います。
    各ステップは3つのタスクのバッチを1つずつ持ち、ステップ数は`⌈最大のコーパスの文数 / batch_size⌉`です。"""
    corpora = (pos, ner, dep)
    for task, corpus in zip(("pos", "ner", "dep"), corpora):
        if len(corpus) == 0:
            raise ConfigError(f"make_epoch_schedule: {task} training corpus is empty")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")

    size = max(len(c) for c in corpora)
    streams: list[np.ndarray] = []
    for corpus in corpora:
        order = rng.permutation(len(corpus))
        if len(corpus) < size:
            order = np.concatenate([order, rng.integers(0, len(corpus), size - len(corpus))])
        streams.append(order)

    steps = math.ceil(size / batch_size)
    return [
        tuple(  # type: ignore
            [corpus[int(i)] for i in stream[step * batch_size : (step + 1) * batch_size]]
            for corpus, stream in zip(corpora, streams)
        )
        for step in range(steps)
    ]


@finite_guard
def train_step(model: JointModel, batches: Batches, config: TrainConfig) -> LossBreakdown:
    """3つのバッチの重み付き和`λ1·L_POS + λ2·L_NER + (1 − λ1 − λ2)·L_DEP`で1回だけ逆伝播し、AdamWで更新します。"""
    pos_batch, ner_batch, dep_batch = batches
    with Graph() as graph:
        pos_loss = model.task_loss(Task.POS, pos_batch)
        ner_loss = model.task_loss(Task.NER, ner_batch)
        dep_loss = model.task_loss(Task.DEP, dep_batch)
        combined = ops.add(
            ops.add(ops.scale(pos_loss, config.lambda_pos), ops.scale(ner_loss, config.lambda_ner)),
            ops.scale(dep_loss, config.lambda_dep),
        )
        graph.backward(combined)

    if config.max_grad_norm is not None:
        clip_grad_norm(model.store, config.max_grad_norm)
    adamw_step(model.store, config.lr, config.betas, config.eps, config.weight_decay)
    model.store.zero_grad()

    breakdown = LossBreakdown(pos_loss.item(), ner_loss.item(), dep_loss.item(), combined.item())
    steps_logger.debug(f"train_step(step={model.store.step}): {breakdown}")
    return breakdown


def predict(model: JointModel, corpus: Corpus, workers: int = 1) -> list[Sentence]:
    return run_all(model.annotate, corpus.sentences, workers)


def restrict(
    model: JointModel, pos: Corpus, ner: Corpus, dep: Corpus
) -> tuple[Corpus, Corpus, Corpus]:
    """モデルが持たない層のコーパスを空にします。"""
    pos, ner, dep = (
        c if c.task in model.tasks else Corpus.of((), c.task) for c in (pos, ner, dep)
    )
    return pos, ner, dep


def dep_inputs_for(
    model: JointModel, dep: Corpus, tagger: JointModel | None, workers: int = 1
) -> Corpus | None:
    """単独学習の構文解析モデルに渡す、`tagger`で品詞を付け直した入力です。
    ほかのモデルでは`None`です。"""
    if model.tag_embedding is None or len(dep) == 0:
        return None
    if tagger is None:
        raise ConfigError("a dep model needs a POS tagger to tag its input")
    return retag(dep, tagger, workers)


def score_predictions(
    pos: Corpus,
    ner: Corpus,
    dep: Corpus,
    pos_pred: Sequence[Sentence],
    ner_pred: Sequence[Sentence],
    dep_pred: Sequence[Sentence],
    *,
    exclude_punct: bool = False,
) -> Scores:
    """正解コーパスと注釈済みの文から、品詞正解率、NERのF1、UAS/LASを求めます。"""
    attachment = attachment_scores(
        [Arcs(s.heads, s.deprels) for s in dep],
        [Arcs(s.heads, s.deprels) for s in dep_pred],
        punct_mask([s.pos_tags for s in dep]) if exclude_punct else None,
    )
    return Scores(
        pos_accuracy([s.pos_tags for s in pos], [s.pos_tags for s in pos_pred]),
        ner_f1([s.ner_labels for s in ner], [s.ner_labels for s in ner_pred]),
        attachment.uas,
        attachment.las,
    )


def evaluate(
    model: JointModel,
    pos: Corpus,
    ner: Corpus,
    dep: Corpus,
    *,
    workers: int = 1,
    exclude_punct: bool = False,
    dep_inputs: Corpus | None = None,
) -> Scores:
    """各コーパスの語形だけをモデルに注釈させ、品詞正解率、NERのF1、UAS/LASを求めます。
    `dep_inputs`を渡すと、係り受けはその文（外部タガーの品詞つき）を入力にして解析します。"""
    pos, ner, dep = restrict(model, pos, ner, dep)
    return score_predictions(
        pos,
        ner,
        dep,
        predict(model, pos, workers),
        predict(model, ner, workers),
        predict(model, dep if dep_inputs is None or not len(dep) else dep_inputs, workers),
        exclude_punct=exclude_punct,
    )


@dataclasses.dataclass
class Checkpoint:
    model: JointModel
    config: TrainConfig
    scores: Scores
    epoch: int

    def save(self, directory: str):
        """パラメータ、語彙、マージ表、設定、検証スコアをディレクトリに書き出します。内容は実行ごとに同一です。"""
        self.model.save(directory)
        self.config.save(os.path.join(directory, CONFIG_FILE))
        with open(os.path.join(directory, SCORES_FILE), "w", encoding="utf-8", newline="\n") as f:
            json.dump(
                {
                    "epoch": self.epoch,
                    "task": self.config.model.task.value,
                    "scores": self.scores.to_dict(),
                },
                f,
                indent=4,
                sort_keys=True,
            )
            f.write("\n")
        logger.info(f"Checkpoint.save({directory=}): epoch {self.epoch}, {self.scores.to_line()}")

    @classmethod
    def load(cls, directory: str) -> "Checkpoint":
        config_path = os.path.join(directory, CONFIG_FILE)
        if not os.path.isfile(config_path):
            raise CheckpointError(
                f"{directory} does not contain a checkpoint ({CONFIG_FILE} missing)"
            )
        config = TrainConfig.load(config_path)
        model = JointModel.load(directory, config.model)
        with open(os.path.join(directory, SCORES_FILE), "r", encoding="utf-8") as f:
            saved = json.load(f)
        return cls(model, config, Scores.from_dict(saved["scores"]), saved["epoch"])


def _check_valid(*corpora: tuple[str, Corpus]):
    for name, corpus in corpora:
        if len(corpus) == 0:
            raise ConfigError(
                f"train: {name} validation corpus is empty; checkpoint selection needs it"
            )


def train(
    config: TrainConfig,
    pos: Splits,
    ner: Splits,
    dep: Splits,
    tagger: JointModel | None = None,
) -> Checkpoint:
    """各エポックの後に検証データで評価し、品詞正解率・NER F1・LASの平均が最大のチェックポイントを返します。
    `config.model.task`が単独のタスクなら`train_single()`に任せます。"""
    if (task := config.model.task) is not Task.JOINT:
        splits = {Task.POS: pos, Task.NER: ner, Task.DEP: dep}[task]
        return train_single(config, splits, tagger)
    _check_valid(("pos", pos.valid), ("ner", ner.valid), ("dep", dep.valid))

    report = audit(pos, ner, dep, config.workers)
    if report.has_leakage:
        logger.warning("train: POS training data contains NER/DEP validation or test sentences")

    vocabs, merges = build_vocabs(
        [pos.train, ner.train, dep.train], config.min_count, config.model.encoder.merges
    )
    model = JointModel(vocabs, merges, config.model, config.seed)
    rng = np.random.default_rng(config.seed)

    def validate() -> Scores:
        return evaluate(
            model,
            pos.valid,
            ner.valid,
            dep.valid,
            workers=config.workers,
            exclude_punct=config.exclude_punct,
        )

    best_scores, best_epoch = validate(), 0
    best_params = model.store.snapshot()
    logger.info(f"train: epoch 0 (initial) {best_scores.to_line()}")

    for epoch in range(1, config.epochs + 1):
        schedule = make_epoch_schedule(pos.train, ner.train, dep.train, config.batch_size, rng)
        losses = np.array([train_step(model, batches, config) for batches in schedule])
        mean = LossBreakdown(*(float(v) for v in losses.mean(axis=0)))

        line = f"epoch {epoch}: L_POS={mean.pos:.4f} L_NER={mean.ner:.4f} L_DEP={mean.dep:.4f}"
        if not (config.eval_each_epoch or epoch == config.epochs):
            logger.info(line)
            continue

        scores = validate()
        logger.info(f"{line} {scores.to_line()}")
        if scores.average > best_scores.average:
            best_scores, best_epoch = scores, epoch
            best_params = model.store.snapshot()

    model.store.restore(best_params)
    logger.info(f"train: selected epoch {best_epoch}, {best_scores.to_line()}")
    return Checkpoint(model, config, best_scores, best_epoch)


def retag(corpus: Corpus, tagger: JointModel, workers: int = 1) -> Corpus:
    """`tagger`の予測した品詞で各文の品詞列を置き換えます。ほかの注釈はそのまま残します。"""
    if Task.POS not in tagger.tasks:
        raise ConfigError(f"retag: a {tagger.config.task.value} model does not tag POS")
    retagged = [
        Sentence(
            tuple(
                dataclasses.replace(token, pos=tag)
                for token, tag in zip(sentence.tokens, predicted.pos_tags)
            ),
            sentence.annotations | {Task.POS},
        )
        for sentence, predicted in zip(corpus, predict(tagger, corpus, workers))
    ]
    return Corpus.of(retagged, corpus.task)


def make_task_schedule(
    corpus: Corpus, batch_size: int, rng: np.random.Generator
) -> list[list[Sentence]]:
    if len(corpus) == 0:
        raise ConfigError("make_task_schedule: training corpus is empty")
    order = rng.permutation(len(corpus))
    return [
        [corpus[int(i)] for i in order[start : start + batch_size]]
        for start in range(0, len(corpus), batch_size)
    ]


@finite_guard
def train_task_step(
    model: JointModel, task: Task, batch: Sequence[Sentence], config: TrainConfig
) -> float:
    with Graph() as graph:
        loss = model.task_loss(task, batch)
        graph.backward(loss)

    if config.max_grad_norm is not None:
        clip_grad_norm(model.store, config.max_grad_norm)
    adamw_step(model.store, config.lr, config.betas, config.eps, config.weight_decay)
    model.store.zero_grad()
    steps_logger.debug(
        f"train_task_step(step={model.store.step}, task={task.value}): {loss.item():.6f}"
    )
    return loss.item()


def train_single(
    config: TrainConfig, splits: Splits, tagger: JointModel | None = None
) -> Checkpoint:
    """1つのタスクだけを学習し、そのタスクの検証スコア（品詞正解率、NER F1、LAS）でチェックポイントを選びます。
    係り受けの学習では、`tagger`の予測した品詞を学習・検証データに付け直してから入力に使います。"""
    task = config.model.task
    if task is Task.JOINT:
        raise ConfigError("train_single: pick one of pos, ner, dep")
    if len(splits.train) == 0:
        raise ConfigError(f"train: {task.value} training corpus is empty")
    _check_valid((task.value, splits.valid))

    inputs = splits
    if task is Task.DEP:
        if tagger is None:
            raise ConfigError("train: a dep model needs a trained POS tagger")
        inputs = Splits(*(retag(c, tagger, config.workers) for c in splits))

    vocabs, merges = build_vocabs([inputs.train], config.min_count, config.model.encoder.merges)
    if tagger is not None and task is Task.DEP:
        vocabs = vocabs._replace(pos=tagger.vocabs.pos)
    model = JointModel(vocabs, merges, config.model, config.seed)
    rng = np.random.default_rng(config.seed)
    empty = {t: Corpus.of((), t) for t in (Task.POS, Task.NER, Task.DEP)}
    gold = empty | {task: splits.valid}

    def validate() -> tuple[float, Scores]:
        scores = evaluate(
            model,
            gold[Task.POS],
            gold[Task.NER],
            gold[Task.DEP],
            workers=config.workers,
            exclude_punct=config.exclude_punct,
            dep_inputs=inputs.valid if task is Task.DEP else None,
        )
        return scores.metric(task.value), scores

    (best_value, best_scores), best_epoch = validate(), 0
    best_params = model.store.snapshot()
    metric = SELECTION_METRICS[task.value]
    logger.info(f"train_single: {task.value} epoch 0 (initial) {metric}={best_value:.4f}")

    for epoch in range(1, config.epochs + 1):
        schedule = make_task_schedule(inputs.train, config.batch_size, rng)
        loss = float(np.mean([train_task_step(model, task, b, config) for b in schedule]))
        line = f"epoch {epoch}: L_{task.value.upper()}={loss:.4f}"
        if not (config.eval_each_epoch or epoch == config.epochs):
            logger.info(line)
            continue

        value, scores = validate()
        logger.info(f"{line} {metric}={value:.4f}")
        if value > best_value:
            best_value, best_scores, best_epoch = value, scores, epoch
            best_params = model.store.snapshot()

    model.store.restore(best_params)
    logger.info(f"train_single: selected epoch {best_epoch}, {metric}={best_value:.4f}")
    return Checkpoint(model, config, best_scores, best_epoch)


class GridRow(NamedTuple):
    lr: float
    lambda_pos: float
    lambda_ner: float
    scores: Scores


class GridResult(NamedTuple):
    best: tuple[float, float, float]
    checkpoint: Checkpoint
    rows: list[GridRow]

    def to_text(self) -> str:
        header = ("POS", "NER-F1", "UAS", "LAS", "avg")
        lines = [f"{'lr':>10} {'λ1':>6} {'λ2':>6} " + " ".join(f"{h:>8}" for h in header)]
        for row in self.rows:
            s = row.scores
            lines.append(
                f"{row.lr:>10.2e} {row.lambda_pos:>6.2f} {row.lambda_ner:>6.2f}"
                f" {s.pos_accuracy:>8.4f} {s.ner.f1:>8.4f} {s.uas:>8.4f} {s.las:>8.4f}"
                f" {s.average:>8.4f}"
            )
        return "\n".join(lines) + "\n"


def grid_search(
    config: TrainConfig,
    pos: Splits,
    ner: Splits,
    dep: Splits,
    tagger: JointModel | None = None,
) -> GridResult:
    """学習率と`λ1`、`λ2`の全組み合わせで学習し、検証データの平均スコアが最大の組を選びます。
    `λ1 + λ2 > 1`となる組は飛ばします。単独学習ではそのタスクの検証スコアで選びます。"""
    selection = config.model.task.value
    grid = list(
        itertools.product(
            config.grid_lr or (config.lr,),
            config.grid_lambda_pos or (config.lambda_pos,),
            config.grid_lambda_ner or (config.lambda_ner,),
        )
    )
    rows: list[GridRow] = []
    best: tuple[tuple[float, float, float], Checkpoint] | None = None

    for lr, lambda_pos, lambda_ner in grid:
        if lambda_pos < 0 or lambda_ner < 0 or lambda_pos + lambda_ner > 1:
            logger.warning(
                f"grid_search: skipped {lr=}, {lambda_pos=}, {lambda_ner=} (λ1 + λ2 must be <= 1)"
            )
            continue
        run_config = dataclasses.replace(
            config,
            lr=lr,
            lambda_pos=lambda_pos,
            lambda_ner=lambda_ner,
            grid_lr=(),
            grid_lambda_pos=(),
            grid_lambda_ner=(),
        )
        checkpoint = train(run_config, pos, ner, dep, tagger)
        rows.append(GridRow(lr, lambda_pos, lambda_ner, checkpoint.scores))
        logger.info(
            f"grid_search: run {len(rows)} {lr=}, {lambda_pos=}, {lambda_ner=}"
            f" -> {checkpoint.scores.to_line()}"
        )
        if best is None or (
            checkpoint.scores.metric(selection) > best[1].scores.metric(selection)
        ):
            best = ((lr, lambda_pos, lambda_ner), checkpoint)

    if best is None:
        raise ConfigError("grid_search: no valid (lr, lambda_pos, lambda_ner) combination")
    return GridResult(best[0], best[1], rows)


class SeedRuns(NamedTuple):
    rows: list[tuple[int, Scores]]
    mean: dict[str, float]
    stdev: dict[str, float]

    def to_text(self) -> str:
        keys = list(self.mean)
        lines = [f"{'seed':>6} " + " ".join(f"{k:>13}" for k in keys)]
        for seed, scores in self.rows:
            values = scores.to_dict()
            lines.append(f"{seed:>6} " + " ".join(f"{values[k]:>13.4f}" for k in keys))
        lines.append(f"{'mean':>6} " + " ".join(f"{self.mean[k]:>13.4f}" for k in keys))
        lines.append(f"{'stdev':>6} " + " ".join(f"{self.stdev[k]:>13.4f}" for k in keys))
        return "\n".join(lines) + "\n"


def multi_seed(
    config: TrainConfig,
    pos: Splits,
    ner: Splits,
    dep: Splits,
    seeds: Sequence[int],
    tagger: JointModel | None = None,
) -> SeedRuns:
    """シードごとに学習して評価データのスコアを求め、平均と（母集団の）標準偏差を返します。"""
    if not seeds:
        raise ConfigError("multi_seed: at least one seed is required")

    rows: list[tuple[int, Scores]] = []
    for seed in seeds:
        checkpoint = train(dataclasses.replace(config, seed=seed), pos, ner, dep, tagger)
        scores = evaluate(
            checkpoint.model,
            pos.test,
            ner.test,
            dep.test,
            workers=config.workers,
            exclude_punct=config.exclude_punct,
            dep_inputs=dep_inputs_for(checkpoint.model, dep.test, tagger, config.workers),
        )
        logger.info(f"multi_seed({seed=}): {scores.to_line()}")
        rows.append((seed, scores))

    keys = list(rows[0][1].to_dict())
    table = np.array([[s.to_dict()[k] for k in keys] for _, s in rows])
    mean = dict(zip(keys, (float(v) for v in table.mean(axis=0))))
    stdev = dict(zip(keys, (float(v) for v in table.std(axis=0))))
    return SeedRuns(rows, mean, stdev)
