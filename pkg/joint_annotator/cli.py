import argparse
import dataclasses
import json
import os
import sys
import time
from collections.abc import Sequence
from logging import getLogger

from joint_annotator.config import load_config
from joint_annotator.corpus import (
    Corpus,
    Sentence,
    Task,
    load_corpus,
    read_tokenized_lines,
    write_column_file,
)
from joint_annotator.encoder import EncoderKind
from joint_annotator.leakage import Splits, audit, deduplicate, resplit_pos
from joint_annotator.metrics import ner_type_table
from joint_annotator.misc import ConfigError, JointAnnotatorError
from joint_annotator.model import JointModel
from joint_annotator.trainer import (
    Checkpoint,
    TrainConfig,
    dep_inputs_for,
    grid_search,
    multi_seed,
    predict,
    restrict,
    score_predictions,
    train,
)
from joint_annotator.workers import run_all

logger = getLogger(__name__)

MODES = ("train", "eval", "annotate", "audit", "resplit", "bench")
TASKS = {"pos": Task.POS, "ner": Task.NER, "dep": Task.DEP}
BENCH_BATCH_SIZE = 8
UNDERSCORE_FLAGS = {"save_dir", "input_file", "output_file", "output_dir"}


class AnnotationPipeline:
    """読み込んだチェックポイントで、エンコード → 品詞 → ソフト品詞埋め込み → NER・構文解析の順に注釈します。
    単独学習の構文解析モデルには、先に`tagger`で品詞を付けた文を渡します。"""

    def __init__(self, checkpoint: Checkpoint, workers: int = 1, tagger: JointModel | None = None):
        self.checkpoint = checkpoint
        self.model = checkpoint.model
        self.workers = workers
        self.tagger = tagger
        if self.model.tag_embedding is not None and tagger is None:
            raise ConfigError("a dep checkpoint needs --pos-tagger to tag its input")

    @classmethod
    def from_dir(
        cls, model_dir: str, workers: int = 1, tagger_dir: str | None = None
    ) -> "AnnotationPipeline":
        tagger = Checkpoint.load(tagger_dir).model if tagger_dir else None
        return cls(Checkpoint.load(model_dir), workers, tagger)

    @property
    def task(self) -> Task:
        return self.model.config.task

    def __call__(self, sentences: Sequence[Sentence]) -> list[Sentence]:
        if self.model.tag_embedding is not None:
            sentences = run_all(self.tagger.annotate, sentences, self.workers)  # type: ignore
        return run_all(self.model.annotate, sentences, self.workers)


def annotate(
    input_file: str,
    output_file: str,
    model_dir: str,
    workers: int = 1,
    tagger_dir: str | None = None,
) -> int:
    """1行1文の入力を注釈し、六列形式で書き出します。空行は警告を出して読み飛ばします。
    単独学習のモデルでは、そのモデルが付けない欄は`_`になります。"""
    pipeline = AnnotationPipeline.from_dir(model_dir, workers, tagger_dir)
    sentences: list[Sentence] = []
    for line_no, sentence in enumerate(read_tokenized_lines(input_file), start=1):
        if sentence is None:
            logger.warning(f"annotate: empty line {line_no} in {input_file} skipped")
            continue
        sentences.append(sentence)

    annotated = pipeline(sentences)
    write_column_file(Corpus.of(annotated, pipeline.task), output_file)
    logger.info(f"annotate({input_file=}, {output_file=}): {len(annotated)} sentences")
    return len(annotated)


def bench(
    model_dir: str,
    input_file: str,
    batch_size: int = BENCH_BATCH_SIZE,
    workers: int = 1,
    tagger_dir: str | None = None,
) -> float:
    """注釈の処理速度（文/秒）を計測します。"""
    pipeline = AnnotationPipeline.from_dir(model_dir, workers, tagger_dir)
    sentences = [s for s in read_tokenized_lines(input_file) if s is not None]
    if not sentences:
        logger.warning(f"bench: no sentences in {input_file}, throughput reported as 0")
        return 0.0

    started = time.perf_counter()
    for i in range(0, len(sentences), batch_size):
        pipeline(sentences[i : i + batch_size])
    elapsed = time.perf_counter() - started

    throughput = len(sentences) / elapsed if elapsed > 0 else float("inf")
    tokens = sum(len(s) for s in sentences) / len(sentences)
    logger.info(f"bench: {len(sentences)} sentences, {batch_size=}, {tokens:.1f} tokens/sentence")
    logger.info(f"bench: {throughput:.2f} sentences/second")
    return throughput


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="joint-annotator",
        description="Joint POS tagging, named entity recognition and dependency parsing.",
    )
    parser.add_argument("--mode", choices=MODES, required=True)
    parser.add_argument("--save_dir", default=os.environ.get("JOINT_ANNOTATOR_SAVE_DIR"))
    parser.add_argument("--input_file")
    parser.add_argument("--output_file")
    parser.add_argument("--output_dir")
    parser.add_argument(
        "--workers", type=int, default=int(os.environ.get("JOINT_ANNOTATOR_WORKERS", "1"))
    )

    training = parser.add_argument_group("training")
    training.add_argument("--config", help="YAML training configuration")
    training.add_argument(
        "--task", choices=("joint", *TASKS), help="train one task alone instead of the joint model"
    )
    training.add_argument("--pos-tagger", help="POS checkpoint that tags the input of a dep model")
    training.add_argument("--lr", type=float)
    training.add_argument("--lambda-pos", type=float)
    training.add_argument("--lambda-ner", type=float)
    training.add_argument("--batch-size", type=int)
    training.add_argument("--epochs", type=int)
    training.add_argument("--seed", type=int)
    training.add_argument("--seeds", type=int, nargs="+")
    training.add_argument("--max-grad-norm", type=float)
    training.add_argument("--grid-lr", type=float, nargs="+")
    training.add_argument("--grid-lambda-pos", type=float, nargs="+")
    training.add_argument("--grid-lambda-ner", type=float, nargs="+")
    training.add_argument("--exclude-punct", action="store_true")

    model = parser.add_argument_group("model")
    model.add_argument("--encoder-dim", type=int)
    model.add_argument("--encoder-layers", type=int)
    model.add_argument("--bpe-merges", type=int)
    model.add_argument("--embeddings", help="precomputed word vectors instead of the desk encoder")
    model.add_argument("--ffnn-dim", type=int)
    model.add_argument("--hard-pos-tags", action="store_true")
    model.add_argument("--no-pos-for-dep", action="store_true")

    corpora = parser.add_argument_group("corpora")
    for task in TASKS:
        for split in ("train", "valid", "test"):
            corpora.add_argument(f"--{task}-{split}")
    corpora.add_argument("--pos-all", help="whole POS corpus to deduplicate and re-split")
    corpora.add_argument("--strict", action="store_true")
    return parser


def _require(args: argparse.Namespace, *names: str):
    if missing := [name for name in names if not getattr(args, name)]:
        flags = ", ".join(
            "--" + (n if n in UNDERSCORE_FLAGS else n.replace("_", "-")) for n in missing
        )
        raise ConfigError(f"--mode {args.mode} requires {flags}")


def _splits(args: argparse.Namespace, task: str) -> Splits:
    corpora = []
    for split in ("train", "valid", "test"):
        path = getattr(args, f"{task}_{split}")
        corpora.append(load_corpus(path, TASKS[task]) if path else Corpus.of((), TASKS[task]))
    return Splits(*corpora)


def _train_config(args: argparse.Namespace) -> TrainConfig:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {
        "lr": args.lr,
        "lambda_pos": args.lambda_pos,
        "lambda_ner": args.lambda_ner,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "seed": args.seed,
        "max_grad_norm": args.max_grad_norm,
        "grid_lr": tuple(args.grid_lr) if args.grid_lr else None,
        "grid_lambda_pos": tuple(args.grid_lambda_pos) if args.grid_lambda_pos else None,
        "grid_lambda_ner": tuple(args.grid_lambda_ner) if args.grid_lambda_ner else None,
    }
    encoder = {
        "dim": args.encoder_dim,
        "layers": args.encoder_layers,
        "merges": args.bpe_merges,
    }
    if args.embeddings:
        encoder |= {"kind": EncoderKind.PRECOMPUTED, "embeddings_path": args.embeddings}
    model = {"ffnn_dim": args.ffnn_dim}
    if args.task:
        model["task"] = Task(args.task)
    if args.hard_pos_tags:
        model["hard_pos_tags"] = True
    if args.no_pos_for_dep:
        model["pos_for_dep"] = False

    encoder_config = dataclasses.replace(
        config.model.encoder, **{k: v for k, v in encoder.items() if v is not None}
    )
    model_config = dataclasses.replace(
        config.model,
        encoder=encoder_config,
        **{k: v for k, v in model.items() if v is not None},
    )
    return dataclasses.replace(
        config,
        model=model_config,
        workers=args.workers,
        exclude_punct=args.exclude_punct or config.exclude_punct,
        **{k: v for k, v in overrides.items() if v is not None},
    )


def _write_report(path: str | None, text: str):
    if not path:
        return
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _tagger(args: argparse.Namespace) -> JointModel | None:
    return Checkpoint.load(args.pos_tagger).model if args.pos_tagger else None


def _run_train(args: argparse.Namespace):
    config = _train_config(args)
    task = config.model.task
    if task is Task.JOINT:
        names = [f"{t}_{split}" for split in ("train", "valid") for t in TASKS]
        _require(args, "save_dir", *names)
    else:
        _require(args, "save_dir", f"{task.value}_train", f"{task.value}_valid")
    if task is Task.DEP:
        _require(args, "pos_tagger")
    pos, ner, dep = _splits(args, "pos"), _splits(args, "ner"), _splits(args, "dep")
    tagger = _tagger(args)

    if args.seeds:
        runs = multi_seed(config, pos, ner, dep, args.seeds, tagger)
        logger.info(f"multi_seed:\n{runs.to_text()}")
        _write_report(args.output_file, runs.to_text())
        return
    if config.grid_lr or config.grid_lambda_pos or config.grid_lambda_ner:
        result = grid_search(config, pos, ner, dep, tagger)
        logger.info(f"grid_search: best (lr, λ1, λ2) = {result.best}\n{result.to_text()}")
        _write_report(args.output_file, result.to_text())
        result.checkpoint.save(args.save_dir)
        return
    train(config, pos, ner, dep, tagger).save(args.save_dir)


def _run_eval(args: argparse.Namespace):
    _require(args, "save_dir")
    model = Checkpoint.load(args.save_dir).model
    tests = (_splits(args, task).test for task in TASKS)
    pos, ner, dep = restrict(model, *tests)
    if not (len(pos) or len(ner) or len(dep)):
        flags = ", ".join(f"--{t.value}-test" for t in sorted(model.tasks, key=list(Task).index))
        raise ConfigError(f"--mode eval requires at least one of {flags}")

    dep_inputs = dep_inputs_for(model, dep, _tagger(args), args.workers)
    ner_pred = predict(model, ner, args.workers)
    scores = score_predictions(
        pos,
        ner,
        dep,
        predict(model, pos, args.workers),
        ner_pred,
        predict(model, dep if dep_inputs is None else dep_inputs, args.workers),
        exclude_punct=args.exclude_punct,
    )
    table = ner_type_table([s.ner_labels for s in ner], [s.ner_labels for s in ner_pred])
    logger.info(f"eval: {scores.to_line()}")
    for kind, prf in table.items():
        logger.info(f"eval: {kind:<6} P={prf.precision:.4f} R={prf.recall:.4f} F1={prf.f1:.4f}")

    report = {
        "task": model.config.task.value,
        "scores": scores.to_dict(),
        "ner_types": {kind: prf._asdict() for kind, prf in table.items()},
    }
    _write_report(args.output_file, json.dumps(report, indent=4, sort_keys=True) + "\n")


def _run_audit(args: argparse.Namespace):
    report = audit(_splits(args, "pos"), _splits(args, "ner"), _splits(args, "dep"), args.workers)
    for line in report.to_text().splitlines():
        logger.info(f"audit: {line}")
    if args.output_file:
        report.save(args.output_file)


def _run_resplit(args: argparse.Namespace):
    _require(args, "pos_all", "output_dir")
    pos_all, removed = deduplicate(load_corpus(args.pos_all, Task.POS), args.workers)
    logger.info(f"resplit: {removed} duplicated sentences removed from {args.pos_all}")
    ner, dep = _splits(args, "ner"), _splits(args, "dep")
    splits = resplit_pos(pos_all, ner, dep, strict=args.strict, workers=args.workers)

    for split, corpus in splits._asdict().items():
        write_column_file(corpus, os.path.join(args.output_dir, f"pos.{split}.conll"))
    audit(splits, ner, dep, args.workers).save(os.path.join(args.output_dir, "report.txt"))


def _dispatch(args: argparse.Namespace):
    match args.mode:
        case "train":
            _run_train(args)
        case "eval":
            _run_eval(args)
        case "annotate":
            _require(args, "save_dir", "input_file", "output_file")
            annotate(
                args.input_file, args.output_file, args.save_dir, args.workers, args.pos_tagger
            )
        case "audit":
            _run_audit(args)
        case "resplit":
            _run_resplit(args)
        case "bench":
            _require(args, "save_dir", "input_file")
            batch_size = args.batch_size or BENCH_BATCH_SIZE
            bench(args.save_dir, args.input_file, batch_size, args.workers, args.pos_tagger)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)

    try:
        _dispatch(args)
    except (JointAnnotatorError, OSError) as err:
        logger.error(f"{args.mode}: {err}")
        return 1
    return 0


def run():
    load_config()
    sys.exit(main())
