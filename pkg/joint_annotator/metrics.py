import dataclasses
from collections import defaultdict
from collections.abc import Sequence
from logging import getLogger
from typing import NamedTuple

from joint_annotator.misc import ShapeError
from joint_annotator.vars import OUTSIDE, PUNCT_TAG

logger = getLogger(__name__)

SELECTION_METRICS = {"pos": "pos_accuracy", "ner": "ner_f1", "dep": "las", "joint": "average"}


@dataclasses.dataclass(frozen=True, order=True)
class Span:
    """固有表現の区間です。`start`、`end`はトークン番号（1始まり、`end`を含む）です。"""

    start: int
    end: int
    type: str

    def __post_init__(self):
        if not self.type:
            raise ValueError("span type must not be empty")
        if not 1 <= self.start <= self.end:
            raise ValueError(f"invalid span ({self.start}, {self.end})")


class Prf(NamedTuple):
    precision: float
    recall: float
    f1: float


class Attachment(NamedTuple):
    uas: float
    las: float


class Arcs(NamedTuple):
    heads: Sequence[int]
    relations: Sequence[str]


def _check_aligned(name: str, gold: Sequence[Sequence], pred: Sequence[Sequence]):
    if len(gold) != len(pred):
        raise ShapeError(f"{name}: {len(gold)} gold vs {len(pred)} predicted sentences")
    for i, (g, p) in enumerate(zip(gold, pred), start=1):
        if len(g) != len(p):
            raise ShapeError(f"{name}: sentence {i} has {len(g)} gold vs {len(p)} predicted tokens")


def pos_accuracy(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> float:
    """文ごとの品詞列を受け取り、全トークンでの一致率を返します。トークンがなければ1.0です。"""
    _check_aligned("pos_accuracy", gold, pred)
    total = sum(len(g) for g in gold)
    if total == 0:
        return 1.0
    correct = sum(a == b for g, p in zip(gold, pred) for a, b in zip(g, p))
    return correct / total


def repair_bio(labels: Sequence[str]) -> list[str]:
    """同じ種類の区間が開いていない`I-X`を`B-X`に置き換えます。"""
    repaired: list[str] = []
    current: str | None = None
    for label in labels:
        if label == OUTSIDE:
            current = None
            repaired.append(label)
            continue
        prefix, kind = label.split("-", 1)
        if prefix == "I" and current != kind:
            label = f"B-{kind}"
        current = kind
        repaired.append(label)
    return repaired


def extract_spans(labels: Sequence[str]) -> list[Span]:
    spans: list[Span] = []
    start, kind = 0, ""
    for i, label in enumerate([*repair_bio(labels), OUTSIDE], start=1):
        if kind and not (label.startswith("I-") and label[2:] == kind):
            spans.append(Span(start, i - 1, kind))
            kind = ""
        if label.startswith("B-"):
            start, kind = i, label[2:]
    return spans


def _prf(tp: int, n_gold: int, n_pred: int) -> Prf:
    precision = tp / n_pred if n_pred else float(n_gold == 0)
    recall = tp / n_gold if n_gold else float(n_pred == 0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Prf(precision, recall, f1)


def _span_sets(labels: Sequence[Sequence[str]]) -> set[tuple[int, Span]]:
    return {(i, span) for i, sentence in enumerate(labels) for span in extract_spans(sentence)}


def ner_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> Prf:
    """区間（種類、開始、終了）の完全一致によるマイクロ平均の適合率・再現率・F1です。
    正解・予測ともに区間がなければすべて1.0とします。"""
    _check_aligned("ner_f1", gold, pred)
    gold_spans, pred_spans = _span_sets(gold), _span_sets(pred)
    return _prf(len(gold_spans & pred_spans), len(gold_spans), len(pred_spans))


def ner_type_table(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> dict[str, Prf]:
    _check_aligned("ner_type_table", gold, pred)
    gold_spans, pred_spans = _span_sets(gold), _span_sets(pred)
    by_type: dict[str, list[int]] = defaultdict(lambda: [0, 0, 0])
    for _, span in gold_spans:
        by_type[span.type][1] += 1
    for _, span in pred_spans:
        by_type[span.type][2] += 1
    for _, span in gold_spans & pred_spans:
        by_type[span.type][0] += 1
    return {kind: _prf(*counts) for kind, counts in sorted(by_type.items())}


def punct_mask(tags: Sequence[Sequence[str]]) -> list[list[bool]]:
    return [[tag == PUNCT_TAG for tag in sentence] for sentence in tags]


def attachment_scores(
    gold: Sequence[Arcs], pred: Sequence[Arcs], skip: Sequence[Sequence[bool]] | None = None
) -> Attachment:
    """UASとLASです。`skip`で真のトークン（句読点など）は数えません。"""
    _check_aligned("attachment_scores", [g.heads for g in gold], [p.heads for p in pred])
    if skip is not None:
        _check_aligned("attachment_scores", [g.heads for g in gold], skip)

    total = heads_ok = both_ok = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g.relations) != len(g.heads) or len(p.relations) != len(p.heads):
            raise ShapeError(
                f"attachment_scores: sentence {i + 1} heads/relations differ in length"
            )
        for j in range(len(g.heads)):
            if skip is not None and skip[i][j]:
                continue
            total += 1
            if g.heads[j] == p.heads[j]:
                heads_ok += 1
                both_ok += g.relations[j] == p.relations[j]
    if total == 0:
        return Attachment(1.0, 1.0)
    return Attachment(heads_ok / total, both_ok / total)


@dataclasses.dataclass(frozen=True)
class Scores:
    pos_accuracy: float
    ner: Prf
    uas: float
    las: float

    @property
    def average(self) -> float:
        """チェックポイント選択に使う、品詞正解率・NER F1・LASの単純平均です。"""
        return (self.pos_accuracy + self.ner.f1 + self.las) / 3

    def metric(self, task: str) -> float:
        """タスク（`pos`、`ner`、`dep`、`joint`）のチェックポイント選択に使う値です。"""
        return self.to_dict()[SELECTION_METRICS[task]]

    def to_dict(self) -> dict[str, float]:
        return {
            "pos_accuracy": self.pos_accuracy,
            "ner_precision": self.ner.precision,
            "ner_recall": self.ner.recall,
            "ner_f1": self.ner.f1,
            "uas": self.uas,
            "las": self.las,
            "average": self.average,
        }

    @classmethod
    def from_dict(cls, values: dict[str, float]) -> "Scores":
        return cls(
            values["pos_accuracy"],
            Prf(values["ner_precision"], values["ner_recall"], values["ner_f1"]),
            values["uas"],
            values["las"],
        )

    def to_line(self) -> str:
        return (
            f"POS-acc={self.pos_accuracy:.4f} NER-F1={self.ner.f1:.4f}"
            f" UAS={self.uas:.4f} LAS={self.las:.4f} avg={self.average:.4f}"
        )
