import dataclasses
import hashlib
import json
import os
from collections import Counter
from collections.abc import Iterable
from logging import getLogger
from typing import Any, NamedTuple

from joint_annotator.corpus import Corpus, Sentence
from joint_annotator.misc import LeakageError
from joint_annotator.workers import run_all

logger = getLogger(__name__)

SPLITS = ("train", "valid", "test")


class SentenceKey(NamedTuple):
    """空白を正規化した語形列と、そのSHA-1です。注釈は含みません。"""

    text: str
    digest: str

    @classmethod
    def of(cls, sentence: Sentence) -> "SentenceKey":
        text = " ".join(" ".join(sentence.forms).split())
        return cls(text, hashlib.sha1(text.encode("utf-8")).hexdigest())


class Splits(NamedTuple):
    train: Corpus
    valid: Corpus
    test: Corpus


def sentence_keys(corpus: Corpus, workers: int = 1) -> list[SentenceKey]:
    return run_all(SentenceKey.of, corpus.sentences, workers)


@dataclasses.dataclass(frozen=True)
class Overlap:
    source: str
    target: str
    keys: tuple[SentenceKey, ...]
    target_size: int

    @property
    def count(self) -> int:
        return len(self.keys)

    @property
    def percentage(self) -> float:
        """`target`の文のうち`source`にも含まれるものの割合（%）です。"""
        return 100.0 * self.count / self.target_size if self.target_size else 0.0


@dataclasses.dataclass(frozen=True)
class LeakageReport:
    overlaps: tuple[Overlap, ...]
    duplicates: dict[str, dict[SentenceKey, int]]
    statistics: dict[str, dict[str, int]]

    @property
    def has_leakage(self) -> bool:
        return any(o.count for o in self.overlaps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "overlaps": [
                {
                    "source": o.source,
                    "target": o.target,
                    "count": o.count,
                    "target_size": o.target_size,
                    "percentage": round(o.percentage, 2),
                    "sentences": [k.text for k in o.keys],
                }
                for o in self.overlaps
            ],
            "duplicates": {
                name: [{"sentence": k.text, "occurrences": c} for k, c in groups.items()]
                for name, groups in self.duplicates.items()
            },
            "statistics": self.statistics,
        }

    def to_text(self) -> str:
        lines = ["# sentence counts", f"{'task':<8}" + "".join(f"{s:>10}" for s in SPLITS)]
        for task, sizes in self.statistics.items():
            lines.append(f"{task:<8}" + "".join(f"{sizes.get(s, 0):>10}" for s in SPLITS))

        lines += ["", "# overlaps"]
        for o in self.overlaps:
            lines.append(
                f"{o.target} in {o.source}: {o.count}/{o.target_size} ({o.percentage:.2f}%)"
            )

        lines += ["", "# duplicates"]
        for name, groups in self.duplicates.items():
            extra = sum(c - 1 for c in groups.values())
            lines.append(f"{name}: {len(groups)} groups, {extra} duplicated sentences")
        return "\n".join(lines) + "\n"

    def save(self, path: str):
        """`path`（`.txt`）に表形式、同名の`.json`に構造化した内容を書き出します。"""
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())
        with open(os.path.splitext(path)[0] + ".json", "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=4)


def duplicate_groups(keys: Iterable[SentenceKey]) -> dict[SentenceKey, int]:
    counts = Counter(keys)
    return {key: count for key, count in counts.items() if count > 1}


def _overlap(
    source: str, source_keys: set[SentenceKey], target: str, target_keys: list[SentenceKey]
) -> Overlap:
    shared = tuple(k for k in target_keys if k in source_keys)
    return Overlap(source, target, shared, len(target_keys))


def audit(pos: Splits, ner: Splits, dep: Splits, workers: int = 1) -> LeakageReport:
    """NER・係り受けの検証/評価データの文が、品詞の学習データにどれだけ含まれているかを調べます。"""
    keys = {
        f"{task}.{split}": sentence_keys(corpus, workers)
        for task, splits in (("pos", pos), ("ner", ner), ("dep", dep))
        for split, corpus in zip(SPLITS, splits)
    }
    pos_train = set(keys["pos.train"])
    overlaps = tuple(
        _overlap("pos.train", pos_train, target, keys[target])
        for target in ("ner.valid", "ner.test", "dep.valid", "dep.test")
    )
    duplicates = {f"pos.{split}": duplicate_groups(keys[f"pos.{split}"]) for split in SPLITS}
    statistics = {
        task: {split: len(corpus) for split, corpus in zip(SPLITS, splits)}
        for task, splits in (("pos", pos), ("ner", ner), ("dep", dep))
    }

    report = LeakageReport(overlaps, duplicates, statistics)
    for o in overlaps:
        if o.count:
            logger.warning(
                f"audit: {o.count}/{o.target_size} ({o.percentage:.2f}%) of {o.target}"
                f" sentences appear in {o.source}"
            )
    return report


def deduplicate(corpus: Corpus, workers: int = 1) -> tuple[Corpus, int]:
    """各文の最初の出現だけを元の順序で残します。"""
    seen: set[SentenceKey] = set()
    kept: list[Sentence] = []
    for sentence, key in zip(corpus, sentence_keys(corpus, workers)):
        if key not in seen:
            seen.add(key)
            kept.append(sentence)
    removed = len(corpus) - len(kept)
    if removed:
        logger.info(f"deduplicate: removed {removed} duplicated sentences of {len(corpus)}")
    return Corpus.of(kept, corpus.task), removed


def resplit_pos(
    pos_all: Corpus, ner: Splits, dep: Splits, *, strict: bool = False, workers: int = 1
) -> Splits:
    """NER・係り受けの検証データにある文を品詞の検証データ、評価データにある文を品詞の評価データとし、
    残りを学習データにします。検証と評価の両方にある文は評価データに入れます。"""
    valid_keys = set(sentence_keys(ner.valid, workers)) | set(sentence_keys(dep.valid, workers))
    test_keys = set(sentence_keys(ner.test, workers)) | set(sentence_keys(dep.test, workers))
    pos_keys = sentence_keys(pos_all, workers)

    if missing := (valid_keys | test_keys) - set(pos_keys):
        message = f"resplit_pos: {len(missing)} valid/test sentences have no POS counterpart"
        if strict:
            raise LeakageError(message)
        logger.warning(message)

    parts: dict[str, list[Sentence]] = {split: [] for split in SPLITS}
    ties = 0
    for sentence, key in zip(pos_all, pos_keys):
        if key in test_keys:
            ties += key in valid_keys
            parts["test"].append(sentence)
        elif key in valid_keys:
            parts["valid"].append(sentence)
        else:
            parts["train"].append(sentence)
    if ties:
        logger.warning(
            f"resplit_pos: {ties} sentences are in both valid and test sets, assigned to test"
        )

    splits = Splits(*(Corpus.of(parts[split], pos_all.task) for split in SPLITS))
    logger.info(
        f"resplit_pos: {len(pos_all)} sentences ->"
        f" {len(splits.train)}/{len(splits.valid)}/{len(splits.test)}"
    )
    return splits
