import dataclasses
import re
from collections.abc import Iterable, Iterator, Sequence
from enum import Enum

from joint_annotator.misc import CorpusFormatError

BIO_PATTERN = re.compile(r"^(O|[BI]-\S+)$")


class Task(Enum):
    POS = "pos"
    NER = "ner"
    DEP = "dep"
    JOINT = "joint"

    @property
    def layers(self) -> frozenset["Task"]:
        if self is Task.JOINT:
            return frozenset((Task.POS, Task.NER, Task.DEP))
        return frozenset((self,))


@dataclasses.dataclass(frozen=True)
class Token:
    index: int
    form: str
    pos: str | None = None
    ner: str | None = None
    head: int | None = None
    deprel: str | None = None

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"token index must be >= 1, got {self.index}")
        if self.ner is not None and not BIO_PATTERN.match(self.ner):
            raise ValueError(f"invalid BIO label {self.ner!r} at token {self.index}")
        if self.head is not None and (self.head < 0 or self.head == self.index):
            raise ValueError(f"invalid head {self.head} at token {self.index}")


def annotated_layers(tokens: Sequence[Token]) -> frozenset[Task]:
    """全トークンで値がそろっている注釈層の集合を返します。"""
    layers: set[Task] = set()
    if all(t.pos is not None for t in tokens):
        layers.add(Task.POS)
    if all(t.ner is not None for t in tokens):
        layers.add(Task.NER)
    if all(t.head is not None and t.deprel is not None for t in tokens):
        layers.add(Task.DEP)
    return frozenset(layers)


@dataclasses.dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    annotations: frozenset[Task] = frozenset()

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("empty sentence")
        for i, token in enumerate(self.tokens, start=1):
            if token.index != i:
                raise ValueError(f"token indices must be 1..n, got {token.index} at {i}")
            if token.head is not None and token.head > len(self.tokens):
                raise ValueError(f"head {token.head} out of range at token {i}")
        if missing := self.annotations - annotated_layers(self.tokens):
            raise ValueError(
                f"annotation mask claims missing layers: {sorted(t.value for t in missing)}"
            )

    @classmethod
    def from_forms(cls, forms: Sequence[str]) -> "Sentence":
        return cls(tuple(Token(i, form) for i, form in enumerate(forms, start=1)))

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def pos_tags(self) -> list[str]:
        return [t.pos or "" for t in self.tokens]

    @property
    def ner_labels(self) -> list[str]:
        return [t.ner or "" for t in self.tokens]

    @property
    def heads(self) -> list[int]:
        return [t.head if t.head is not None else -1 for t in self.tokens]

    @property
    def deprels(self) -> list[str]:
        return [t.deprel or "" for t in self.tokens]

    def has(self, task: Task) -> bool:
        return task.layers <= self.annotations

    def text(self) -> str:
        return " ".join(self.forms)


@dataclasses.dataclass(frozen=True)
class Corpus:
    sentences: tuple[Sentence, ...]
    task: Task

    def __post_init__(self):
        for i, sentence in enumerate(self.sentences, start=1):
            if not sentence.has(self.task):
                raise CorpusFormatError(
                    "<corpus>", None, f"sentence {i} lacks {self.task.value} annotation"
                )

    @classmethod
    def of(cls, sentences: Iterable[Sentence], task: Task) -> "Corpus":
        return cls(tuple(sentences), task)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[Sentence]:
        return iter(self.sentences)

    def __getitem__(self, idx: int) -> Sentence:
        return self.sentences[idx]

    def token_count(self) -> int:
        return sum(len(s) for s in self.sentences)
