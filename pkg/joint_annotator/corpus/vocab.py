import os
from collections import Counter
from collections.abc import Iterable, Sequence
from logging import getLogger
from typing import NamedTuple

from joint_annotator.corpus.core import Corpus, Task
from joint_annotator.encoder.bpe import train_bpe
from joint_annotator.misc import VocabError
from joint_annotator.vars import BPE_MERGES, OUTSIDE, PAD, UNK, VOCAB_DIR

logger = getLogger(__name__)


class Vocab:
    """文字列とIDの双方向の対応表です。`specials=True`なら`<pad>`=0、`<unk>`=1を先頭に持ちます。"""

    def __init__(self, items: Iterable[str] = (), *, specials: bool = True):
        self.specials = specials
        self.frozen = False
        self._ids: dict[str, int] = {}
        self._items: list[str] = []
        if specials:
            self.add(PAD)
            self.add(UNK)
        for item in items:
            self.add(item)

    @property
    def pad_id(self) -> int | None:
        return 0 if self.specials else None

    @property
    def unk_id(self) -> int | None:
        return 1 if self.specials else None

    def add(self, item: str) -> int:
        if item in self._ids:
            return self._ids[item]
        if self.frozen:
            raise VocabError(f"cannot add {item!r} to a frozen vocab")
        self._ids[item] = len(self._items)
        self._items.append(item)
        return self._ids[item]

    def freeze(self) -> "Vocab":
        self.frozen = True
        return self

    def encode(self, item: str) -> int:
        """未知語は`<unk>`のIDになります。特殊IDを持たないラベル語彙では`VocabError`を送出します。"""
        if (idx := self._ids.get(item)) is not None:
            return idx
        if self.unk_id is None:
            raise VocabError(f"{item!r} is not in vocab")
        return self.unk_id

    def decode(self, idx: int) -> str:
        return self._items[idx]

    def __contains__(self, item: str) -> bool:
        return item in self._ids

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Vocab)
            and self.specials == other.specials
            and self._items == other._items
        )

    def save(self, path: str):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"# specials = {int(self.specials)}\n")
            for item in self._items[2 if self.specials else 0 :]:
                f.write(item + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            items = [line.rstrip("\n") for line in f]
        return cls(items, specials=header.endswith("1")).freeze()


class Vocabs(NamedTuple):
    word: Vocab
    pos: Vocab
    ner: Vocab
    deprel: Vocab
    subword: Vocab

    def save(self, directory: str):
        path = os.path.join(directory, VOCAB_DIR)
        os.makedirs(path, exist_ok=True)
        for name, vocab in self._asdict().items():
            vocab.save(os.path.join(path, f"{name}.txt"))

    @classmethod
    def load(cls, directory: str) -> "Vocabs":
        path = os.path.join(directory, VOCAB_DIR)
        return cls(*(Vocab.load(os.path.join(path, f"{name}.txt")) for name in cls._fields))


def build_vocabs(
    corpora: Corpus | Sequence[Corpus], min_count: int = 1, merges: int = BPE_MERGES
) -> tuple[Vocabs, list[tuple[str, str]]]:
    """学習コーパスから語彙を作ります。出現回数が`min_count`未満の語は未知語扱いになりますが、
    品詞・固有表現・係り受け関係のラベルは出現したものをすべて含みます。
    サブワード語彙はBPEの学習結果で、マージ表と一緒に返します。"""
    corpora = [corpora] if isinstance(corpora, Corpus) else list(corpora)
    counts: Counter[str] = Counter()
    pos, deprel = Vocab(specials=False), Vocab(specials=False)
    ner = Vocab([OUTSIDE], specials=False)

    for corpus in corpora:
        for sentence in corpus:
            counts.update(sentence.forms)
            for token in sentence:
                if sentence.has(Task.POS):
                    pos.add(token.pos)  # type: ignore
                if sentence.has(Task.NER):
                    ner.add(token.ner)  # type: ignore
                if sentence.has(Task.DEP):
                    deprel.add(token.deprel)  # type: ignore

    word = Vocab(w for w, c in counts.items() if c >= min_count)
    bpe = train_bpe(corpora, merges)
    logger.info(
        f"build_vocabs: {len(word)} words, {len(pos)} POS tags, {len(ner)} NER labels,"
        f" {len(deprel)} relations, {len(bpe.vocab)} subwords"
    )
    return (
        Vocabs(word.freeze(), pos.freeze(), ner.freeze(), deprel.freeze(), bpe.vocab),
        bpe.merges,
    )
