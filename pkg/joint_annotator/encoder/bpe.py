import dataclasses
from collections import Counter
from collections.abc import Iterable, Sequence
from logging import getLogger
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from joint_annotator.corpus.core import Corpus, Sentence
    from joint_annotator.corpus.vocab import Vocab

logger = getLogger(__name__)

Pair = tuple[str, str]


@dataclasses.dataclass(frozen=True)
class SubwordSegmentation:
    pieces: tuple[tuple[str, ...], ...]
    ids: tuple[int, ...]
    first: tuple[int, ...]

    def word_ids(self, i: int) -> tuple[int, ...]:
        end = self.first[i + 1] if i + 1 < len(self.first) else len(self.ids)
        return self.ids[self.first[i] : end]


def _merge_pair(symbols: Sequence[str], pair: Pair) -> list[str]:
    merged: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            merged.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return merged


class BpeModel:
    """学習済みのマージ表とサブワード語彙です。"""

    def __init__(self, merges: Sequence[Pair], vocab: "Vocab"):
        self.merges = list(merges)
        self.vocab = vocab
        self._ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._cache: dict[str, tuple[str, ...]] = {}

    def split_word(self, word: str) -> tuple[str, ...]:
        """順位の小さいマージから順に適用して、語をサブワードに分割します。"""
        if (cached := self._cache.get(word)) is not None:
            return cached

        symbols = list(word)
        while len(symbols) > 1:
            rank, pair = min(
                (self._ranks.get(p, len(self._ranks)), p) for p in zip(symbols, symbols[1:])
            )
            if rank == len(self._ranks):
                break
            symbols = _merge_pair(symbols, pair)

        self._cache[word] = tuple(symbols)
        return self._cache[word]

    def segment(self, sentence: "Sentence") -> SubwordSegmentation:
        pieces: list[tuple[str, ...]] = []
        ids: list[int] = []
        first: list[int] = []
        for form in sentence.forms:
            word_pieces = self.split_word(form)
            first.append(len(ids))
            pieces.append(word_pieces)
            ids.extend(self.vocab.encode(p) for p in word_pieces)
        return SubwordSegmentation(tuple(pieces), tuple(ids), tuple(first))

    def save(self, path: str):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for left, right in self.merges:
                f.write(f"{left}\t{right}\n")

    @classmethod
    def load(cls, path: str, vocab: "Vocab") -> "BpeModel":
        with open(path, "r", encoding="utf-8") as f:
            merges = [tuple(line.rstrip("\n").split("\t")) for line in f if line.strip()]
        return cls(merges, vocab)  # type: ignore


def train_bpe(corpora: "Corpus | Iterable[Corpus]", merges: int) -> BpeModel:
    """学習コーパスの語形から、頻度最大の隣接ペアを貪欲に`merges`回マージしてマージ表を作ります。
    頻度が同じペアは辞書順で小さいものを選びます。"""
    from joint_annotator.corpus.core import Corpus
    from joint_annotator.corpus.vocab import Vocab

    corpora = [corpora] if isinstance(corpora, Corpus) else list(corpora)
    counts: Counter[str] = Counter(
        form for corpus in corpora for sentence in corpus for form in sentence.forms
    )
    words: dict[str, list[str]] = {w: list(w) for w in counts}
    learned: list[Pair] = []

    for _ in range(merges):
        pairs: Counter[Pair] = Counter()
        for word, symbols in words.items():
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += counts[word]
        if not pairs:
            logger.debug(f"train_bpe: no pairs left after {len(learned)} merges")
            break
        best = min(pairs, key=lambda p: (-pairs[p], p))
        learned.append(best)
        words = {w: _merge_pair(s, best) for w, s in words.items()}

    vocab = Vocab(sorted({ch for word in counts for ch in word}))
    for left, right in learned:
        vocab.add(left + right)
    return BpeModel(learned, vocab.freeze())
