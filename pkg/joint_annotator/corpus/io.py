import os
from enum import Enum
from logging import getLogger

from joint_annotator.corpus.core import Corpus, Sentence, Task, Token, annotated_layers
from joint_annotator.heads.mst import validate_tree
from joint_annotator.misc import CorpusFormatError, InvalidTreeError
from joint_annotator.vars import MISSING

logger = getLogger(__name__)

TASK_HEADER = "# task = "


class Schema(Enum):
    POS = "pos"
    NER = "ner"
    DEP = "dep"
    JOINT = "joint"

    @property
    def task(self) -> Task:
        return Task[self.name]

    @property
    def columns(self) -> tuple[int, int]:
        """(列数の下限, 列数の上限)"""
        return _COLUMNS[self]


_COLUMNS = {Schema.POS: (2, 2), Schema.NER: (2, 2), Schema.DEP: (8, 10), Schema.JOINT: (6, 6)}


def _split(line: str) -> list[str]:
    return line.split("\t") if "\t" in line else line.split()


def _optional(cell: str) -> str | None:
    return None if cell == MISSING else cell


def _optional_int(cell: str, path: str, line_no: int) -> int | None:
    if cell == MISSING:
        return None
    try:
        return int(cell)
    except ValueError:
        raise CorpusFormatError(path, line_no, f"expected an integer, got {cell!r}")


def _parse_token(
    cells: list[str], schema: Schema, position: int, path: str, line_no: int
) -> Token:
    match schema:
        case Schema.POS:
            index, form, pos, ner, head, deprel = (
                position, cells[0], _optional(cells[1]), None, None, None
            )
        case Schema.NER:
            index, form, pos, ner, head, deprel = (
                position, cells[0], None, _optional(cells[1]), None, None
            )
        case Schema.DEP:
            index = _optional_int(cells[0], path, line_no)
            form, pos, ner = cells[1], _optional(cells[3]), None
            head, deprel = _optional_int(cells[6], path, line_no), _optional(cells[7])
        case Schema.JOINT:
            index = _optional_int(cells[0], path, line_no)
            form, pos, ner = cells[1], _optional(cells[2]), _optional(cells[3])
            head, deprel = _optional_int(cells[4], path, line_no), _optional(cells[5])

    if index != position:
        raise CorpusFormatError(path, line_no, f"expected token index {position}, got {index}")
    try:
        return Token(index, form, pos, ner, head, deprel)
    except ValueError as err:
        raise CorpusFormatError(path, line_no, str(err))


def _build_sentence(
    tokens: list[Token], number: int, first_line: int, path: str
) -> Sentence:
    for token in tokens:
        if token.head is not None and token.head > len(tokens):
            raise CorpusFormatError(
                path,
                first_line,
                f"sentence {number}: head {token.head} of token {token.index}"
                f" exceeds sentence length {len(tokens)}",
            )
    layers = annotated_layers(tuple(tokens))
    if Task.DEP in layers:
        try:
            validate_tree([t.head for t in tokens])  # type: ignore
        except InvalidTreeError as err:
            raise CorpusFormatError(path, first_line, f"sentence {number}: {err}")
    return Sentence(tuple(tokens), layers)


def _corpus_task(sentences: list[Sentence], schema: Schema, task: Task | None) -> Task:
    if task is not None:
        return task
    if schema is not Schema.JOINT or not sentences:
        return schema.task
    common = frozenset.intersection(*(s.annotations for s in sentences))
    if Task.JOINT.layers <= common:
        return Task.JOINT
    for candidate in (Task.POS, Task.NER, Task.DEP):
        if candidate in common:
            return candidate
    raise CorpusFormatError("<corpus>", None, "sentences share no annotation layer")


def read_column_file(path: str, schema: Schema, task: Task | None = None) -> Corpus:
    """列形式のファイルを読み込みます。文は空行で区切られ、`#`で始まる行は読み飛ばします。
    六列形式の先頭に`# task = <task>`があれば、コーパスのタスクとして使います。"""
    low, high = schema.columns
    sentences: list[Sentence] = []
    tokens: list[Token] = []
    first_line = 0

    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.startswith(TASK_HEADER) and task is None:
                value = line[len(TASK_HEADER) :].strip()
                try:
                    task = Task(value)
                except ValueError as err:
                    raise CorpusFormatError(path, line_no, f"unknown task {value!r}") from err
                continue
            if line.startswith("#"):
                continue
            if not line.strip():
                if tokens:
                    sentences.append(_build_sentence(tokens, len(sentences) + 1, first_line, path))
                    tokens = []
                continue

            cells = _split(line.strip())
            if not low <= len(cells) <= high:
                raise CorpusFormatError(
                    path,
                    line_no,
                    f"expected {low}-{high} columns for {schema.name}, got {len(cells)}",
                )
            if not tokens:
                first_line = line_no
            tokens.append(_parse_token(cells, schema, len(tokens) + 1, path, line_no))

    if tokens:
        sentences.append(_build_sentence(tokens, len(sentences) + 1, first_line, path))

    corpus = Corpus(tuple(sentences), _corpus_task(sentences, schema, task))
    logger.debug(f"read_column_file({path=}, {schema=}) -> {len(corpus)} sentences")
    return corpus


def format_sentence(sentence: Sentence) -> str:
    rows: list[str] = []
    for t in sentence:
        head = None if t.head is None else str(t.head)
        cells = [str(t.index), t.form, t.pos, t.ner, head, t.deprel]
        rows.append("\t".join(MISSING if c is None else c for c in cells))
    return "\n".join(rows)


def write_column_file(corpus: Corpus, path: str):
    """コーパスを六列形式（番号・語形・品詞・固有表現・主辞・係り受け関係）で書き出します。
    値がない欄は`_`になります。"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    blocks = [format_sentence(s) for s in corpus]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if corpus.task is not Task.JOINT:
            f.write(f"{TASK_HEADER}{corpus.task.value}\n")
        if blocks:
            f.write("\n\n".join(blocks) + "\n")


def read_tokenized_lines(path: str) -> list[Sentence | None]:
    """1行1文・空白区切りの入力を読み込みます。空行は`None`として位置を残します。"""
    sentences: list[Sentence | None] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            forms = line.split()
            sentences.append(Sentence.from_forms(forms) if forms else None)
    return sentences


def detect_schema(path: str, task: Task) -> Schema:
    """最初のトークン行が6列なら六列形式、そうでなければタスクごとの元の形式とみなします。"""
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            if len(_split(line.strip())) == 6:
                return Schema.JOINT
            break
    return Schema[task.name]


def load_corpus(path: str, task: Task) -> Corpus:
    corpus = read_column_file(path, detect_schema(path, task), task)
    logger.info(
        f"load_corpus({path=}, {task=}): {len(corpus)} sentences, {corpus.token_count()} tokens"
    )
    return corpus
