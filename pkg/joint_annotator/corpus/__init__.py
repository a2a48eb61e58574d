from logging import NullHandler, getLogger

from joint_annotator.corpus.core import Corpus, Sentence, Task, Token
from joint_annotator.corpus.io import (
    Schema,
    detect_schema,
    load_corpus,
    read_column_file,
    read_tokenized_lines,
    write_column_file,
)
from joint_annotator.corpus.vocab import Vocab, Vocabs, build_vocabs

getLogger(__package__).addHandler(NullHandler())

__all__ = [
    "Corpus",
    "Schema",
    "Sentence",
    "Task",
    "Token",
    "Vocab",
    "Vocabs",
    "build_vocabs",
    "detect_schema",
    "load_corpus",
    "read_column_file",
    "read_tokenized_lines",
    "write_column_file",
]
