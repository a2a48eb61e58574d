import os
from collections.abc import Sequence

import numpy as np
import pytest

from joint_annotator.corpus import Corpus, Schema, Sentence, Token, build_vocabs, read_column_file
from joint_annotator.corpus.core import annotated_layers
from joint_annotator.encoder import EncoderConfig
from joint_annotator.model import JointModel, ModelConfig

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
TOY_PATH = os.path.join(DATA_DIR, "toy.conll")

TINY = ModelConfig(EncoderConfig(dim=8, layers=1, merges=20), soft_dim=5, ffnn_dim=6)


def make_sentence(
    forms: Sequence[str],
    pos: Sequence[str] | None = None,
    ner: Sequence[str] | None = None,
    heads: Sequence[int] | None = None,
    deprels: Sequence[str] | None = None,
) -> Sentence:
    n = len(forms)
    tokens = tuple(
        Token(
            i + 1,
            forms[i],
            pos[i] if pos else None,
            ner[i] if ner else None,
            heads[i] if heads else None,
            deprels[i] if deprels else None,
        )
        for i in range(n)
    )
    return Sentence(tokens, annotated_layers(tokens))


@pytest.fixture(scope="session")
def toy() -> Corpus:
    return read_column_file(TOY_PATH, Schema.JOINT)


@pytest.fixture
def sentence_factory():
    return make_sentence


@pytest.fixture
def vinai_sentence() -> Sentence:
    return make_sentence(
        ["Tôi", "đang", "làm_việc", "tại", "VinAI", "."],
        ["P", "R", "V", "E", "Np", "CH"],
        ["O", "O", "O", "O", "B-ORG", "O"],
        [3, 3, 0, 3, 4, 3],
        ["sub", "adv", "root", "loc", "pob", "punct"],
    )


@pytest.fixture
def hanoi_sentence() -> Sentence:
    return make_sentence(
        ["Đây", "là", "Hà_Nội"],
        ["PRON", "VERB", "NOUN"],
        ["O", "O", "B-LOC"],
        [2, 0, 2],
        ["sub", "root", "vmod"],
    )


@pytest.fixture(scope="session")
def toy_vocabs(toy):
    return build_vocabs(toy, merges=20)


@pytest.fixture
def tiny_model(toy_vocabs) -> JointModel:
    vocabs, merges = toy_vocabs
    return JointModel(vocabs, merges, TINY, seed=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_path() -> str:
    return TOY_PATH
