import itertools
from functools import cache

import numpy as np
import pytest

from joint_annotator.heads import mst_decode, tree_score, validate_tree
from joint_annotator.misc import InvalidTreeError


@cache
def single_root_trees(n: int) -> np.ndarray:
    trees = []
    for heads in itertools.product(range(n + 1), repeat=n):
        try:
            validate_tree(heads)
        except InvalidTreeError:
            continue
        trees.append(heads)
    return np.array(trees)


def brute_force(scores: np.ndarray) -> tuple[np.ndarray, float]:
    n = scores.shape[0]
    trees = single_root_trees(n)
    totals = scores[np.arange(n), trees].sum(axis=1)
    best = int(totals.argmax())
    return trees[best], float(totals[best])


def full_matrix(scores: np.ndarray) -> np.ndarray:
    n = scores.shape[0]
    full = np.full((n + 1, n + 1), -np.inf)
    full[1:] = scores
    return full


def test_tree_counts():
    # 単一ルートの木の数は n^(n-1)
    assert [len(single_root_trees(n)) for n in (1, 2, 3, 4)] == [1, 2, 9, 64]


def test_matches_brute_force_on_random_scores():
    rng = np.random.default_rng(2024)
    for trial in range(1000):
        n = int(rng.integers(1, 6))
        scores = rng.normal(size=(n, n + 1)) * rng.choice([0.1, 1.0, 10.0])
        if trial % 3 == 0:
            # ROOTへの弧を強くして、複数の子がROOTにつきやすくする
            scores[:, 0] += 5.0
        heads = mst_decode(scores)
        expected, best = brute_force(scores)

        validate_tree(heads)
        assert tree_score(full_matrix(scores), heads) == pytest.approx(best, abs=1e-9)
        assert heads == list(expected)


def test_row_shift_invariance():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(2, 7))
        scores = rng.normal(size=(n, n + 1))
        shifted = scores + rng.normal(size=(n, 1)) * 100
        assert mst_decode(scores) == mst_decode(shifted)


def test_single_root_is_enforced():
    scores = np.array(
        [
            [10.0, 0.0, 0.0],
            [10.0, 0.0, 0.0],
        ]
    )
    heads = mst_decode(scores)
    assert heads.count(0) == 1
    assert heads == [0, 1]


def test_single_token():
    assert mst_decode(np.array([[0.3, -np.inf]])) == [0]


def test_hanoi_tree():
    scores = np.full((3, 4), -1.0)
    scores[0, 2] = scores[1, 0] = scores[2, 2] = 2.0
    assert mst_decode(scores) == [2, 0, 2]


@pytest.mark.parametrize(
    "heads,message",
    [
        ([0, 0], "exactly one root"),
        ([1], "own head"),
        ([2, 3, 0, 9], "out of range"),
        ([2, 1, 0], "cycle"),
    ],
)
def test_validate_tree_errors(heads, message):
    with pytest.raises(InvalidTreeError, match=message):
        validate_tree(heads)
