from collections.abc import Sequence
from logging import getLogger

import numpy as np

from joint_annotator.misc import InvalidTreeError
from joint_annotator.vars import ROOT_INDEX

logger = getLogger(__name__)


def validate_tree(heads: Sequence[int]):
    """`heads[i - 1]`をトークン`i`の主辞（0はROOT）とみなし、単一ルートの木になっているかを検査します。"""
    n = len(heads)
    for i, head in enumerate(heads, start=1):
        if not 0 <= head <= n:
            raise InvalidTreeError(f"head {head} of token {i} out of range 0..{n}")
        if head == i:
            raise InvalidTreeError(f"token {i} is its own head")

    roots = [i for i, head in enumerate(heads, start=1) if head == ROOT_INDEX]
    if len(roots) != 1:
        raise InvalidTreeError(f"expected exactly one root child, got {len(roots)}")

    for start in range(1, n + 1):
        node, steps = start, 0
        while node != ROOT_INDEX:
            node = heads[node - 1]
            steps += 1
            if steps > n:
                raise InvalidTreeError(f"cycle through token {start}")


def _find_cycle(heads: np.ndarray) -> list[int] | None:
    n = len(heads)
    state = np.zeros(n, dtype=np.int8)  # 0: 未訪問, 1: 探索中, 2: 確定
    state[ROOT_INDEX] = 2
    for start in range(1, n):
        path: list[int] = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = int(heads[node])
        if state[node] == 1:
            return path[path.index(node) :]
        for visited in path:
            state[visited] = 2
    return None


def _chu_liu_edmonds(scores: np.ndarray) -> np.ndarray:
    """`scores[d, h]`（依存語`d`の主辞`h`）についての最大全域有向木を、縮約を再帰的に行って求めます。"""
    heads = scores.argmax(axis=1)
    heads[ROOT_INDEX] = -1
    cycle = _find_cycle(heads)
    if cycle is None:
        return heads

    in_cycle = np.zeros(len(scores), dtype=bool)
    in_cycle[cycle] = True
    members = np.flatnonzero(in_cycle)
    outside = np.flatnonzero(~in_cycle)

    # 閉路に入る弧の利得と、閉路から出る弧の最良スコア
    enter = scores[np.ix_(members, outside)] - scores[members, heads[members]][:, None]
    leave = scores[np.ix_(outside, members)]
    m = len(outside)

    contracted = np.full((m + 1, m + 1), -np.inf)
    contracted[:m, :m] = scores[np.ix_(outside, outside)]
    contracted[:m, m] = leave.max(axis=1)
    contracted[m, :m] = enter.max(axis=0)

    sub_heads = _chu_liu_edmonds(contracted)

    result = heads.copy()
    for i in range(1, m):
        head = sub_heads[i]
        result[outside[i]] = members[leave[i].argmax()] if head == m else outside[head]
    entry_head = sub_heads[m]
    result[members[enter[:, entry_head].argmax()]] = outside[entry_head]
    return result


def tree_score(scores: np.ndarray, heads: Sequence[int]) -> float:
    return float(sum(scores[d, h] for d, h in enumerate(heads, start=1)))


def mst_decode(scores: np.ndarray) -> list[int]:
    """`scores`（`(n, n + 1)`、`scores[d - 1, h]`が依存語`d`の主辞`h`のスコア）から、
    ROOTの子がちょうど1つの最大全域木を求め、トークンごとの主辞を返します。"""
    n = scores.shape[0]
    if n == 1:
        return [ROOT_INDEX]

    full = np.full((n + 1, n + 1), -np.inf)
    full[1:, :] = scores
    full[np.arange(n + 1), np.arange(n + 1)] = -np.inf
    heads = _chu_liu_edmonds(full)[1:]
    if int(np.sum(heads == ROOT_INDEX)) == 1:
        return [int(h) for h in heads]

    # ROOTの子を1つに固定して解き直し、最良の木を選ぶ
    best: list[int] | None = None
    best_score = -np.inf
    for child in range(1, n + 1):
        constrained = full.copy()
        constrained[1:, ROOT_INDEX] = -np.inf
        constrained[child, ROOT_INDEX] = full[child, ROOT_INDEX]
        candidate = [int(h) for h in _chu_liu_edmonds(constrained)[1:]]
        score = tree_score(full, candidate)
        if score > best_score:
            best, best_score = candidate, score

    logger.debug(f"mst_decode: single-root constraint resolved, {best_score=:.4f}")
    return best  # type: ignore
