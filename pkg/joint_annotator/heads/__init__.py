from logging import NullHandler, getLogger

from joint_annotator.heads.dep import ArcScores, DepHead, DepTree, ParserReprs, label_decode
from joint_annotator.heads.mst import mst_decode, tree_score, validate_tree
from joint_annotator.heads.ner import (
    NerHead,
    NerPath,
    crf_nll,
    crf_viterbi,
    log_partition,
    path_score,
)
from joint_annotator.heads.pos import PosHead, TagEmbedding, hard_tags

getLogger(__package__).addHandler(NullHandler())

__all__ = [
    "ArcScores",
    "DepHead",
    "DepTree",
    "NerHead",
    "NerPath",
    "ParserReprs",
    "PosHead",
    "TagEmbedding",
    "crf_nll",
    "crf_viterbi",
    "hard_tags",
    "label_decode",
    "log_partition",
    "mst_decode",
    "path_score",
    "tree_score",
    "validate_tree",
]
