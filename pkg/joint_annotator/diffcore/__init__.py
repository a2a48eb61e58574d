from logging import NullHandler, getLogger

from joint_annotator.diffcore.params import (
    ParamStore,
    adamw_step,
    clip_grad_norm,
    embedding_normal,
    glorot_uniform,
)
from joint_annotator.diffcore.tensor import Graph, Tensor, backward, constant, record

getLogger(__package__).addHandler(NullHandler())

__all__ = [
    "Graph",
    "ParamStore",
    "Tensor",
    "adamw_step",
    "backward",
    "clip_grad_norm",
    "constant",
    "embedding_normal",
    "glorot_uniform",
    "record",
]
