from logging import NullHandler, getLogger

from joint_annotator.encoder.bpe import BpeModel, SubwordSegmentation, train_bpe
from joint_annotator.encoder.core import (
    DeskEncoder,
    Encoder,
    EncoderConfig,
    EncoderKind,
    PrecomputedEncoder,
    build_encoder,
    sinusoidal_positions,
)

getLogger(__package__).addHandler(NullHandler())

__all__ = [
    "BpeModel",
    "DeskEncoder",
    "Encoder",
    "EncoderConfig",
    "EncoderKind",
    "PrecomputedEncoder",
    "SubwordSegmentation",
    "build_encoder",
    "sinusoidal_positions",
    "train_bpe",
]
