"""Assemble-on-demand language-model pre-training toolkit.

Compose an embedding, an optional subword subencoder, a stack of encoders,
and a weighted set of training targets from configuration; pre-train on
plain-text corpora and fine-tune on labeled downstream tasks through a
three-stage schedule.
"""

__version__ = "0.1.0"

from .assemble import Model, assemble  # noqa: F401
from .specs import (EncoderConfig, ModelSpec, SubencoderConfig,  # noqa: F401
                    TargetEntry)
from .tensor import IGNORE_ID, Tape, Tensor  # noqa: F401
from .vocab import Vocabulary  # noqa: F401
