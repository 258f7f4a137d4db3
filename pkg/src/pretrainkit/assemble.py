"""Wire a ModelSpec into a trainable model with hierarchically named parameters."""

import numpy as np

from .encoders import WidthAdapter, build_encoder, run_stack
from .errors import SpecError
from .layers import BertEmbedding, PlainEmbedding, Subencoder, combine
from .modules import Initializer, Module
from .targets import CombinedTarget, build_target
from .vocab import SubwordTable


class Model(Module):
    """embedding -> (subencoder combine) -> encoder stack -> weighted targets.

    Parameter names follow the fixed scheme embedding.*, subencoder.*,
    encoder.<i>.*, target.<kind>.* so checkpoints stay compatible across
    target swaps.
    """

    def __init__(self, spec, embedding, subencoder, encoder_list, target):
        self.embedding = embedding
        self.subencoder = subencoder
        self.encoder = encoder_list
        self.target = target
        self._spec = spec
        self._rng = np.random.default_rng(0)

    @property
    def spec(self):
        return self._spec

    def seed_dropout(self, seed):
        self._rng = np.random.default_rng(seed)

    def encode(self, batch, train=False):
        """Hidden states (B, T, H_out) for a batch."""
        x = self.embedding(batch, train=train, rng=self._rng)
        if self.subencoder is not None:
            sub = self.subencoder(batch.token_ids)
            x = combine(x, sub, self.subencoder.combine_mode,
                        self.subencoder.proj)
        return run_stack(self.encoder, x, batch.pad_mask, train=train,
                         rng=self._rng)

    def forward(self, batch, train=False):
        hidden = self.encode(batch, train=train)
        return self.target(hidden, batch, train=train)

    def target_kinds(self):
        return self.target.kinds


def assemble(spec, vocab, seed=0, subword_table=None):
    """Build a Model from a validated spec; same spec + seed => identical
    initial parameters (normal, std 0.02; zero biases; unit gains)."""
    spec.validate()          # catches composite-target constraints (bert)
    spec = spec.normalized()
    spec.vocab_size = len(vocab)
    spec.validate()
    init = Initializer(seed)

    if spec.embedding == "bert":
        embedding = BertEmbedding(len(vocab), spec.hidden, spec.seq_length, init)
    else:
        embedding = PlainEmbedding(len(vocab), spec.hidden, init)

    subencoder = None
    if spec.subencoder is not None:
        table = subword_table or SubwordTable(vocab)
        subencoder = Subencoder(spec.subencoder, table, init,
                                word_width=spec.hidden)

    encoder_list = []
    width = spec.hidden
    for cfg in spec.encoders:
        if width != cfg.hidden:
            if not spec.allow_adapters:
                raise SpecError(
                    f"encoder width {cfg.hidden} does not match incoming "
                    f"width {width}; set allow_adapters"
                )
            inner = build_encoder(cfg, cfg.hidden, init, drop_rate=spec.dropout)
            encoder_list.append(WidthAdapter(inner, width, cfg.hidden, init))
        else:
            encoder_list.append(
                build_encoder(cfg, width, init, drop_rate=spec.dropout)
            )
        width = cfg.hidden

    pooling = "cls" if spec.encoders[-1].kind == "transformer" else "max"
    word_table = embedding.word
    heads = {}
    entries = []
    for entry in spec.targets:
        heads[entry.kind] = build_target(entry, width, len(vocab), word_table,
                                         init, pooling=pooling)
        entries.append((entry.kind, entry.weight))
    target = CombinedTarget(entries, heads)

    return Model(spec, embedding, subencoder, encoder_list, target)
