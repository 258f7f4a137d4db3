"""Declarative model description: what to assemble, validated before allocation."""

from dataclasses import asdict, dataclass, field

from .errors import SpecError

ENCODER_KINDS = ("lstm", "gru", "cnn", "gatedcnn", "attnn", "transformer")
PRETRAIN_TARGET_KINDS = ("lm", "mlm", "nsp", "ae", "nmt", "cls", "bert")
# "tagger" is the fine-tuning sequence-labeling head; it shares the target
# plumbing but is not offered as a pre-training objective.
TARGET_KINDS = PRETRAIN_TARGET_KINDS + ("tagger",)
EMBEDDING_KINDS = ("plain", "bert")


@dataclass
class SubencoderConfig:
    kind: str = "rnn"              # rnn | cnn
    sub_width: int = 16
    hidden: int = 64               # output width H'
    pooling: str = "mean"          # mean | max
    combine: str = "sum"           # sum | concat-project


@dataclass
class EncoderConfig:
    kind: str = "transformer"
    layers: int = 1
    hidden: int = 64
    heads: int = 4                 # transformer only
    ffn: int = 0                   # transformer feed-forward width; 0 -> 4*hidden
    kernel: int = 3                # cnn / gatedcnn
    mask: str = "bidirectional"    # bidirectional | causal
    bidirectional_rnn: bool = False

    def __post_init__(self):
        if self.ffn == 0:
            self.ffn = 4 * self.hidden

    @property
    def causal_capable(self):
        """May sit under an LM target without leaking future positions."""
        return self.kind in ("lstm", "gru") or self.mask == "causal"


@dataclass
class TargetEntry:
    kind: str
    weight: float = 1.0
    classes: int = 0               # cls only
    tie_output: bool = False       # ae/nmt decoder projection tied to word table


@dataclass
class ModelSpec:
    """One assembled model: embedding, optional subencoder, encoder stack, targets."""

    embedding: str = "bert"
    hidden: int = 64
    seq_length: int = 64
    vocab_size: int = 0
    subencoder: SubencoderConfig = None
    encoders: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    dropout: float = 0.1
    allow_adapters: bool = False

    def normalized(self):
        """Expand the composite 'bert' target into mlm + nsp, equal weights."""
        targets = []
        for t in self.targets:
            if t.kind == "bert":
                targets.append(TargetEntry("mlm", t.weight))
                targets.append(TargetEntry("nsp", t.weight))
            else:
                targets.append(t)
        return ModelSpec(
            embedding=self.embedding, hidden=self.hidden,
            seq_length=self.seq_length, vocab_size=self.vocab_size,
            subencoder=self.subencoder, encoders=list(self.encoders),
            targets=targets, dropout=self.dropout,
            allow_adapters=self.allow_adapters,
        )

    def validate(self):
        if self.embedding not in EMBEDDING_KINDS:
            raise SpecError(f"unknown embedding kind {self.embedding!r}")
        if not self.encoders:
            raise SpecError("spec needs at least one encoder")
        if not self.targets:
            raise SpecError("spec needs at least one target")
        if self.hidden < 1 or self.seq_length < 4:
            raise SpecError(
                f"hidden={self.hidden} / seq_length={self.seq_length} too small"
            )

        wants_bert_target = any(t.kind == "bert" for t in self.targets)
        if wants_bert_target and self.embedding != "bert":
            raise SpecError(
                "the bert target needs the bert embedding (NSP reads segment ids)"
            )

        kinds = set()
        for t in self.targets:
            if t.kind not in TARGET_KINDS:
                raise SpecError(f"unknown target kind {t.kind!r}")
            if t.weight <= 0:
                raise SpecError(f"target {t.kind} weight must be > 0, got {t.weight}")
            if t.kind in kinds:
                raise SpecError(f"duplicate target kind {t.kind}")
            kinds.add(t.kind)
            if t.kind in ("cls", "tagger") and t.classes < 2:
                raise SpecError(
                    f"{t.kind} target needs classes >= 2, got {t.classes} "
                    "(set it explicitly or let the pipeline scan the corpus)"
                )

        for i, enc in enumerate(self.encoders):
            if enc.kind not in ENCODER_KINDS:
                raise SpecError(f"encoder {i}: unknown kind {enc.kind!r}")
            if enc.layers < 1:
                raise SpecError(f"encoder {i}: layers must be >= 1")
            if enc.mask not in ("bidirectional", "causal"):
                raise SpecError(f"encoder {i}: unknown mask mode {enc.mask!r}")
            if enc.kind == "transformer" and enc.hidden % enc.heads != 0:
                raise SpecError(
                    f"encoder {i}: heads ({enc.heads}) must divide hidden "
                    f"({enc.hidden})"
                )
            if enc.kind in ("cnn", "gatedcnn"):
                if enc.mask == "bidirectional" and enc.kernel % 2 == 0:
                    raise SpecError(
                        f"encoder {i}: bidirectional convolution needs an odd "
                        f"kernel width, got {enc.kernel}"
                    )

        if "lm" in kinds and not self.encoders[-1].causal_capable:
            last = self.encoders[-1]
            raise SpecError(
                f"lm target over a bidirectional {last.kind} encoder leaks "
                "future tokens; use lstm/gru or a causal mask mode"
            )

        widths = [self.hidden] + [e.hidden for e in self.encoders]
        if not self.allow_adapters:
            for i in range(len(self.encoders)):
                if widths[i] != widths[i + 1]:
                    raise SpecError(
                        f"encoder {i} input width {widths[i]} != its hidden "
                        f"width {widths[i + 1]}; set allow_adapters to insert "
                        "a linear map"
                    )
        if self.subencoder is not None:
            if self.subencoder.kind not in ("rnn", "cnn"):
                raise SpecError(
                    f"unknown subencoder kind {self.subencoder.kind!r}"
                )
            if self.subencoder.pooling not in ("mean", "max"):
                raise SpecError(
                    f"unknown subencoder pooling {self.subencoder.pooling!r}"
                )
            if (self.subencoder.combine == "sum"
                    and self.subencoder.hidden != self.hidden):
                raise SpecError(
                    f"subencoder sum-combine needs hidden == {self.hidden}, "
                    f"got {self.subencoder.hidden}"
                )
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        sub = d.get("subencoder")
        d["subencoder"] = SubencoderConfig(**sub) if sub else None
        d["encoders"] = [EncoderConfig(**e) for e in d.get("encoders", [])]
        d["targets"] = [TargetEntry(**t) for t in d.get("targets", [])]
        return cls(**d)
