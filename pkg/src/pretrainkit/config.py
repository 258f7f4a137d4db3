"""Flat key=value config files with repeatable [encoder] sections.

Example::

    # 2-layer BERT-style model
    embedding = bert
    hidden = 64
    seq_length = 64
    target = mlm:1.0,nsp:1.0

    [encoder]
    kind = transformer
    layers = 2
    heads = 4

Every CLI flag overrides its config key; [encoder] sections accumulate into
an ordered stack. The same option names work from either source, which
keeps experiment configs diff-able.
"""

from .errors import SpecError
from .specs import (EMBEDDING_KINDS, ENCODER_KINDS, PRETRAIN_TARGET_KINDS,
                    EncoderConfig, ModelSpec, SubencoderConfig, TargetEntry)


def parse_config(text, source="<config>"):
    """Parse config text into {key: str, ..., "encoders": [dict, ...]}."""
    opts = {}
    encoders = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name != "encoder":
                raise SpecError(f"{source}:{lineno}: unknown section [{name}]")
            section = {}
            encoders.append(section)
            continue
        if "=" not in line:
            raise SpecError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if section is not None:
            section[key] = value
        else:
            opts[key] = value
    if encoders:
        opts["encoders"] = encoders
    return opts


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=path)


def merge_options(config_opts, overrides):
    """Config keys overridden by any non-None CLI value."""
    merged = dict(config_opts)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _int(opts, key, default):
    v = opts.get(key, default)
    try:
        return int(v)
    except (TypeError, ValueError):
        raise SpecError(f"option {key} must be an integer, got {v!r}")


def _float(opts, key, default):
    v = opts.get(key, default)
    try:
        return float(v)
    except (TypeError, ValueError):
        raise SpecError(f"option {key} must be a number, got {v!r}")


def _bool(opts, key, default=False):
    v = opts.get(key, default)
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def parse_targets(text, classes=0, tie_output=False):
    """'mlm:1.0,nsp:0.5' -> TargetEntry list; bare kinds weigh 1.0."""
    entries = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        kind, _, weight = part.partition(":")
        kind = kind.strip()
        if kind not in PRETRAIN_TARGET_KINDS:
            raise SpecError(
                f"unknown target {kind!r}; choose from {PRETRAIN_TARGET_KINDS}"
            )
        w = 1.0
        if weight:
            try:
                w = float(weight)
            except ValueError:
                raise SpecError(f"bad target weight in {part!r}")
        entries.append(TargetEntry(kind, w, classes=classes,
                                   tie_output=tie_output))
    if not entries:
        raise SpecError(f"no targets in {text!r}")
    return entries


def _encoder_from_kind(kind, opts, hidden):
    kind = kind.strip()
    mask = "bidirectional"
    if kind == "transformer-causal":
        kind, mask = "transformer", "causal"
    elif kind.endswith("-causal"):
        kind, mask = kind[: -len("-causal")], "causal"
    if kind not in ENCODER_KINDS:
        raise SpecError(f"unknown encoder {kind!r}; choose from {ENCODER_KINDS}")
    return EncoderConfig(
        kind=kind,
        layers=_int(opts, "layers", 1),
        hidden=hidden,
        heads=_int(opts, "heads", 4),
        ffn=_int(opts, "ffn", 0),
        kernel=_int(opts, "kernel", 3),
        mask=opts.get("mask", mask),
        bidirectional_rnn=_bool(opts, "bidirectional_rnn"),
    )


def build_spec(opts):
    """Construct a ModelSpec from merged config/CLI options."""
    hidden = _int(opts, "hidden", 64)
    embedding = str(opts.get("embedding", "bert"))
    if embedding not in EMBEDDING_KINDS:
        raise SpecError(
            f"unknown embedding {embedding!r}; choose from {EMBEDDING_KINDS}"
        )

    if "encoders" in opts:  # [encoder] sections
        encoders = []
        for section in opts["encoders"]:
            sec = dict(section)
            kind = sec.pop("kind", "transformer")
            sec_opts = {**opts, **sec}
            enc_hidden = _int(sec, "hidden", hidden)
            cfg = _encoder_from_kind(kind, sec_opts, enc_hidden)
            encoders.append(cfg)
    else:
        names = str(opts.get("encoder", "transformer")).split(",")
        encoders = [_encoder_from_kind(name, opts, hidden) for name in names]

    classes = _int(opts, "classes", 0)
    targets = parse_targets(opts.get("target", "mlm"), classes=classes,
                            tie_output=_bool(opts, "tie_output"))

    sub = None
    sub_kind = str(opts.get("subencoder", "none"))
    if sub_kind not in ("none", ""):
        sub = SubencoderConfig(
            kind=sub_kind,
            sub_width=_int(opts, "sub_width", 16),
            hidden=_int(opts, "sub_hidden", hidden),
            pooling=str(opts.get("sub_pooling", "mean")),
            combine=str(opts.get("sub_combine", "sum")),
        )

    return ModelSpec(
        embedding=embedding,
        hidden=hidden,
        seq_length=_int(opts, "seq_length", 64),
        subencoder=sub,
        encoders=encoders,
        targets=targets,
        dropout=_float(opts, "dropout", 0.1),
        allow_adapters=_bool(opts, "allow_adapters"),
    )
