"""The pre-training loop: batches -> forward -> weighted loss -> backward -> Adam."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import batch_stream, prefetch, validate_corpus
from .errors import NumericError
from .optim import Adam, clip_global_norm
from .tensor import Tape


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    log_interval: int = 10
    checkpoint_interval: int = 0      # 0 -> only at the end
    grad_clip: float = 1.0            # global norm; <= 0 disables
    warmup_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mask_rate: float = 0.15
    mask_proportions: tuple = (0.8, 0.1, 0.1)
    nsp_negative_rate: float = 0.5
    tokenize_mode: str = "space"
    use_prefetch: bool = False


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    records: list = field(default_factory=list)
    skipped: int = 0
    checkpoint_path: str = None

    def smoothed(self, fraction=0.1):
        """Mean loss over the first and last `fraction` of steps."""
        k = max(1, int(len(self.losses) * fraction))
        return float(np.mean(self.losses[:k])), float(np.mean(self.losses[-k:]))


def data_config(model, cfg):
    dcfg = {
        "seq_length": model.spec.seq_length,
        "batch_size": cfg.batch_size,
        "mask_rate": cfg.mask_rate,
        "mask_proportions": cfg.mask_proportions,
        "nsp_negative_rate": cfg.nsp_negative_rate,
        "tokenize_mode": cfg.tokenize_mode,
    }
    for entry in model.spec.targets:
        if entry.kind == "cls":
            dcfg["n_classes"] = entry.classes
    return dcfg


def _format_metrics(metrics):
    parts = []
    for kind, m in metrics.items():
        if not math.isnan(m["loss"]):
            parts.append(f"{kind}_loss={m['loss']:.4f}")
        if m["counted"]:
            parts.append(f"{kind}_acc={m['correct'] / m['counted']:.4f}")
    return " ".join(parts)


def train(model, vocab, corpus_path, cfg, out_path=None, metrics_path=None,
          optimizer=None, log=print):
    """Run cfg.steps optimization steps over the corpus.

    Deterministic for a fixed (assembly seed, cfg.seed): the batch stream,
    dropout, and optimizer are all seeded. Aborts with NumericError on a
    non-finite loss. Returns a TrainResult; writes a checkpoint to out_path
    (and every cfg.checkpoint_interval steps) when given.
    """
    from .checkpoint import save_checkpoint

    kinds = model.target_kinds()
    dcfg = data_config(model, cfg)
    validate_corpus(corpus_path, set(kinds), dcfg)
    stream = batch_stream(corpus_path, vocab, kinds, dcfg, cfg.seed)
    if cfg.use_prefetch:
        stream = prefetch(stream)

    params = model.trainable_parameters()
    if optimizer is None:
        optimizer = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                         eps=cfg.eps, warmup_steps=cfg.warmup_steps)
    model.seed_dropout(cfg.seed)
    vocab_hash = vocab.content_hash()

    result = TrainResult()
    metrics_fh = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        step = 0
        while step < cfg.steps:
            batch = next(stream)
            step += 1
            model.zero_grad()
            with Tape() as tape:
                out = model.forward(batch, train=True)
                if out.skip:
                    result.skipped += 1
                    step -= 1
                    if result.skipped > 10 * cfg.steps + 100:
                        raise NumericError(
                            "every batch produced an empty loss; "
                            "corpus and targets are incompatible"
                        )
                    continue
                tape.backward(out.loss)
            loss = float(out.loss.data)
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at step={step} "
                    f"lr={optimizer.current_lr():.3g} batch={batch.index}"
                )
            clip_global_norm(params.values(), cfg.grad_clip)
            optimizer.step()
            result.losses.append(loss)

            if step % cfg.log_interval == 0 or step == cfg.steps:
                detail = _format_metrics(out.metrics)
                log(f"step={step} loss={loss:.4f}" + (f" {detail}" if detail else ""))
                record = {"step": step, "loss": loss}
                for kind, m in out.metrics.items():
                    record[f"{kind}_loss"] = m["loss"]
                    if m["counted"]:
                        record[f"{kind}_acc"] = m["correct"] / m["counted"]
                result.records.append(record)
                if metrics_fh:
                    metrics_fh.write(json.dumps(record) + "\n")
            if (out_path and cfg.checkpoint_interval
                    and step % cfg.checkpoint_interval == 0):
                save_checkpoint(model, out_path, step=step,
                                vocab_hash=vocab_hash, optimizer=optimizer)
    finally:
        if metrics_fh:
            metrics_fh.close()

    if out_path:
        result.checkpoint_path = save_checkpoint(
            model, out_path, step=cfg.steps, vocab_hash=vocab_hash,
            optimizer=optimizer,
        )
    return result
