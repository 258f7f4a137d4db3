"""Training objectives: word-level, sentence-level, supervised, and weighted mixes.

Every target maps encoder output plus its label block to a scalar loss and
counting metrics. Batches where a target has nothing to supervise yield
loss None; the combined target sums the non-empty ones and signals
skip-batch when all are empty.
"""

import math

import numpy as np

from .errors import DataError, EmptyLossError, SpecError
from .layers import GRUCell
from .modules import Linear, Module
from .tensor import (IGNORE_ID, Tensor, add, concat, cross_entropy,
                     gather_rows, matmul, max_axis, mul, narrow, reshape,
                     scale, softmax, stack_time, sum_axis, tanh, transpose)
from .vocab import CLS


class TargetOutput:
    """loss (scalar Tensor or None) + per-target counters for logging."""

    def __init__(self, loss, metrics):
        self.loss = loss
        self.metrics = metrics

    @property
    def skip(self):
        return self.loss is None


def _token_accuracy(logits_data, labels):
    keep = labels != IGNORE_ID
    counted = int(keep.sum())
    if counted == 0:
        return 0, 0
    pred = logits_data.argmax(axis=-1)
    correct = int((pred[keep] == labels[keep]).sum())
    return correct, counted


class LmTarget(Module):
    """Next-token prediction; the assembly layer guarantees a causal encoder."""

    kind = "lm"

    def __init__(self, width, vocab_size, init):
        self.proj = Linear(width, vocab_size, init)

    def __call__(self, hidden, batch, train=False):
        if batch.lm_labels is None:
            raise DataError("lm target needs next-token labels in the batch")
        b, t, h = hidden.data.shape
        logits = self.proj(reshape(hidden, (b * t, h)))
        labels = batch.lm_labels.reshape(-1)
        try:
            loss = cross_entropy(logits, labels)
        except EmptyLossError:
            return TargetOutput(None, {self.kind: _empty_metrics()})
        correct, counted = _token_accuracy(logits.data, labels)
        return TargetOutput(loss, {self.kind: _metrics(loss, correct, counted)})


class MlmTarget(Module):
    """Masked-token prediction over the positions selected by the masker."""

    kind = "mlm"

    def __init__(self, width, vocab_size, init):
        self.proj = Linear(width, vocab_size, init)

    def __call__(self, hidden, batch, train=False):
        if batch.mlm_labels is None:
            raise DataError("mlm target needs masked-token labels in the batch")
        b, t, h = hidden.data.shape
        logits = self.proj(reshape(hidden, (b * t, h)))
        labels = batch.mlm_labels.reshape(-1)
        try:
            loss = cross_entropy(logits, labels)
        except EmptyLossError:
            return TargetOutput(None, {self.kind: _empty_metrics()})
        correct, counted = _token_accuracy(logits.data, labels)
        return TargetOutput(loss, {self.kind: _metrics(loss, correct, counted)})


class NspTarget(Module):
    """Binary continuity classification over a pooled pair representation.

    The head touches no vocabulary-sized tensor: pooled tanh projection then
    a 2-way classifier. Pooling follows the per-encoder convention: the
    [CLS] position for transformers, max over real positions for recurrent
    and convolutional encoders (which have no [CLS] summary there).
    """

    kind = "nsp"

    def __init__(self, width, init, pooling="cls"):
        self.pool = Linear(width, width, init)
        self.out = Linear(width, 2, init)
        self.pooling = pooling

    def __call__(self, hidden, batch, train=False):
        if batch.pair_label is None:
            raise DataError("nsp target needs pair labels in the batch")
        if not (batch.token_ids[:, 0] == CLS).all():
            raise DataError("nsp target expects [CLS] at position 0 of every row")
        b, t, h = hidden.data.shape
        if self.pooling == "cls":
            summary = reshape(narrow(hidden, 1, 0, 1), (b, h))
        else:
            keep = batch.pad_mask.astype(np.float64)[:, :, None]
            summary = max_axis(add(hidden, (keep - 1.0) * 1e30), 1)
        pooled = tanh(self.pool(summary))
        logits = self.out(pooled)
        try:
            loss = cross_entropy(logits, batch.pair_label)
        except EmptyLossError:
            return TargetOutput(None, {self.kind: _empty_metrics()})
        correct, counted = _token_accuracy(logits.data, batch.pair_label)
        return TargetOutput(loss, {self.kind: _metrics(loss, correct, counted)})


class ClsTarget(Module):
    """n-way classification over a pooled sentence representation.

    pooling 'cls' reads position 0 (transformer convention); 'max' pools
    over real positions (recurrent / convolutional encoders); 'mean'
    averages over real positions.
    """

    kind = "cls"

    def __init__(self, width, n_classes, init, pooling="max"):
        if n_classes < 2:
            raise SpecError(f"cls target needs >= 2 classes, got {n_classes}")
        self.out = Linear(width, n_classes, init)
        self.n_classes = n_classes
        self.pooling = pooling

    def pooled(self, hidden, batch):
        b, t, h = hidden.data.shape
        if self.pooling == "cls":
            return reshape(narrow(hidden, 1, 0, 1), (b, h))
        keep = batch.pad_mask.astype(np.float64)[:, :, None]
        if self.pooling == "mean":
            summed = sum_axis(mul(hidden, keep), 1)
            return mul(summed, 1.0 / keep.sum(axis=1))
        shifted = add(hidden, (keep - 1.0) * 1e30)
        return max_axis(shifted, 1)

    def logits(self, hidden, batch):
        return self.out(self.pooled(hidden, batch))

    def __call__(self, hidden, batch, train=False):
        if batch.class_label is None:
            raise DataError("cls target needs class labels in the batch")
        if batch.class_label.max() >= self.n_classes:
            raise DataError(
                f"class label {int(batch.class_label.max())} >= "
                f"n_classes {self.n_classes}"
            )
        logits = self.logits(hidden, batch)
        try:
            loss = cross_entropy(logits, batch.class_label)
        except EmptyLossError:
            return TargetOutput(None, {self.kind: _empty_metrics()})
        correct, counted = _token_accuracy(logits.data, batch.class_label)
        return TargetOutput(loss, {self.kind: _metrics(loss, correct, counted)})


class SeqDecoder(Module):
    """Single-layer GRU decoder with dot-product cross-attention.

    Embeds target tokens through the shared word table, attends over the
    encoder outputs with the previous hidden state as query, and projects
    each state to vocabulary logits (optionally through the tied word table).
    """

    def __init__(self, width, vocab_size, word_table, init, tie_output=False):
        self.cell = GRUCell(2 * width, width, init)
        self.tie_output = tie_output
        if not tie_output:
            self.proj = Linear(width, vocab_size, init)
        self._word = word_table
        self._width = width

    def _step(self, enc_hidden, att_mask, ids, state, inv_sqrt):
        b, _, h = enc_hidden.data.shape
        emb = gather_rows(self._word, ids)
        query = reshape(state, (b, h, 1))
        scores = add(scale(matmul(enc_hidden, query), inv_sqrt), att_mask)
        attn = softmax(scores, axis=1)  # (B, T_enc, 1)
        ctx = reshape(matmul(transpose(attn, (0, 2, 1)), enc_hidden), (b, h))
        state = self.cell.step(concat([emb, ctx], axis=-1), state)
        if self.tie_output:
            logits = matmul(state, transpose(self._word, (1, 0)))
        else:
            logits = self.proj(state)
        return state, logits

    def __call__(self, enc_hidden, pad_mask, decoder_ids):
        b, t_enc, h = enc_hidden.data.shape
        t_dec = decoder_ids.shape[1]
        att_mask = np.where(pad_mask[:, :, None], 0.0, -1e9)
        state = Tensor(np.zeros((b, h)))
        logits_steps = []
        inv_sqrt = 1.0 / math.sqrt(h)
        for step in range(t_dec):
            state, step_logits = self._step(enc_hidden, att_mask,
                                            decoder_ids[:, step], state,
                                            inv_sqrt)
            logits_steps.append(step_logits)
        return stack_time(logits_steps)  # (B, T_dec, V)

    def greedy_decode(self, enc_hidden, pad_mask, max_len, stop_id):
        """Evaluation-time generation: feed back the argmax token each step."""
        b, _, h = enc_hidden.data.shape
        att_mask = np.where(pad_mask[:, :, None], 0.0, -1e9)
        state = Tensor(np.zeros((b, h)))
        inv_sqrt = 1.0 / math.sqrt(h)
        ids = np.full(b, CLS, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        rows = [[] for _ in range(b)]
        for _ in range(max_len):
            state, logits = self._step(enc_hidden, att_mask, ids, state,
                                       inv_sqrt)
            ids = logits.data.argmax(axis=-1)
            for i in range(b):
                if not done[i]:
                    if ids[i] == stop_id:
                        done[i] = True
                    else:
                        rows[i].append(int(ids[i]))
            if done.all():
                break
        return rows


class DecodeTarget(Module):
    """Shared machinery for AE (reconstruct input) and NMT (decode the pair)."""

    def __init__(self, kind, width, vocab_size, word_table, init,
                 tie_output=False):
        self.kind = kind
        self.decoder = SeqDecoder(width, vocab_size, word_table, init,
                                  tie_output)

    def __call__(self, hidden, batch, train=False):
        if batch.decoder_ids is None or batch.decoder_labels is None:
            raise DataError(f"{self.kind} target needs decoder ids/labels")
        logits = self.decoder(hidden, batch.pad_mask, batch.decoder_ids)
        b, t, v = logits.data.shape
        flat = reshape(logits, (b * t, v))
        labels = batch.decoder_labels.reshape(-1)
        try:
            loss = cross_entropy(flat, labels)
        except EmptyLossError:
            return TargetOutput(None, {self.kind: _empty_metrics()})
        correct, counted = _token_accuracy(flat.data, labels)
        return TargetOutput(loss, {self.kind: _metrics(loss, correct, counted)})


class TaggerTarget(Module):
    """Per-token linear projection + cross-entropy, for sequence labeling."""

    kind = "tagger"

    def __init__(self, width, n_classes, init):
        self.proj = Linear(width, n_classes, init)
        self.n_classes = n_classes

    def logits(self, hidden):
        b, t, h = hidden.data.shape
        return reshape(self.proj(reshape(hidden, (b * t, h))),
                       (b, t, self.n_classes))

    def __call__(self, hidden, batch, train=False):
        if batch.tag_labels is None:
            raise DataError("tagger target needs per-token tag labels")
        logits = self.logits(hidden)
        b, t, k = logits.data.shape
        flat = reshape(logits, (b * t, k))
        labels = batch.tag_labels.reshape(-1)
        try:
            loss = cross_entropy(flat, labels)
        except EmptyLossError:
            return TargetOutput(None, {self.kind: _empty_metrics()})
        correct, counted = _token_accuracy(flat.data, labels)
        return TargetOutput(loss, {self.kind: _metrics(loss, correct, counted)})


class CombinedTarget(Module):
    """Weighted sum of targets; total loss = sum(w_i * loss_i) over non-empty."""

    def __init__(self, entries, heads):
        self._entries = entries  # [(kind, weight)] in spec order
        for kind, head in heads.items():
            setattr(self, kind, head)

    @property
    def kinds(self):
        return [kind for kind, _ in self._entries]

    def head(self, kind):
        return getattr(self, kind)

    def __call__(self, hidden, batch, train=False):
        total = None
        metrics = {}
        for kind, weight in self._entries:
            out = getattr(self, kind)(hidden, batch, train=train)
            metrics.update(out.metrics)
            if out.loss is not None:
                term = scale(out.loss, weight)
                total = term if total is None else add(total, term)
        return TargetOutput(total, metrics)


def _metrics(loss, correct, counted):
    return {"loss": float(loss.data), "correct": correct, "counted": counted}


def _empty_metrics():
    return {"loss": math.nan, "correct": 0, "counted": 0}


def build_target(entry, width, vocab_size, word_table, init, pooling="max"):
    if entry.kind == "lm":
        return LmTarget(width, vocab_size, init)
    if entry.kind == "mlm":
        return MlmTarget(width, vocab_size, init)
    if entry.kind == "nsp":
        return NspTarget(width, init, pooling=pooling)
    if entry.kind == "cls":
        return ClsTarget(width, entry.classes, init, pooling=pooling)
    if entry.kind in ("ae", "nmt"):
        return DecodeTarget(entry.kind, width, vocab_size, word_table, init,
                            tie_output=entry.tie_output)
    if entry.kind == "tagger":
        return TaggerTarget(width, entry.classes, init)
    raise SpecError(f"unknown target kind {entry.kind!r}")
