"""Corpus reading, example generation per target, masking, and batching."""

import queue
import threading
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .tensor import IGNORE_ID
from .vocab import CLS, N_RESERVED, PAD, SEP, MASK, tokenize


@dataclass
class Example:
    """One training example before padding; label blocks are optional."""

    tokens: list
    segments: list = None
    lm_labels: list = None
    pair_label: int = None
    class_label: int = None
    decoder_in: list = None
    decoder_out: list = None
    tag_labels: list = None


@dataclass
class Batch:
    """Padded id matrices plus per-target label blocks.

    pad_mask is True exactly on non-pad positions. Token-level label rows
    carry IGNORE_ID wherever no supervision applies.
    """

    token_ids: np.ndarray
    segment_ids: np.ndarray
    pad_mask: np.ndarray
    lm_labels: np.ndarray = None
    mlm_labels: np.ndarray = None
    pair_label: np.ndarray = None
    class_label: np.ndarray = None
    decoder_ids: np.ndarray = None
    decoder_labels: np.ndarray = None
    tag_labels: np.ndarray = None
    index: int = 0

    @property
    def size(self):
        return self.token_ids.shape[0]


def read_lines(path):
    """Non-blank corpus lines, stripped of trailing newlines."""
    with open(path, encoding="utf-8") as fh:
        return [ln.rstrip("\n") for ln in fh if ln.strip()]


def read_documents(path):
    """Documents as lists of sentence strings; blank lines split documents."""
    docs = [[]]
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.rstrip("\n")
            if ln.strip():
                docs[-1].append(ln)
            elif docs[-1]:
                docs.append([])
    if docs and not docs[-1]:
        docs.pop()
    return docs


# ---------------------------------------------------------------------------
# per-target example generators
# ---------------------------------------------------------------------------


def make_lm_examples(lines, vocab, mode="space", seq_len=64):
    """Next-token pairs: input [a, b, c] -> labels [b, c, IGNORE]."""
    for line in lines:
        ids = vocab.ids(tokenize(line, mode))[:seq_len]
        if len(ids) < 2:
            continue
        labels = ids[1:] + [IGNORE_ID]
        yield Example(tokens=ids, lm_labels=labels)


def make_ae_examples(lines, vocab, mode="space", seq_len=64):
    """Reconstruction pairs: decoder input [CLS]+x, decoder labels x+[SEP]."""
    for line in lines:
        ids = vocab.ids(tokenize(line, mode))[: seq_len - 1]
        if not ids:
            continue
        yield Example(tokens=ids, decoder_in=[CLS] + ids, decoder_out=ids + [SEP])


def make_nmt_examples(lines, vocab, mode="space", seq_len=64):
    """Parallel pairs from '<source>\\t<target>' lines."""
    for lineno, line in enumerate(lines, 1):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise DataError(f"line {lineno}: expected '<source>\\t<target>'")
        src = vocab.ids(tokenize(parts[0], mode))[:seq_len]
        tgt = vocab.ids(tokenize(parts[1], mode))[: seq_len - 1]
        yield Example(tokens=src, decoder_in=[CLS] + tgt, decoder_out=tgt + [SEP])


def make_cls_examples(lines, vocab, mode="space", seq_len=64, n_classes=None):
    """Labeled rows from '<label-int>\\t<text>' lines, packed [CLS] x [SEP]."""
    for lineno, line in enumerate(lines, 1):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"line {lineno}: expected '<label-int>\\t<text>'")
        try:
            label = int(parts[0])
        except ValueError:
            raise DataError(f"line {lineno}: label {parts[0]!r} is not an integer")
        if label < 0 or (n_classes is not None and label >= n_classes):
            raise DataError(
                f"line {lineno}: label {label} outside [0, {n_classes})"
            )
        ids = vocab.ids(tokenize(parts[1], mode))[: seq_len - 2]
        yield Example(
            tokens=[CLS] + ids + [SEP],
            segments=[0] * (len(ids) + 2),
            class_label=label,
        )


def make_nsp_examples(documents, negative_rate, seed, vocab=None, mode="space",
                      seq_len=64):
    """Sentence-pair stream: ([CLS] A [SEP] B [SEP], continuity label).

    documents may hold token-id lists or raw sentence strings (tokenized
    with `vocab`/`mode`). With probability 1 - negative_rate, B is A's true
    successor (label 1); otherwise B is drawn from a different document
    (label 0). Pairs over the length cap are truncated longest-first.
    """
    if not 0.0 < negative_rate < 1.0:
        raise DataError(f"negative_rate must lie in (0, 1), got {negative_rate}")
    docs = []
    for doc in documents:
        sents = []
        for sent in doc:
            if isinstance(sent, str):
                sent = vocab.ids(tokenize(sent, mode))
            if sent:
                sents.append(list(sent))
        if len(sents) >= 1:
            docs.append(sents)
    if len(docs) < 2:
        raise DataError("NSP needs at least 2 documents to sample negatives from")
    rng = np.random.default_rng(seed)
    budget = seq_len - 3
    for d, sents in enumerate(docs):
        for i in range(len(sents) - 1):
            a = list(sents[i])
            if rng.random() >= negative_rate:
                b = list(sents[i + 1])
                label = 1
            else:
                other = int(rng.integers(len(docs) - 1))
                if other >= d:
                    other += 1
                b = list(docs[other][int(rng.integers(len(docs[other])))])
                label = 0
            while len(a) + len(b) > budget:
                longer = a if len(a) >= len(b) else b
                longer.pop()
            tokens = [CLS] + a + [SEP] + b + [SEP]
            segments = [0] * (len(a) + 2) + [1] * (len(b) + 1)
            yield Example(tokens=tokens, segments=segments, pair_label=label)


def apply_mlm_masking(token_ids, mask_rate, rng, vocab_size,
                      proportions=(0.8, 0.1, 0.1)):
    """Corrupt a row for masked-token prediction.

    Positions holding [CLS]/[SEP]/[PAD] are never candidates. Each candidate
    is selected independently with probability mask_rate (at least one is
    forced when mask_rate > 0). Selected positions become [MASK] / a random
    non-reserved token / stay unchanged per `proportions`; the label row
    holds the original id at selected positions and IGNORE_ID elsewhere.
    """
    row = np.asarray(token_ids, dtype=np.int64)
    maskable = (row != PAD) & (row != CLS) & (row != SEP)
    candidates = np.nonzero(maskable)[0]
    if candidates.size == 0:
        raise DataError("row has no maskable position")
    corrupted = row.copy()
    labels = np.full(row.shape, IGNORE_ID, dtype=np.int64)
    if mask_rate <= 0.0:
        return corrupted, labels
    picks = candidates[rng.random(candidates.size) < mask_rate]
    if picks.size == 0:
        picks = candidates[[int(rng.integers(candidates.size))]]
    p_mask, p_rand, _ = proportions
    for pos in picks:
        labels[pos] = row[pos]
        r = rng.random()
        if r < p_mask:
            corrupted[pos] = MASK
        elif r < p_mask + p_rand and vocab_size > N_RESERVED:
            corrupted[pos] = int(rng.integers(N_RESERVED, vocab_size))
        # else: leave the original token in place
    return corrupted, labels


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def _pad_rows(rows, fill):
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), fill, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def collate(examples, index=0):
    """Pad a list of Examples to a common length and stack label blocks."""
    token_ids = _pad_rows([e.tokens for e in examples], PAD)
    b, t = token_ids.shape
    segs = np.zeros((b, t), dtype=np.int64)
    for i, e in enumerate(examples):
        if e.segments:
            segs[i, : len(e.segments)] = e.segments
    pad_mask = token_ids != PAD

    batch = Batch(token_ids=token_ids, segment_ids=segs, pad_mask=pad_mask,
                  index=index)
    if any(e.lm_labels is not None for e in examples):
        batch.lm_labels = _pad_rows(
            [e.lm_labels if e.lm_labels is not None else [IGNORE_ID]
             for e in examples],
            IGNORE_ID,
        )
    if any(e.pair_label is not None for e in examples):
        batch.pair_label = np.array(
            [e.pair_label if e.pair_label is not None else IGNORE_ID
             for e in examples],
            dtype=np.int64,
        )
    if any(e.class_label is not None for e in examples):
        batch.class_label = np.array(
            [e.class_label if e.class_label is not None else IGNORE_ID
             for e in examples],
            dtype=np.int64,
        )
    if any(e.decoder_in is not None for e in examples):
        batch.decoder_ids = _pad_rows(
            [e.decoder_in if e.decoder_in is not None else [PAD]
             for e in examples],
            PAD,
        )
        batch.decoder_labels = _pad_rows(
            [e.decoder_out if e.decoder_out is not None else [IGNORE_ID]
             for e in examples],
            IGNORE_ID,
        )
    if any(e.tag_labels is not None for e in examples):
        batch.tag_labels = _pad_rows(
            [e.tag_labels if e.tag_labels is not None else [IGNORE_ID]
             for e in examples],
            IGNORE_ID,
        )
        if batch.tag_labels.shape[1] < t:
            padded = np.full((b, t), IGNORE_ID, dtype=np.int64)
            padded[:, : batch.tag_labels.shape[1]] = batch.tag_labels
            batch.tag_labels = padded
    return batch


def mask_batch(batch, mask_rate, rng, vocab_size, proportions=(0.8, 0.1, 0.1)):
    """Apply per-row MLM masking in place; fills batch.mlm_labels."""
    corrupted = batch.token_ids.copy()
    labels = np.full(batch.token_ids.shape, IGNORE_ID, dtype=np.int64)
    for i in range(batch.size):
        row = batch.token_ids[i][batch.pad_mask[i]]
        crow, lrow = apply_mlm_masking(row, mask_rate, rng, vocab_size, proportions)
        corrupted[i, : crow.size] = crow
        labels[i, : lrow.size] = lrow
    batch.token_ids = corrupted
    batch.mlm_labels = labels
    return batch


# ---------------------------------------------------------------------------
# corpus -> infinite batch stream, driven by the target set
# ---------------------------------------------------------------------------


def _examples_for_pass(corpus_path, vocab, kinds, cfg, pass_seed):
    mode = cfg.get("tokenize_mode", "space")
    seq_len = cfg.get("seq_length", 64)
    if "ae" in kinds and "nmt" in kinds:
        raise DataError("ae and nmt targets cannot share one decoder block")
    if "nsp" in kinds:
        if "cls" in kinds or "nmt" in kinds:
            raise DataError(
                "nsp cannot share a corpus with cls/nmt targets "
                f"(requested {sorted(kinds)})"
            )
        docs = read_documents(corpus_path)
        examples = list(
            make_nsp_examples(docs, cfg.get("nsp_negative_rate", 0.5),
                              pass_seed, vocab, mode, seq_len)
        )
    elif "nmt" in kinds:
        if "cls" in kinds:
            raise DataError("nmt cannot share a corpus with cls targets")
        examples = list(make_nmt_examples(read_lines(corpus_path), vocab, mode, seq_len))
    elif "cls" in kinds:
        examples = list(
            make_cls_examples(read_lines(corpus_path), vocab, mode, seq_len,
                              cfg.get("n_classes"))
        )
    else:
        lines = read_lines(corpus_path)
        packed = "mlm" in kinds
        examples = []
        for line in lines:
            cap = seq_len - 2 if packed else seq_len
            ids = vocab.ids(tokenize(line, mode))[:cap]
            if not ids:
                continue
            tokens = [CLS] + ids + [SEP] if packed else ids
            examples.append(Example(tokens=tokens, segments=[0] * len(tokens)))
    if not examples:
        raise DataError(f"corpus {corpus_path} produced no examples")

    # Layer remaining label blocks onto whatever base examples exist.
    if "ae" in kinds:
        for e in examples:
            body = [i for i in e.tokens if i not in (CLS, SEP, PAD)]
            e.decoder_in = [CLS] + body
            e.decoder_out = body + [SEP]
    if "lm" in kinds:
        for e in examples:
            e.lm_labels = e.tokens[1:] + [IGNORE_ID]
    return examples


def scan_classes(path):
    """Largest label + 1 over a '<label>\\t...' file."""
    top = -1
    for lineno, line in enumerate(read_lines(path), 1):
        head = line.split("\t", 1)[0]
        try:
            top = max(top, int(head))
        except ValueError:
            raise DataError(f"line {lineno}: label {head!r} is not an integer")
    if top < 0:
        raise DataError(f"no labeled lines found in {path}")
    return top + 1


def validate_corpus(corpus_path, kinds, cfg):
    """Fail fast when the corpus cannot feed the requested targets."""
    _examples_for_pass(corpus_path, kinds=kinds, vocab=_PeekVocab(), cfg=cfg,
                       pass_seed=0)


class _PeekVocab:
    """Minimal stand-in so validation does not need the real vocabulary."""

    def ids(self, tokens):
        return [N_RESERVED] * len(tokens)


def batch_stream(corpus_path, vocab, kinds, cfg, seed):
    """Infinite deterministic Batch iterator; reshuffles every pass."""
    kinds = set(kinds)
    batch_size = cfg.get("batch_size", 32)
    mask_rate = cfg.get("mask_rate", 0.15)
    proportions = cfg.get("mask_proportions", (0.8, 0.1, 0.1))
    index = 0
    pass_idx = 0
    while True:
        rng = np.random.default_rng([seed, pass_idx])
        examples = _examples_for_pass(corpus_path, vocab, kinds, cfg,
                                      pass_seed=int(rng.integers(2**31)))
        order = rng.permutation(len(examples))
        for start in range(0, len(examples), batch_size):
            chosen = [examples[j] for j in order[start : start + batch_size]]
            batch = collate(chosen, index=index)
            if "mlm" in kinds:
                mask_batch(batch, mask_rate, rng, len(vocab), proportions)
            index += 1
            yield batch
        pass_idx += 1


def prefetch(iterator, depth=4):
    """Run `iterator` on a producer thread through a bounded queue.

    Producer-side exceptions are re-raised in the consumer.
    """
    q = queue.Queue(maxsize=depth)
    stop = object()

    def worker():
        try:
            for item in iterator:
                q.put(item)
            q.put(stop)
        except BaseException as exc:  # propagate across the thread boundary
            q.put(exc)

    threading.Thread(target=worker, daemon=True).start()
    while True:
        item = q.get()
        if item is stop:
            return
        if isinstance(item, BaseException):
            raise item
        yield item
