"""Stage-3 supervised fine-tuning: task heads, evaluation, prediction.

Tasks: single-sentence classification, sentence-pair classification, and
BIO sequence labeling. Fine-tuning either updates the whole network
("full") or freezes everything outside the task head ("feature").
"""

import math
import re
import sys
from dataclasses import dataclass, replace

import numpy as np

from .assemble import assemble
from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .data import Example, collate
from .errors import DataError, NumericError, SpecError
from .optim import Adam, clip_global_norm
from .specs import TargetEntry
from .tensor import IGNORE_ID, Tape, softmax
from .vocab import CLS, SEP, tokenize

_BIO_RE = re.compile(r"^(O|[BI]-.+)$")

TASK_KINDS = ("classify", "pair", "ner")


@dataclass
class TaskConfig:
    kind: str = "classify"
    n_classes: int = 0            # 0 -> derived from the training data
    strategy: str = "full"        # full | feature
    epochs: int = 3
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    grad_clip: float = 1.0
    tokenize_mode: str = "space"


# ---------------------------------------------------------------------------
# dataset loading
# ---------------------------------------------------------------------------


def load_classify(path):
    """Rows of (text, label) from '<label-int>\\t<text>' lines."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected '<label>\\t<text>'")
            try:
                label = int(parts[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: label {parts[0]!r} not an int")
            rows.append((parts[1], label))
    if not rows:
        raise DataError(f"no rows in {path}")
    return rows


def load_pair(path):
    """Rows of (textA, textB, label) from '<label>\\t<a>\\t<b>' lines."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(
                    f"{path}:{lineno}: expected '<label>\\t<textA>\\t<textB>'"
                )
            try:
                label = int(parts[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: label {parts[0]!r} not an int")
            rows.append((parts[1], parts[2], label))
    if not rows:
        raise DataError(f"no rows in {path}")
    return rows


def load_ner(path):
    """Rows of (tokens, tags): one 'token\\tTAG' per line, blank line between
    sentences. Tags must match the BIO grammar; malformed tags fail here."""
    rows = []
    tokens, tags = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if tokens:
                    rows.append((tokens, tags))
                    tokens, tags = [], []
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected '<token>\\t<BIO-tag>'")
            if not _BIO_RE.match(parts[1]):
                raise DataError(
                    f"{path}:{lineno}: malformed BIO label {parts[1]!r}"
                )
            tokens.append(parts[0])
            tags.append(parts[1])
    if tokens:
        rows.append((tokens, tags))
    if not rows:
        raise DataError(f"no sentences in {path}")
    return rows


def tag_names(rows):
    names = sorted({t for _, tags in rows for t in tags})
    if "O" in names:  # keep O at id 0 for readability
        names.remove("O")
        names.insert(0, "O")
    return names


# ---------------------------------------------------------------------------
# rows -> examples
# ---------------------------------------------------------------------------


def _classify_example(text, label, vocab, mode, seq_len):
    ids = vocab.ids(tokenize(text, mode))[: seq_len - 2]
    return Example(tokens=[CLS] + ids + [SEP],
                   segments=[0] * (len(ids) + 2),
                   class_label=label)


def _pair_example(text_a, text_b, label, vocab, mode, seq_len):
    a = vocab.ids(tokenize(text_a, mode))
    b = vocab.ids(tokenize(text_b, mode))
    budget = seq_len - 3
    while len(a) + len(b) > budget:
        (a if len(a) >= len(b) else b).pop()
    tokens = [CLS] + a + [SEP] + b + [SEP]
    segments = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    return Example(tokens=tokens, segments=segments, class_label=label)


def _ner_example(tokens, tags, vocab, mode, seq_len, tag_to_id):
    ids = vocab.ids(tokens)[: seq_len - 2]
    tag_ids = [tag_to_id[t] for t in tags[: len(ids)]]
    return Example(tokens=[CLS] + ids + [SEP],
                   segments=[0] * (len(ids) + 2),
                   tag_labels=[IGNORE_ID] + tag_ids + [IGNORE_ID])


def rows_to_examples(rows, task, vocab, seq_len, mode, labels=None):
    if task == "classify":
        return [_classify_example(t, y, vocab, mode, seq_len) for t, y in rows]
    if task == "pair":
        return [_pair_example(a, b, y, vocab, mode, seq_len) for a, b, y in rows]
    if task == "ner":
        tag_to_id = {t: i for i, t in enumerate(labels)}
        return [_ner_example(t, g, vocab, mode, seq_len, tag_to_id)
                for t, g in rows]
    raise SpecError(f"unknown task kind {task!r}")


# ---------------------------------------------------------------------------
# BIO span decoding and entity-level scoring
# ---------------------------------------------------------------------------


def bio_entities(tags):
    """Decode BIO tags into a set of (type, start, end-exclusive) spans.

    An I-X that does not continue an X span starts a new entity (lenient
    decoding, applied identically to gold and predicted sequences).
    """
    spans = set()
    cur_type, cur_start = None, None

    def close(end):
        nonlocal cur_type, cur_start
        if cur_type is not None:
            spans.add((cur_type, cur_start, end))
            cur_type, cur_start = None, None

    for i, tag in enumerate(tags):
        if tag == "O":
            close(i)
        elif tag.startswith("B-"):
            close(i)
            cur_type, cur_start = tag[2:], i
        elif tag.startswith("I-"):
            if cur_type != tag[2:]:
                close(i)
                cur_type, cur_start = tag[2:], i
        else:
            raise DataError(f"malformed BIO label {tag!r}")
    close(len(tags))
    return spans


def bio_prf(gold_sets, pred_sets):
    """Micro precision/recall/F1 over per-sentence entity sets.

    Empty denominators follow the documented convention: precision with no
    predictions is 0, recall with no gold entities is 0, F1 of (0, 0) is 0.
    """
    tp = fp = fn = 0
    for gold, pred in zip(gold_sets, pred_sets):
        tp += len(gold & pred)
        fp += len(pred - gold)
        fn += len(gold - pred)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return precision, recall, f1


# ---------------------------------------------------------------------------
# evaluation / prediction
# ---------------------------------------------------------------------------


def _batched(examples, batch_size):
    for start in range(0, len(examples), batch_size):
        yield collate(examples[start : start + batch_size])


def evaluate(model, rows, task, vocab, labels=None, batch_size=32,
             tokenize_mode="space"):
    """Accuracy for classification tasks; entity-level P/R/F1 for labeling.

    Deterministic (dropout off) and invariant to dataset row order.
    """
    seq_len = model.spec.seq_length
    examples = rows_to_examples(rows, task, vocab, seq_len, tokenize_mode, labels)
    head = model.target.head("tagger" if task == "ner" else "cls")
    if task in ("classify", "pair"):
        correct = total = 0
        for batch in _batched(examples, batch_size):
            hidden = model.encode(batch, train=False)
            logits = head.logits(hidden, batch)
            pred = logits.data.argmax(axis=-1)
            correct += int((pred == batch.class_label).sum())
            total += batch.size
        return {"accuracy": correct / total}
    gold_sets, pred_sets = [], []
    for batch in _batched(examples, batch_size):
        hidden = model.encode(batch, train=False)
        pred_ids = head.logits(hidden).data.argmax(axis=-1)
        for i in range(batch.size):
            keep = batch.tag_labels[i] != IGNORE_ID
            gold = [labels[j] for j in batch.tag_labels[i][keep]]
            pred = [labels[j] for j in pred_ids[i][keep]]
            gold_sets.append(bio_entities(gold))
            pred_sets.append(bio_entities(pred))
    precision, recall, f1 = bio_prf(gold_sets, pred_sets)
    return {"precision": precision, "recall": recall, "f1": f1}


def predict(model, inputs, task, vocab, labels=None, emit_probs=False,
            batch_size=32, tokenize_mode="space"):
    """One output line per input line.

    classify/pair: '<class-id>\\t<prob>' (or all class probs with
    emit_probs). ner: space-joined BIO tags. Overlong inputs are truncated.
    """
    seq_len = model.spec.seq_length
    out_lines = []

    def check_length(n_tokens, line_no):
        if n_tokens > seq_len - 2:
            print(f"warning: input line {line_no} has {n_tokens} tokens, "
                  f"truncating to {seq_len - 2}", file=sys.stderr)

    if task in ("classify", "pair"):
        rows = []
        for line_no, line in enumerate(inputs, 1):
            if task == "pair":
                parts = line.split("\t")
                if len(parts) < 2:
                    raise DataError("pair prediction needs '<textA>\\t<textB>' lines")
                check_length(len(tokenize(parts[0], tokenize_mode))
                             + len(tokenize(parts[1], tokenize_mode)), line_no)
                rows.append((parts[0], parts[1], 0))
            else:
                check_length(len(tokenize(line, tokenize_mode)), line_no)
                rows.append((line, 0))
        examples = rows_to_examples(rows, task, vocab, seq_len, tokenize_mode)
        head = model.target.head("cls")
        for batch in _batched(examples, batch_size):
            hidden = model.encode(batch, train=False)
            probs = softmax(head.logits(hidden, batch), axis=-1).data
            for row in probs:
                best = int(row.argmax())
                if emit_probs:
                    cols = "\t".join(f"{p:.6f}" for p in row)
                    out_lines.append(f"{best}\t{cols}")
                else:
                    out_lines.append(f"{best}\t{row[best]:.6f}")
        return out_lines
    if task != "ner":
        raise SpecError(f"unknown task kind {task!r}")
    head = model.target.head("tagger")
    rows = [(tokenize(line, tokenize_mode), None) for line in inputs]
    for line_no, (tokens, _) in enumerate(rows, 1):
        check_length(len(tokens), line_no)
        ids = vocab.ids(tokens)[: seq_len - 2]
        batch = collate([Example(tokens=[CLS] + ids + [SEP],
                                 segments=[0] * (len(ids) + 2))])
        hidden = model.encode(batch, train=False)
        pred_ids = head.logits(hidden).data.argmax(axis=-1)[0]
        tags = [labels[j] for j in pred_ids[1 : len(ids) + 1]]
        tags += ["O"] * (len(tokens) - len(tags))  # truncated tail
        out_lines.append(" ".join(tags))
    return out_lines


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------


def freeze_shared(model):
    """Feature-extractor strategy: only target.* parameters stay trainable."""
    for name, p in list(model.named_parameters()):
        if not name.startswith("target."):
            p.requires_grad = False


def fine_tune(task, train_rows, dev_rows, vocab, pretrained=None, spec=None,
              labels=None, log=print, allow_vocab_mismatch=False):
    """Train a task head (and optionally the whole network) on labeled rows.

    Starts from `pretrained` (a checkpoint path or CheckpointFile) or from a
    random init of `spec`. Keeps the best-dev parameter set. Returns
    (model, best_metrics, history).
    """
    if task.kind not in TASK_KINDS:
        raise SpecError(f"unknown task kind {task.kind!r}")
    ckpt = None
    if pretrained is not None:
        ckpt = (pretrained if not isinstance(pretrained, str)
                else load_checkpoint(pretrained))
        base_spec = ckpt.spec
    elif spec is not None:
        base_spec = spec
    else:
        raise SpecError("fine_tune needs a pretrained checkpoint or a spec")

    if task.kind == "ner":
        if labels is None:
            labels = tag_names(train_rows)
        n_classes = len(labels)
        entry = TargetEntry("tagger", classes=n_classes)
    else:
        derived = 1 + max(r[-1] for r in train_rows)
        n_classes = task.n_classes or derived
        if any(r[-1] >= n_classes for r in train_rows + dev_rows):
            raise DataError(
                f"dataset labels exceed n_classes={n_classes}"
            )
        entry = TargetEntry("cls", classes=n_classes)

    tuned_spec = replace(base_spec, targets=[entry])
    model = assemble(tuned_spec, vocab, seed=task.seed)
    if ckpt is not None:
        restore_model(model, ckpt, vocab_hash=vocab.content_hash(),
                      allow_vocab_mismatch=allow_vocab_mismatch)
    if task.strategy == "feature":
        freeze_shared(model)
    elif task.strategy != "full":
        raise SpecError(f"unknown fine-tune strategy {task.strategy!r}")

    seq_len = model.spec.seq_length
    examples = rows_to_examples(train_rows, task.kind, vocab, seq_len,
                                task.tokenize_mode, labels)
    params = model.trainable_parameters()
    optimizer = Adam(params, lr=task.lr)
    model.seed_dropout(task.seed)
    rng = np.random.default_rng(task.seed)

    metric_key = "f1" if task.kind == "ner" else "accuracy"
    best = {metric_key: -1.0}
    best_state = None
    history = []
    for epoch in range(1, task.epochs + 1):
        order = rng.permutation(len(examples))
        for start in range(0, len(examples), task.batch_size):
            chosen = [examples[j] for j in order[start : start + task.batch_size]]
            batch = collate(chosen)
            model.zero_grad()
            with Tape() as tape:
                out = model.forward(batch, train=True)
                if out.skip:
                    continue
                tape.backward(out.loss)
            if not math.isfinite(float(out.loss.data)):
                raise NumericError(f"non-finite loss in epoch {epoch}")
            clip_global_norm(params.values(), task.grad_clip)
            optimizer.step()
        metrics = evaluate(model, dev_rows, task.kind, vocab, labels,
                           batch_size=task.batch_size,
                           tokenize_mode=task.tokenize_mode)
        history.append({"epoch": epoch, **metrics})
        log(f"epoch={epoch} " + " ".join(f"dev_{k}={v:.4f}"
                                         for k, v in metrics.items()))
        if metrics[metric_key] > best[metric_key]:
            best = metrics
            best_state = {n: p.data.copy() for n, p in params.items()}
    if best_state is not None:
        for n, p in params.items():
            p.data[...] = best_state[n]
    return model, best, history


def save_task_checkpoint(model, path, task, vocab, labels=None):
    extra = {"task": task.kind, "labels": labels,
             "tokenize_mode": task.tokenize_mode}
    return save_checkpoint(model, path, vocab_hash=vocab.content_hash(),
                           extra=extra)


def load_task_model(path, vocab, allow_vocab_mismatch=False):
    """Rebuild a fine-tuned model and its task metadata from a checkpoint."""
    ckpt = load_checkpoint(path)
    extra = ckpt.extra or {}
    if "task" not in extra:
        raise SpecError(
            f"checkpoint {path} was not produced by finetune (no task metadata)"
        )
    model = assemble(ckpt.spec, vocab, seed=0)
    restore_model(model, ckpt, vocab_hash=vocab.content_hash(),
                  allow_vocab_mismatch=allow_vocab_mismatch)
    return model, extra
