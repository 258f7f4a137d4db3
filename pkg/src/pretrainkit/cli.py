"""Command-line surface: vocab, pretrain, finetune, predict.

Exit codes: 0 success, 2 config/spec error, 3 data error, 4 numeric abort.
"""

import argparse
import sys

from .checkpoint import load_checkpoint
from .config import build_spec, load_config, merge_options
from .downstream import (TaskConfig, evaluate, fine_tune, load_classify,
                         load_ner, load_pair, load_task_model, predict,
                         save_task_checkpoint, tag_names)
from .errors import PretrainkitError
from .vocab import Vocabulary


def _add_model_flags(p):
    p.add_argument("--config", help="config file; flags override its keys")
    p.add_argument("--embedding", choices=["plain", "bert"])
    p.add_argument("--subencoder", choices=["none", "rnn", "cnn"])
    p.add_argument("--subword-table", dest="subword_table",
                   help="two-column '<token>\\t<sub1> <sub2> ...' file; "
                        "tokens not listed fall back to characters")
    p.add_argument("--encoder",
                   help="encoder kind(s), comma-joined for stacks, e.g. "
                        "transformer, transformer-causal, cnn,lstm")
    p.add_argument("--target",
                   help="comma-joined kind[:weight] pairs, e.g. mlm:1.0,nsp:1.0")
    p.add_argument("--hidden", type=int)
    p.add_argument("--seq-length", type=int, dest="seq_length")
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--ffn", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--classes", type=int)
    p.add_argument("--tokenize-mode", choices=["space", "char"],
                   dest="tokenize_mode")


def _add_train_flags(p):
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--mask-rate", type=float, default=0.15, dest="mask_rate")
    p.add_argument("--warmup-steps", type=int, default=0, dest="warmup_steps")
    p.add_argument("--log-interval", type=int, default=10, dest="log_interval")
    p.add_argument("--metrics", help="write one JSON record per log line here")
    p.add_argument("--prefetch", action="store_true",
                   help="prefetch batches on a producer thread")
    p.add_argument("--allow-vocab-mismatch", action="store_true",
                   dest="allow_vocab_mismatch")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pretrainkit",
        description="Assemble-on-demand pre-training and fine-tuning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_vocab = sub.add_parser("vocab", help="build a vocabulary file")
    p_vocab.add_argument("--corpus", required=True)
    p_vocab.add_argument("--output", required=True)
    p_vocab.add_argument("--min-count", type=int, default=1, dest="min_count")
    p_vocab.add_argument("--mode", choices=["space", "char"], default="space")

    p_pre = sub.add_parser("pretrain", help="stage 1/2 pre-training")
    p_pre.add_argument("--corpus", required=True)
    p_pre.add_argument("--vocab", required=True)
    p_pre.add_argument("--output", required=True)
    p_pre.add_argument("--pretrained", help="init from this checkpoint (stage 2)")
    _add_model_flags(p_pre)
    _add_train_flags(p_pre)

    p_fin = sub.add_parser("finetune", help="stage 3 supervised fine-tuning")
    p_fin.add_argument("--task", choices=["classify", "pair", "ner"],
                       required=True)
    p_fin.add_argument("--train", required=True)
    p_fin.add_argument("--dev", required=True)
    p_fin.add_argument("--test")
    p_fin.add_argument("--vocab", required=True)
    p_fin.add_argument("--output", required=True)
    p_fin.add_argument("--pretrained")
    p_fin.add_argument("--strategy", choices=["full", "feature"],
                       default="full")
    p_fin.add_argument("--epochs", type=int, default=3)
    p_fin.add_argument("--batch-size", type=int, default=16, dest="batch_size")
    p_fin.add_argument("--lr", type=float, default=1e-3)
    p_fin.add_argument("--seed", type=int, default=1)
    p_fin.add_argument("--allow-vocab-mismatch", action="store_true",
                       dest="allow_vocab_mismatch")
    _add_model_flags(p_fin)

    p_prd = sub.add_parser("predict", help="label new inputs with a fine-tuned model")
    p_prd.add_argument("--model", required=True)
    p_prd.add_argument("--vocab", required=True)
    p_prd.add_argument("--input", required=True)
    p_prd.add_argument("--output", required=True)
    p_prd.add_argument("--probs", action="store_true",
                       help="emit every class probability")
    p_prd.add_argument("--allow-vocab-mismatch", action="store_true",
                       dest="allow_vocab_mismatch")
    return parser


def _model_options(args):
    keys = ["embedding", "subencoder", "subword_table", "encoder", "target",
            "hidden", "seq_length", "layers", "heads", "kernel", "ffn",
            "dropout", "classes", "tokenize_mode"]
    overrides = {k: getattr(args, k, None) for k in keys}
    config_opts = load_config(args.config) if args.config else {}
    return merge_options(config_opts, overrides)


def _subword_table(opts, vocab):
    path = opts.get("subword_table")
    if not path:
        return None
    from .vocab import SubwordTable

    return SubwordTable.load(path, vocab)


def cmd_vocab(args):
    from .data import read_lines

    vocab = Vocabulary.build(read_lines(args.corpus), min_count=args.min_count,
                             mode=args.mode)
    vocab.save(args.output)
    print(f"wrote {len(vocab)} tokens to {args.output}")
    return 0


def cmd_pretrain(args):
    from .assemble import assemble
    from .checkpoint import restore_model
    from .data import scan_classes
    from .train import TrainConfig, train

    opts = _model_options(args)
    vocab = Vocabulary.load(args.vocab)

    # cls targets may take their class count from the corpus
    raw_targets = opts.get("target", "mlm")
    if "cls" in str(raw_targets) and not int(opts.get("classes") or 0):
        opts["classes"] = scan_classes(args.corpus)

    spec = build_spec(opts)
    model = assemble(spec, vocab, seed=args.seed,
                     subword_table=_subword_table(opts, vocab))
    if args.pretrained:
        restore_model(model, load_checkpoint(args.pretrained),
                      vocab_hash=vocab.content_hash(),
                      allow_vocab_mismatch=args.allow_vocab_mismatch)
    cfg = TrainConfig(
        steps=args.steps, batch_size=args.batch_size, lr=args.lr,
        seed=args.seed, log_interval=args.log_interval,
        warmup_steps=args.warmup_steps, mask_rate=args.mask_rate,
        tokenize_mode=opts.get("tokenize_mode") or "space",
        use_prefetch=args.prefetch,
    )
    train(model, vocab, args.corpus, cfg, out_path=args.output,
          metrics_path=args.metrics)
    print(f"checkpoint written to {args.output}")
    return 0


def cmd_finetune(args):
    opts = _model_options(args)
    vocab = Vocabulary.load(args.vocab)
    task = TaskConfig(
        kind=args.task, n_classes=int(opts.get("classes") or 0),
        strategy=args.strategy, epochs=args.epochs, lr=args.lr,
        batch_size=args.batch_size, seed=args.seed,
        tokenize_mode=opts.get("tokenize_mode") or "space",
    )
    loader = {"classify": load_classify, "pair": load_pair, "ner": load_ner}
    train_rows = loader[args.task](args.train)
    dev_rows = loader[args.task](args.dev)
    labels = tag_names(train_rows + dev_rows) if args.task == "ner" else None

    spec = None
    if not args.pretrained:
        opts.setdefault("target", "cls")
        opts["classes"] = opts.get("classes") or (
            len(labels) if labels else 1 + max(r[-1] for r in train_rows)
        )
        spec = build_spec(opts)
    model, best, _ = fine_tune(
        task, train_rows, dev_rows, vocab, pretrained=args.pretrained,
        spec=spec, labels=labels,
        allow_vocab_mismatch=args.allow_vocab_mismatch,
    )
    save_task_checkpoint(model, args.output, task, vocab, labels=labels)
    print("best dev: " + " ".join(f"{k}={v:.4f}" for k, v in best.items()))
    if args.test:
        test_rows = loader[args.task](args.test)
        metrics = evaluate(model, test_rows, args.task, vocab, labels,
                           tokenize_mode=task.tokenize_mode)
        print("test: " + " ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    print(f"checkpoint written to {args.output}")
    return 0


def cmd_predict(args):
    vocab = Vocabulary.load(args.vocab)
    model, extra = load_task_model(args.model, vocab,
                                   allow_vocab_mismatch=args.allow_vocab_mismatch)
    with open(args.input, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    outputs = predict(
        model, lines, extra["task"], vocab, labels=extra.get("labels"),
        emit_probs=args.probs,
        tokenize_mode=extra.get("tokenize_mode", "space"),
    )
    with open(args.output, "w", encoding="utf-8") as fh:
        for line in outputs:
            fh.write(line + "\n")
    print(f"wrote {len(outputs)} predictions to {args.output}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "vocab": cmd_vocab,
        "pretrain": cmd_pretrain,
        "finetune": cmd_finetune,
        "predict": cmd_predict,
    }
    try:
        return handlers[args.command](args)
    except PretrainkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
