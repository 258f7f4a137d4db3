"""Toy training runs promised by the target contracts; each run is its own
oracle."""

import numpy as np
import pytest

from pretrainkit import (EncoderConfig, ModelSpec, TargetEntry, Vocabulary,
                         assemble)
from pretrainkit.data import read_lines
from pretrainkit.train import TrainConfig, train
from pretrainkit.vocab import SEP


@pytest.fixture(scope="module")
def single_sentence(tmp_path_factory):
    path = tmp_path_factory.mktemp("mem") / "one.txt"
    path.write_text("\n".join(["the cat sat on the mat"] * 8) + "\n",
                    encoding="utf-8")
    return str(path)


def spec_for(target, hidden=24, **enc_kw):
    return ModelSpec(
        embedding="plain", hidden=hidden, seq_length=12,
        encoders=[EncoderConfig(kind="gru", hidden=hidden, **enc_kw)],
        targets=[TargetEntry(target)],
    )


def test_lm_memorizes_single_sentence(single_sentence):
    vocab = Vocabulary.build(read_lines(single_sentence))
    model = assemble(spec_for("lm"), vocab, seed=0)
    result = train(model, vocab, single_sentence,
                   TrainConfig(steps=250, batch_size=8, lr=5e-3, seed=1,
                               log_interval=10**9),
                   log=lambda *_: None)
    assert result.losses[-1] < 0.1
    # perplexity is exp(loss); a memorized corpus approaches 1
    assert np.exp(result.losses[-1]) < 1.2


def test_ae_memorizes_and_greedy_decodes(single_sentence):
    vocab = Vocabulary.build(read_lines(single_sentence))
    model = assemble(spec_for("ae"), vocab, seed=0)
    result = train(model, vocab, single_sentence,
                   TrainConfig(steps=300, batch_size=8, lr=5e-3, seed=1,
                               log_interval=10**9),
                   log=lambda *_: None)
    assert result.losses[-1] < 0.1

    # greedy generation reproduces the memorized sentence
    from pretrainkit.data import Example, collate

    ids = vocab.ids("the cat sat on the mat".split())
    batch = collate([Example(tokens=ids)])
    hidden = model.encode(batch, train=False)
    decoder = model.target.head("ae").decoder
    rows = decoder.greedy_decode(hidden, batch.pad_mask, max_len=10,
                                 stop_id=SEP)
    assert rows[0] == ids


def test_nmt_reversal_token_accuracy(tmp_path):
    rng = np.random.default_rng(0)
    words = [f"v{i}" for i in range(15)]
    rows = []
    for _ in range(120):
        n = int(rng.integers(2, 7))
        src = [str(w) for w in rng.choice(words, n)]
        rows.append(" ".join(src) + "\t" + " ".join(reversed(src)))
    corpus = tmp_path / "rev.txt"
    corpus.write_text("\n".join(rows) + "\n", encoding="utf-8")
    vocab = Vocabulary.build([r.replace("\t", " ") for r in rows])
    assert len(vocab) == 20

    model = assemble(spec_for("nmt", hidden=32), vocab, seed=0)
    accs = []

    def capture(line):
        if "nmt_acc=" in line:
            accs.append(float(line.split("nmt_acc=")[1].split()[0]))

    train(model, vocab, str(corpus),
          TrainConfig(steps=1500, batch_size=16, lr=5e-3, seed=1,
                      log_interval=100),
          log=capture)
    assert np.mean(accs[-3:]) >= 0.9
