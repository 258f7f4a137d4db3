import numpy as np
import pytest

from pretrainkit import (EncoderConfig, ModelSpec, TargetEntry, Vocabulary,
                         assemble)
from pretrainkit.checkpoint import save_checkpoint
from pretrainkit.downstream import (TaskConfig, bio_entities, bio_prf,
                                    evaluate, fine_tune, load_classify,
                                    load_ner, load_pair, load_task_model,
                                    predict, save_task_checkpoint, tag_names)
from pretrainkit.errors import DataError


class TestBio:
    def test_spec_example_entity_sets(self):
        pred = bio_entities(["B-X", "I-X", "O", "B-Y"])
        gold = bio_entities(["B-X", "I-X", "O", "O"])
        assert pred == {("X", 0, 2), ("Y", 3, 4)}
        assert gold == {("X", 0, 2)}
        p, r, f1 = bio_prf([gold], [pred])
        assert p == pytest.approx(0.5)
        assert r == pytest.approx(1.0)
        assert f1 == pytest.approx(2 / 3)

    def test_empty_prediction_convention(self):
        gold = bio_entities(["B-X", "O"])
        pred = bio_entities(["O", "O"])
        p, r, f1 = bio_prf([gold], [pred])
        assert (p, r, f1) == (0.0, 0.0, 0.0)

    def test_exact_match(self):
        tags = ["B-A", "I-A", "O", "B-B"]
        p, r, f1 = bio_prf([bio_entities(tags)], [bio_entities(tags)])
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_lenient_i_start(self):
        assert bio_entities(["O", "I-X", "I-X"]) == {("X", 1, 3)}
        assert bio_entities(["B-X", "I-Y"]) == {("X", 0, 1), ("Y", 1, 2)}

    def test_brute_force_comparison_on_random_sequences(self):
        """Entity-level scoring must agree with a brute-force set comparison
        written independently (enumerate spans by scanning all boundaries)."""

        def brute_force_spans(tags):
            found = set()
            n = len(tags)
            for start in range(n):
                if tags[start] == "O":
                    continue
                kind = tags[start][2:]
                opens = (tags[start].startswith("B-")
                         or start == 0
                         or tags[start - 1] in ("O",)
                         or tags[start - 1][2:] != kind
                         or (tags[start].startswith("I-")
                             and tags[start - 1].startswith("I-") is False
                             and tags[start - 1].startswith("B-") is False))
                if tags[start].startswith("I-") and start > 0 and \
                        tags[start - 1][2:] == kind and tags[start - 1] != "O":
                    opens = False
                if not opens:
                    continue
                end = start + 1
                while (end < n and tags[end] == f"I-{kind}"):
                    end += 1
                found.add((kind, start, end))
            return found

        rng = np.random.default_rng(0)
        alphabet = ["O", "B-X", "I-X", "B-Y", "I-Y"]
        for _ in range(50):
            tags = [alphabet[i] for i in rng.integers(0, 5, rng.integers(1, 12))]
            assert bio_entities(tags) == brute_force_spans(tags), tags


class TestLoaders:
    def test_classify(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("0\tgood film\n1\tbad film\n", encoding="utf-8")
        assert load_classify(str(p)) == [("good film", 0), ("bad film", 1)]

    def test_classify_malformed(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("x\tfoo\n", encoding="utf-8")
        with pytest.raises(DataError, match="not an int"):
            load_classify(str(p))

    def test_pair(self, tmp_path):
        p = tmp_path / "p.txt"
        p.write_text("1\ta b\tc d\n", encoding="utf-8")
        assert load_pair(str(p)) == [("a b", "c d", 1)]

    def test_ner_and_malformed_tag(self, tmp_path):
        good = tmp_path / "g.txt"
        good.write_text("tok\tB-X\ntok2\tI-X\n\ntok3\tO\n", encoding="utf-8")
        rows = load_ner(str(good))
        assert rows == [(["tok", "tok2"], ["B-X", "I-X"]), (["tok3"], ["O"])]
        assert tag_names(rows) == ["O", "B-X", "I-X"]
        bad = tmp_path / "b.txt"
        bad.write_text("tok\tX-bad\n", encoding="utf-8")
        with pytest.raises(DataError, match="malformed BIO"):
            load_ner(str(bad))


def separable_rows(n=40, seed=0):
    """Class 0 sentences contain 'aaa', class 1 contain 'bbb'."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        label = int(rng.integers(2))
        marker = "aaa" if label == 0 else "bbb"
        fillers = " ".join(rng.choice(["pad1", "pad2", "pad3"],
                                      size=rng.integers(1, 4)))
        rows.append((f"{marker} {fillers}", label))
    return rows


@pytest.fixture
def toy_vocab():
    return Vocabulary(["aaa", "bbb", "pad1", "pad2", "pad3", "p", "q"])


def gru_spec(hidden=16):
    return ModelSpec(
        embedding="plain", hidden=hidden, seq_length=12,
        encoders=[EncoderConfig(kind="gru", hidden=hidden)],
        targets=[TargetEntry("mlm")],
    )


class TestFineTune:
    def test_full_strategy_learns_separable_task(self, toy_vocab):
        task = TaskConfig(kind="classify", epochs=20, lr=2e-2, batch_size=8,
                          seed=0)
        model, best, history = fine_tune(
            task, separable_rows(48, 1), separable_rows(16, 2), toy_vocab,
            spec=gru_spec(), log=lambda *_: None,
        )
        assert best["accuracy"] == 1.0

    def test_feature_strategy_freezes_encoder(self, toy_vocab, tmp_path):
        pre = assemble(gru_spec(), toy_vocab, seed=9)
        path = str(tmp_path / "pre.ckpt")
        save_checkpoint(pre, path, vocab_hash=toy_vocab.content_hash())
        task = TaskConfig(kind="classify", strategy="feature", epochs=2,
                          lr=5e-3, batch_size=8, seed=0)
        model, best, _ = fine_tune(
            task, separable_rows(32, 3), separable_rows(8, 4), toy_vocab,
            pretrained=path, log=lambda *_: None,
        )
        # only head parameters stayed trainable; every shared parameter is
        # bit-identical to the pre-trained values and structurally grad-free
        trainable = set(model.trainable_parameters())
        assert trainable and all(n.startswith("target.") for n in trainable)
        pre_params = dict(pre.named_parameters())
        shared_seen = 0
        for name, p in model.named_parameters():
            if name.startswith("target."):
                continue
            shared_seen += 1
            assert np.array_equal(p.data, pre_params[name].data), name
            assert p.grad is None
        assert shared_seen > 0

        # frozen models still checkpoint completely
        out = str(tmp_path / "feature.ckpt")
        save_task_checkpoint(model, out, task, toy_vocab)
        from pretrainkit.downstream import load_task_model

        reloaded, _ = load_task_model(out, toy_vocab)
        for name, p in model.named_parameters():
            other = dict(reloaded.named_parameters())[name]
            assert np.array_equal(p.data, other.data), name

    def test_pair_task_packing(self, toy_vocab):
        from pretrainkit.downstream import _pair_example
        from pretrainkit.vocab import CLS, SEP

        ex = _pair_example("p q", "q p", 1, toy_vocab, "space", 12)
        ids = toy_vocab.ids
        assert ex.tokens == [CLS] + ids(["p", "q"]) + [SEP] + ids(["q", "p"]) + [SEP]
        assert ex.segments == [0, 0, 0, 0, 1, 1, 1]

    def test_evaluation_invariant_to_row_order(self, toy_vocab):
        task = TaskConfig(kind="classify", epochs=2, lr=5e-3, batch_size=8,
                          seed=0)
        dev = separable_rows(16, 5)
        model, _, _ = fine_tune(task, separable_rows(32, 6), dev, toy_vocab,
                                spec=gru_spec(), log=lambda *_: None)
        forward = evaluate(model, dev, "classify", toy_vocab)
        backward = evaluate(model, dev[::-1], "classify", toy_vocab)
        assert forward == backward


class TestPredict:
    @pytest.fixture
    def tuned(self, toy_vocab, tmp_path):
        task = TaskConfig(kind="classify", epochs=20, lr=2e-2, batch_size=8,
                          seed=0)
        train_rows = separable_rows(48, 7)
        model, _, _ = fine_tune(task, train_rows, separable_rows(8, 8),
                                toy_vocab, spec=gru_spec(),
                                log=lambda *_: None)
        return model, train_rows

    def test_duplicates_identical(self, toy_vocab, tuned):
        model, _ = tuned
        lines = ["aaa pad1", "aaa pad1", "aaa pad1"]
        out = predict(model, lines, "classify", toy_vocab)
        assert len(set(out)) == 1

    def test_probs_sum_to_one(self, toy_vocab, tuned):
        model, _ = tuned
        out = predict(model, ["bbb pad2"], "classify", toy_vocab,
                      emit_probs=True)
        cols = [float(x) for x in out[0].split("\t")[1:]]
        assert abs(sum(cols) - 1.0) < 1e-9

    def test_round_trip_reproduces_training_labels(self, toy_vocab, tuned):
        model, train_rows = tuned
        lines = [text for text, _ in train_rows]
        out = predict(model, lines, "classify", toy_vocab)
        predicted = [int(line.split("\t")[0]) for line in out]
        assert predicted == [label for _, label in train_rows]


class TestTaskCheckpoint:
    def test_head_swap_soundness(self, toy_vocab, tmp_path):
        task = TaskConfig(kind="classify", epochs=3, lr=5e-3, batch_size=8,
                          seed=0)
        dev = separable_rows(16, 10)
        model, best, _ = fine_tune(task, separable_rows(32, 9), dev,
                                   toy_vocab, spec=gru_spec(),
                                   log=lambda *_: None)
        path = str(tmp_path / "task.ckpt")
        save_task_checkpoint(model, path, task, toy_vocab)
        loaded, extra = load_task_model(path, toy_vocab)
        assert extra["task"] == "classify"
        again = evaluate(loaded, dev, "classify", toy_vocab)
        assert again == evaluate(model, dev, "classify", toy_vocab)

    def test_predict_rejects_pretrain_checkpoint(self, toy_vocab, tmp_path):
        from pretrainkit.errors import SpecError

        pre = assemble(gru_spec(), toy_vocab, seed=9)
        path = str(tmp_path / "pre.ckpt")
        save_checkpoint(pre, path)
        with pytest.raises(SpecError, match="task"):
            load_task_model(path, toy_vocab)


class TestNerFineTune:
    def make_rows(self, n, seed):
        """Token 'ent' is always B-E, 'mid' after 'ent' is I-E, others O."""
        rng = np.random.default_rng(seed)
        rows = []
        for _ in range(n):
            toks, tags = [], []
            for _ in range(int(rng.integers(2, 6))):
                if rng.random() < 0.4:
                    toks += ["ent", "mid"]
                    tags += ["B-E", "I-E"]
                else:
                    toks.append(str(rng.choice(["w1", "w2", "w3"])))
                    tags.append("O")
            rows.append((toks, tags))
        return rows

    def test_learns_marker_entities(self):
        vocab = Vocabulary(["ent", "mid", "w1", "w2", "w3"])
        task = TaskConfig(kind="ner", epochs=12, lr=2e-2, batch_size=8, seed=0)
        train_rows = self.make_rows(40, 0)
        dev_rows = self.make_rows(12, 1)
        model, best, _ = fine_tune(task, train_rows, dev_rows, vocab,
                                   spec=gru_spec(), log=lambda *_: None)
        assert best["f1"] >= 0.95
