import numpy as np
import pytest

from pretrainkit import (EncoderConfig, ModelSpec, TargetEntry, Vocabulary)
from pretrainkit.checkpoint import load_checkpoint
from pretrainkit.downstream import TaskConfig
from pretrainkit.errors import SpecError
from pretrainkit.schedule import (FinetuneStage, PretrainStage, run_schedule)


@pytest.fixture
def vocab():
    return Vocabulary([f"g{i}" for i in range(10)] + ["mark0", "mark1"])


@pytest.fixture
def corpora(tmp_path, vocab):
    rng = np.random.default_rng(0)

    def sentence():
        return " ".join(f"g{int(rng.integers(10))}"
                        for _ in range(int(rng.integers(3, 6))))

    general = tmp_path / "general.txt"
    general.write_text("\n".join(sentence() for _ in range(30)) + "\n",
                       encoding="utf-8")

    def labeled(name, n, seed):
        r = np.random.default_rng(seed)
        rows = []
        for _ in range(n):
            y = int(r.integers(2))
            rows.append(f"{y}\tmark{y} {sentence()}")
        path = tmp_path / name
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        return str(path)

    return {
        "general": str(general),
        "train": labeled("train.txt", 32, 1),
        "dev": labeled("dev.txt", 12, 2),
    }


def small_spec():
    return ModelSpec(
        embedding="bert", hidden=16, seq_length=16,
        encoders=[EncoderConfig(kind="transformer", layers=1, hidden=16,
                                heads=2)],
        targets=[TargetEntry("mlm")],
    )


def task():
    return TaskConfig(kind="classify", epochs=8, lr=2e-2, batch_size=8, seed=0)


class TestSchedules:
    def test_stage3_only_is_supervised_baseline(self, tmp_path, vocab,
                                                corpora):
        result = run_schedule(
            small_spec(), vocab,
            [FinetuneStage(task=task(), train_path=corpora["train"],
                           dev_path=corpora["dev"], init="random")],
            workdir=str(tmp_path / "w1"), seed=0, log=lambda *_: None,
        )
        assert result.final_metrics["accuracy"] > 0.5
        assert result.checkpoints == []

    def test_three_stages_thread_checkpoints(self, tmp_path, vocab, corpora):
        stages = [
            PretrainStage(corpus=corpora["general"], steps=6, lr=1e-3),
            PretrainStage(corpus=corpora["general"], steps=4, lr=1e-3),
            FinetuneStage(task=task(), train_path=corpora["train"],
                          dev_path=corpora["dev"]),
        ]
        result = run_schedule(small_spec(), vocab, stages,
                              workdir=str(tmp_path / "w2"), seed=0,
                              log=lambda *_: None)
        assert len(result.checkpoints) == 2
        # every stage checkpoint loads standalone
        for path in result.checkpoints:
            ckpt = load_checkpoint(path)
            assert ckpt.params
        assert result.final_metrics["accuracy"] >= 0.5

    def test_stage2_may_switch_targets(self, tmp_path, vocab, corpora):
        stages = [
            PretrainStage(corpus=corpora["general"], steps=4, lr=1e-3),
            PretrainStage(corpus=corpora["train"], steps=4, lr=1e-3,
                          target_override=[TargetEntry("cls", classes=2)]),
        ]
        result = run_schedule(small_spec(), vocab, stages,
                              workdir=str(tmp_path / "w3"), seed=0,
                              log=lambda *_: None)
        ckpt = load_checkpoint(result.checkpoints[-1])
        assert {t.kind for t in ckpt.spec.targets} == {"cls"}

    def test_missing_upstream_checkpoint(self, tmp_path, vocab, corpora):
        with pytest.raises(SpecError, match="no earlier stage"):
            run_schedule(
                small_spec(), vocab,
                [PretrainStage(corpus=corpora["general"], steps=2,
                               init="checkpoint")],
                workdir=str(tmp_path / "w4"), seed=0, log=lambda *_: None,
            )
