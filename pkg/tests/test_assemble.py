import numpy as np
import pytest

from pretrainkit import (EncoderConfig, ModelSpec, SubencoderConfig,
                         TargetEntry, Vocabulary, assemble)
from pretrainkit.encoders import RecurrentEncoder, TransformerEncoder
from pretrainkit.errors import SpecError
from pretrainkit.layers import BertEmbedding, PlainEmbedding
from pretrainkit.targets import ClsTarget, LmTarget, MlmTarget, NspTarget


@pytest.fixture
def vocab():
    return Vocabulary([f"w{i}" for i in range(16)])


def bert_spec(**kw):
    base = dict(
        embedding="bert", hidden=16, seq_length=12,
        encoders=[EncoderConfig(kind="transformer", layers=2, hidden=16,
                                heads=4)],
        targets=[TargetEntry("bert")],
    )
    base.update(kw)
    return ModelSpec(**base)


class TestRecipes:
    def test_bert_wiring(self, vocab):
        model = assemble(bert_spec(), vocab, seed=0)
        assert isinstance(model.embedding, BertEmbedding)
        assert isinstance(model.encoder[0], TransformerEncoder)
        assert not model.encoder[0].causal
        assert isinstance(model.target.head("mlm"), MlmTarget)
        assert isinstance(model.target.head("nsp"), NspTarget)

    def test_gpt_wiring(self, vocab):
        spec = ModelSpec(
            embedding="bert", hidden=16, seq_length=12,
            encoders=[EncoderConfig(kind="transformer", layers=2, hidden=16,
                                    heads=4, mask="causal")],
            targets=[TargetEntry("lm")],
        )
        model = assemble(spec, vocab, seed=0)
        assert model.encoder[0].causal
        assert isinstance(model.target.head("lm"), LmTarget)

    def test_quick_thoughts_wiring(self, vocab):
        spec = ModelSpec(
            embedding="plain", hidden=16, seq_length=12,
            encoders=[EncoderConfig(kind="gru", hidden=16)],
            targets=[TargetEntry("nsp")],
        )
        model = assemble(spec, vocab, seed=0)
        assert isinstance(model.embedding, PlainEmbedding)
        assert isinstance(model.encoder[0], RecurrentEncoder)
        assert model.encoder[0].kind == "gru"
        assert isinstance(model.target.head("nsp"), NspTarget)

    def test_infersent_wiring(self, vocab):
        spec = ModelSpec(
            embedding="plain", hidden=16, seq_length=12,
            encoders=[EncoderConfig(kind="lstm", hidden=16)],
            targets=[TargetEntry("cls", classes=3)],
        )
        model = assemble(spec, vocab, seed=0)
        assert isinstance(model.target.head("cls"), ClsTarget)
        assert model.target.head("cls").pooling == "max"  # non-transformer

    def test_transformer_cls_pools_first_position(self, vocab):
        spec = bert_spec(targets=[TargetEntry("cls", classes=2)])
        model = assemble(spec, vocab, seed=0)
        assert model.target.head("cls").pooling == "cls"


class TestValidation:
    def test_lm_over_bidirectional_rejected(self, vocab):
        spec = bert_spec(targets=[TargetEntry("lm")])
        with pytest.raises(SpecError, match="leak"):
            assemble(spec, vocab)

    def test_lm_over_lstm_allowed(self, vocab):
        spec = ModelSpec(
            embedding="plain", hidden=8, seq_length=8,
            encoders=[EncoderConfig(kind="lstm", hidden=8)],
            targets=[TargetEntry("lm")],
        )
        assemble(spec, vocab)

    def test_bert_target_needs_bert_embedding(self, vocab):
        spec = bert_spec(embedding="plain")
        with pytest.raises(SpecError, match="segment"):
            assemble(spec, vocab)

    def test_heads_must_divide_hidden(self, vocab):
        spec = bert_spec(encoders=[EncoderConfig(kind="transformer",
                                                 hidden=16, heads=3)])
        with pytest.raises(SpecError, match="divide"):
            assemble(spec, vocab)

    def test_width_mismatch_without_adapters(self, vocab):
        spec = bert_spec(encoders=[
            EncoderConfig(kind="gru", hidden=16),
            EncoderConfig(kind="gru", hidden=24),
        ], targets=[TargetEntry("mlm")])
        with pytest.raises(SpecError, match="adapter"):
            assemble(spec, vocab)

    def test_width_mismatch_with_adapters(self, vocab):
        spec = bert_spec(encoders=[
            EncoderConfig(kind="gru", hidden=16),
            EncoderConfig(kind="gru", hidden=24),
        ], targets=[TargetEntry("mlm")], allow_adapters=True)
        model = assemble(spec, vocab)
        names = [n for n, _ in model.named_parameters()]
        assert any(n.startswith("encoder.1.proj") for n in names)

    def test_zero_weight_rejected(self, vocab):
        spec = bert_spec(targets=[TargetEntry("mlm", weight=0.0)])
        with pytest.raises(SpecError, match="weight"):
            assemble(spec, vocab)

    def test_even_kernel_rejected_bidirectional(self, vocab):
        spec = bert_spec(encoders=[EncoderConfig(kind="cnn", hidden=16,
                                                 kernel=4)],
                         targets=[TargetEntry("mlm")])
        with pytest.raises(SpecError, match="odd"):
            assemble(spec, vocab)

    def test_unknown_kinds(self, vocab):
        with pytest.raises(SpecError):
            assemble(bert_spec(targets=[TargetEntry("masked")]), vocab)
        with pytest.raises(SpecError):
            assemble(bert_spec(encoders=[EncoderConfig(kind="mamba")]), vocab)

    def test_causal_conv_supports_lm(self, vocab):
        spec = ModelSpec(
            embedding="plain", hidden=8, seq_length=8,
            encoders=[EncoderConfig(kind="gatedcnn", hidden=8, mask="causal")],
            targets=[TargetEntry("lm")],
        )
        assemble(spec, vocab)


class TestDeterminism:
    def test_same_seed_identical(self, vocab):
        a = assemble(bert_spec(), vocab, seed=42)
        b = assemble(bert_spec(), vocab, seed=42)
        for (na, pa), (nb, pb) in zip(a.named_parameters(),
                                      b.named_parameters()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_different_seed_differs(self, vocab):
        a = assemble(bert_spec(), vocab, seed=42)
        b = assemble(bert_spec(), vocab, seed=43)
        diff = any(
            not np.array_equal(pa.data, pb.data)
            for (_, pa), (_, pb) in zip(a.named_parameters(),
                                        b.named_parameters())
        )
        assert diff


class TestNaming:
    def test_prefix_scheme(self, vocab):
        spec = bert_spec(subencoder=SubencoderConfig(kind="rnn", sub_width=4,
                                                     hidden=16))
        model = assemble(spec, vocab, seed=0)
        names = [n for n, _ in model.named_parameters()]
        prefixes = {n.split(".")[0] for n in names}
        assert prefixes == {"embedding", "subencoder", "encoder", "target"}
        assert "embedding.word" in names
        assert any(n.startswith("encoder.0.layer.1.attn.q") for n in names)
        assert any(n.startswith("target.mlm.") for n in names)
        assert any(n.startswith("target.nsp.") for n in names)


class TestSpecSerialization:
    def test_round_trip(self):
        spec = bert_spec(subencoder=SubencoderConfig(kind="cnn", hidden=16))
        again = ModelSpec.from_dict(spec.to_dict())
        assert again == spec


class TestSubencoderModels:
    @pytest.mark.parametrize("kind", ["rnn", "cnn"])
    @pytest.mark.parametrize("combine", ["sum", "concat-project"])
    def test_forward_backward_with_subencoder(self, vocab, kind, combine):
        import math

        from pretrainkit import Tape
        from pretrainkit.data import Example, collate, mask_batch

        sub_hidden = 16 if combine == "sum" else 12
        spec = bert_spec(
            targets=[TargetEntry("mlm")],
            subencoder=SubencoderConfig(kind=kind, sub_width=6,
                                        hidden=sub_hidden, combine=combine),
        )
        model = assemble(spec, vocab, seed=4)
        batch = collate([Example(tokens=[2, 6, 7, 8, 3]),
                         Example(tokens=[2, 9, 10, 3])])
        mask_batch(batch, 0.5, np.random.default_rng(0), len(vocab))
        model.zero_grad()
        with Tape() as tape:
            out = model.forward(batch, train=True)
            tape.backward(out.loss)
        assert math.isfinite(out.loss.item())
        sub_grads = [p.grad for n, p in model.named_parameters()
                     if n.startswith("subencoder.")]
        assert sub_grads and all(g is not None for g in sub_grads)
