"""Core model ops and the assembled forward pass."""

import math

import numpy as np
import pytest

from protolens.config import TrainConfig
from protolens.data import Instance
from protolens.encoder import featurize
from protolens.errors import ConfigError
from protolens.model import (
    PARAM_ORDER,
    ProtoLensModel,
    PrototypeBank,
    cosine,
    refine_embedding,
    rmsnorm,
)

from oracles import oracle_forward


def tiny_model(seed=0, num_classes=2, **overrides):
    base = dict(K=3, M=2, n_gram=2, d=8, hash_dim=32, T_max=10, batch_size=2, seed=seed)
    base.update(overrides)
    cfg = TrainConfig(**base)
    rng = np.random.default_rng(seed)
    return ProtoLensModel.init(cfg, num_classes, rng)


class TestCosine:
    def test_parallel_and_antiparallel(self):
        u = np.array([1.0, 2.0, 3.0])
        assert cosine(u, 2.0 * u) == pytest.approx(1.0, abs=1e-7)
        assert cosine(u, -u) == pytest.approx(-1.0, abs=1e-7)

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_zero_vector_guard(self):
        assert cosine(np.zeros(4), np.ones(4)) == 0.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        u, v = rng.normal(size=5), rng.normal(size=5)
        assert cosine(u, v) == pytest.approx(cosine(3.0 * u, 0.5 * v), abs=1e-7)


class TestRmsNorm:
    def test_hand_case(self):
        out, rms = rmsnorm(np.array([3.0, 4.0]), np.ones(2))
        assert rms == pytest.approx(math.sqrt(12.5 + 1e-6), abs=1e-12)
        assert out[0] == pytest.approx(0.8485, abs=1e-3)
        assert out[1] == pytest.approx(1.1314, abs=1e-3)

    def test_gain_scales_output(self):
        raw = np.array([1.0, -2.0, 0.5])
        out1, _ = rmsnorm(raw, np.ones(3))
        out2, _ = rmsnorm(raw, 2.0 * np.ones(3))
        assert np.allclose(out2, 2.0 * out1, atol=1e-12)

    def test_argmax_invariant_to_positive_scaling(self):
        raw = np.array([0.2, -0.7, 0.5, 0.1])
        out1, _ = rmsnorm(raw, np.ones(4))
        out2, _ = rmsnorm(10.0 * raw, np.ones(4))
        assert np.argmax(out1) == np.argmax(out2)

    def test_zero_input_stays_finite(self):
        out, rms = rmsnorm(np.zeros(3), np.ones(3))
        assert np.all(np.isfinite(out)) and rms > 0


class TestRefineEmbedding:
    def test_uniform_mask_is_mean(self):
        E = np.arange(12, dtype=np.float64).reshape(4, 3)
        z = refine_embedding(E, np.ones(4))
        assert np.allclose(z, E.mean(axis=0), atol=1e-7)

    def test_one_hot_mask_selects_row(self):
        E = np.arange(12, dtype=np.float64).reshape(4, 3)
        mask = np.array([0.0, 0.0, 1.0, 0.0])
        assert np.allclose(refine_embedding(E, mask), E[2], rtol=1e-7)

    def test_zero_mask_gives_zero(self):
        E = np.ones((3, 2))
        assert np.array_equal(refine_embedding(E, np.zeros(3)), np.zeros(2))


class TestPrototypeBank:
    def test_valid(self):
        bank = PrototypeBank(np.ones((2, 4)))
        assert bank.vectors.shape == (2, 4)

    def test_wrong_ndim(self):
        with pytest.raises(ConfigError):
            PrototypeBank(np.ones(4))

    def test_too_few_prototypes(self):
        with pytest.raises(ConfigError):
            PrototypeBank(np.ones((1, 4)))

    def test_non_finite(self):
        vecs = np.ones((2, 3))
        vecs[0, 0] = np.inf
        with pytest.raises(ConfigError):
            PrototypeBank(vecs)


class TestModelInit:
    def test_parameter_catalog(self):
        model = tiny_model()
        params = model.parameters()
        assert tuple(params) == PARAM_ORDER
        assert params["projection"].shape == (8, 32)
        assert params["prototypes"].shape == (3, 8)
        assert params["head_weights"].shape == (2, 3)

    def test_num_classes_validation(self):
        with pytest.raises(ConfigError):
            tiny_model(num_classes=1)

    def test_seed_embeddings_copied_into_prototypes(self):
        cfg = TrainConfig(K=2, M=2, n_gram=2, d=4, hash_dim=16, T_max=8, seed=0)
        rng = np.random.default_rng(0)
        pool = np.arange(20, dtype=np.float64).reshape(5, 4)
        model = ProtoLensModel.init(cfg, 2, rng, seed_embeddings=pool)
        for row in model.prototypes.vectors:
            assert any(np.array_equal(row, cand) for cand in pool)

    def test_set_parameters_round_trip(self):
        model = tiny_model()
        snapshot = {k: v.copy() for k, v in model.parameters().items()}
        model.prototypes.vectors += 1.0
        model.set_parameters(snapshot)
        assert np.array_equal(model.prototypes.vectors, snapshot["prototypes"])

    def test_set_parameters_unknown_name(self):
        with pytest.raises(ConfigError, match="unknown"):
            tiny_model().set_parameters({"nonsense": np.zeros(2)})

    def test_set_parameters_bad_shape(self):
        with pytest.raises(ConfigError, match="shape"):
            tiny_model().set_parameters({"prototypes": np.zeros((9, 9))})

    def test_zero_grads_shapes(self):
        model = tiny_model()
        grads = model.zero_grads()
        for name, arr in model.parameters().items():
            assert grads[name].shape == arr.shape
            assert not grads[name].any()


class TestForward:
    def test_shapes(self):
        model = tiny_model()
        record = model.forward(Instance("alpha beta gamma delta epsilon", 0))
        T = record.T
        assert record.curves.shape == (3, T)
        assert record.mask.shape == (3, T)
        assert record.mu.shape == (3, 2)
        assert record.probs.shape == (2,)
        assert np.all(record.mask >= 0) and np.all(record.mask <= 1)
        assert record.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_accepts_features_or_instance(self):
        model = tiny_model()
        inst = Instance("one two three", 1)
        via_instance = model.forward(inst)
        via_features = model.forward(model.featurize(inst))
        assert np.array_equal(via_instance.logits, via_features.logits)

    def test_long_text_is_truncated_not_rejected(self):
        model = tiny_model()
        text = " ".join(f"tok{i}" for i in range(200))
        record = model.forward(Instance(text, 0))
        assert record.T == model.config.T_max

    def test_oversized_features_rejected(self):
        model = tiny_model()
        text = " ".join(f"tok{i}" for i in range(200))
        feats = featurize(Instance(text, 0), model.config.n_gram, model.config.hash_dim)
        with pytest.raises(ConfigError, match="T_max"):
            model.forward(feats)

    def test_single_token_text(self):
        record = tiny_model().forward(Instance("word", 0))
        assert record.T == 1
        assert record.mask.shape == (3, 1)

    def test_matches_loop_oracle(self):
        model = tiny_model(seed=4)
        fwd = oracle_forward(model, "some words about a dull plot .")
        record = model.forward(Instance("some words about a dull plot .", 0))
        assert record.T == fwd["T"]
        assert np.allclose(record.curves, fwd["curves"], atol=1e-12)
        assert np.allclose(record.mask, fwd["mask"], atol=1e-12)
        assert np.allclose(record.probs, fwd["probs"], atol=1e-12)


class TestPredict:
    def test_proba_normalized(self):
        model = tiny_model()
        probs = model.predict_proba(Instance("a b c", 0))
        assert probs.shape == (2,)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_predict_is_argmax(self):
        model = tiny_model()
        inst = Instance("a b c d", 0)
        assert model.predict(inst) == int(np.argmax(model.predict_proba(inst)))

    def test_class_weight_of_binary(self):
        model = tiny_model()
        w = model.head_weights
        assert model.class_weight_of(1) == pytest.approx(w[1, 1] - w[0, 1])

    def test_class_weight_of_multiclass_rejected(self):
        model = tiny_model(num_classes=3)
        with pytest.raises(ConfigError):
            model.class_weight_of(0)

    def test_max_tokens_budget(self):
        model = tiny_model()
        assert model.max_tokens == model.config.T_max + model.config.n_gram - 1
