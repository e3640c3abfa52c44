"""Backend selection and numpy/cython agreement on the training hot path."""

import numpy as np
import pytest

import protolens.kernels as kernels
from protolens.config import TrainConfig
from protolens.data import generate_synthetic
from protolens.errors import ConfigError
from protolens.kernels import backend_name, get_backend
from protolens.kernels.numpy_backend import WEIGHT_TINY, position_weights

from conftest import TINY_PHRASES

_core = pytest.importorskip(
    "protolens.kernels._core", reason="compiled extension not built"
)
from protolens.kernels import cython_backend, numpy_backend  # noqa: E402


def build_batch(seed=0, batch=3, K=3, T_max=12):
    from protolens.model import ProtoLensModel

    cfg = TrainConfig(
        K=K, M=3, n_gram=2, d=8, hash_dim=64, T_max=T_max, batch_size=batch, seed=seed
    )
    corpus, _, _ = generate_synthetic(
        batch * 2, 2, 40, TINY_PHRASES, T_max, seed=seed
    )
    rng = np.random.default_rng([seed, 0])
    model = ProtoLensModel.init(cfg, 2, rng)
    feats = [model.featurize(inst) for inst in corpus[:batch]]
    records = [model.forward(f) for f in feats]
    labels = [f.label for f in feats]
    return model, records, labels


class TestSelection:
    @pytest.fixture(autouse=True)
    def reset_cache(self, monkeypatch):
        monkeypatch.setattr(kernels, "_BACKEND", None)
        monkeypatch.setattr(kernels, "_BACKEND_NAME", None)
        yield

    def test_default_prefers_cython(self, monkeypatch):
        monkeypatch.delenv("PROTOLENS_BACKEND", raising=False)
        assert backend_name() == "cython"

    def test_forced_numpy(self, monkeypatch):
        monkeypatch.setenv("PROTOLENS_BACKEND", "numpy")
        assert backend_name() == "numpy"
        assert get_backend() is numpy_backend

    def test_forced_cython(self, monkeypatch):
        monkeypatch.setenv("PROTOLENS_BACKEND", "cython")
        assert backend_name() == "cython"
        assert get_backend() is cython_backend

    def test_invalid_value_rejected(self, monkeypatch):
        monkeypatch.setenv("PROTOLENS_BACKEND", "fortran")
        with pytest.raises(ConfigError, match="PROTOLENS_BACKEND"):
            get_backend()

    def test_resolution_is_cached(self, monkeypatch):
        monkeypatch.delenv("PROTOLENS_BACKEND", raising=False)
        first = get_backend()
        monkeypatch.setenv("PROTOLENS_BACKEND", "numpy")
        assert get_backend() is first  # env is only read once per process


class TestParity:
    def test_losses_and_grads_agree(self):
        model, records, labels = build_batch(seed=1)
        results = {}
        for backend in (numpy_backend, cython_backend):
            grads = model.zero_grads()
            sums = backend.batch_loss_and_grads(
                model, records, labels, grads, 0.5, 0.01, 0.001
            )
            results[backend.NAME] = (sums, grads)
        (ce_n, nll_n, l1_n), grads_n = results["numpy"]
        (ce_c, nll_c, l1_c), grads_c = results["cython"]
        assert ce_c == pytest.approx(ce_n, abs=1e-12)
        assert nll_c == pytest.approx(nll_n, abs=1e-11)
        assert l1_c == pytest.approx(l1_n, abs=1e-12)
        for name in grads_n:
            scale = max(float(np.max(np.abs(grads_n[name]))), 1e-12)
            diff = float(np.max(np.abs(grads_n[name] - grads_c[name])))
            assert diff / scale < 1e-10, f"{name}: rel diff {diff / scale:.3e}"

    def test_agreement_across_shapes(self):
        for seed, batch, K, T_max in [(3, 1, 2, 6), (4, 4, 5, 16), (5, 2, 3, 9)]:
            model, records, labels = build_batch(seed, batch, K, T_max)
            grads_n = model.zero_grads()
            grads_c = model.zero_grads()
            sums_n = numpy_backend.batch_loss_and_grads(
                model, records, labels, grads_n, 1.0, 0.1, 0.01
            )
            sums_c = cython_backend.batch_loss_and_grads(
                model, records, labels, grads_c, 1.0, 0.1, 0.01
            )
            assert sums_c == pytest.approx(sums_n, abs=1e-10)
            for name in grads_n:
                assert np.allclose(grads_n[name], grads_c[name], atol=1e-11), name


class TestCoreKernels:
    def test_densities_match_formula(self):
        rng = np.random.default_rng(0)
        K, M, T = 3, 4, 7
        mu = rng.uniform(0.0, T, (K, M))
        sigma = rng.uniform(0.3, 3.0, (K, M))
        pi = rng.uniform(0.1, 1.0, (K, M))
        pi /= pi.sum(axis=1, keepdims=True)
        eps = 1e-8
        phi, mixdens, logdens = _core.densities(mu, sigma, pi, T, eps)
        positions = np.arange(1, T + 1, dtype=np.float64)
        z = (positions[None, None, :] - mu[:, :, None]) / sigma[:, :, None]
        want_phi = np.exp(-0.5 * z * z) / (
            sigma[:, :, None] * np.sqrt(2.0 * np.pi)
        )
        want_mix = np.sum(pi[:, :, None] * want_phi, axis=1)
        assert np.allclose(phi, want_phi, atol=1e-13)
        assert np.allclose(mixdens, want_mix, atol=1e-13)
        assert np.allclose(logdens, np.log(want_mix + eps), atol=1e-13)

    def test_position_weights_batch_matches_reference(self):
        rng = np.random.default_rng(1)
        curves = rng.uniform(-1.0, 1.0, (4, 9))
        curves[2] = 0.7  # constant row exercises the uniform fallback
        weights, t_mins, normalizers = _core.position_weights_batch(
            curves, WEIGHT_TINY
        )
        for k in range(4):
            w_ref, t_ref, W_ref = position_weights(curves[k])
            assert np.allclose(weights[k], w_ref, atol=1e-14)
            assert t_mins[k] == t_ref
            assert normalizers[k] == pytest.approx(W_ref, abs=1e-14)

    def test_nll_values_match_reference(self):
        rng = np.random.default_rng(2)
        weights = rng.uniform(0.0, 1.0, (3, 6))
        weights /= weights.sum(axis=1, keepdims=True)
        logdens = rng.normal(size=(3, 6))
        got = _core.nll_values(weights, logdens)
        want = -np.sum(weights * logdens, axis=1)
        assert np.allclose(got, want, atol=1e-13)

    def test_weight_path_grads_match_quotient_rule(self):
        rng = np.random.default_rng(3)
        K, T = 2, 5
        curves = rng.uniform(-1.0, 1.0, (K, T))
        weights, t_mins, normalizers = _core.position_weights_batch(
            curves, WEIGHT_TINY
        )
        dw = rng.normal(size=(K, T))
        dcurves = np.zeros((K, T))
        _core.weight_path_grads(dw, weights, t_mins, normalizers, WEIGHT_TINY, dcurves)
        for k in range(K):
            W = normalizers[k]
            da = (dw[k] - float(np.dot(dw[k], weights[k]))) / W
            want = da.copy()
            want[t_mins[k]] -= float(np.sum(da))
            assert np.allclose(dcurves[k], want, atol=1e-13)

    def test_density_param_grads_match_einsum(self):
        rng = np.random.default_rng(4)
        K, M, T = 2, 3, 6
        mu = rng.uniform(0.0, T, (K, M))
        sigma = rng.uniform(0.4, 2.5, (K, M))
        pi = rng.uniform(0.1, 1.0, (K, M))
        pi /= pi.sum(axis=1, keepdims=True)
        phi, _, _ = _core.densities(mu, sigma, pi, T, 1e-8)
        ddens = rng.normal(size=(K, T))
        dmu = np.zeros((K, M))
        dsigma = np.zeros((K, M))
        dpi = _core.density_param_grads(phi, mu, sigma, pi, ddens, dmu, dsigma)
        want_dpi = np.einsum("kmt,kt->km", phi, ddens)
        positions = np.arange(1, T + 1, dtype=np.float64)
        z = (positions[None, None, :] - mu[:, :, None]) / sigma[:, :, None]
        dphi = pi[:, :, None] * ddens[:, None, :]
        want_dmu = np.sum(dphi * phi * z / sigma[:, :, None], axis=2)
        want_dsigma = np.sum(dphi * phi * (z * z - 1.0) / sigma[:, :, None], axis=2)
        assert np.allclose(dpi, want_dpi, atol=1e-12)
        assert np.allclose(dmu, want_dmu, atol=1e-12)
        assert np.allclose(dsigma, want_dsigma, atol=1e-12)
