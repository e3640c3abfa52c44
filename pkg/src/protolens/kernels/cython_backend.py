"""Compiled-kernel variant of the batch gradient pass.

Control flow and all BLAS-bound matrix products are identical to
numpy_backend; the (K, M, T) mixture-density block and the curve-weight
normalization run in the typed kernels from _core instead. Results match the
reference to float rounding (reassociated sums), which the parity tests pin
down.
"""

from __future__ import annotations

import numpy as np

from ..model import COS_EPS, REFINE_EPS, ForwardRecord
from ..spans import SIGMA_CLAMP_HI, SIGMA_CLAMP_LO
from . import _core
from .numpy_backend import WEIGHT_TINY, instance_ce

NAME = "cython"


def instance_loss_and_grads(
    model,
    record: ForwardRecord,
    label: int,
    grads: dict[str, np.ndarray],
    c_ce: float,
    c_nll: float,
    c_l1: float,
) -> tuple[float, float, float]:
    """Backward pass for one instance; returns raw (ce, nll_sum, l1_sum)."""
    cfg = model.config
    K, M, T = cfg.K, cfg.M, record.T
    eps_nll = cfg.loss.eps_nll
    E = record.embeddings
    P = model.prototypes.vectors
    rows = np.arange(K)

    ce = instance_ce(record, label)

    positions = np.arange(1, T + 1, dtype=np.float64)
    phi, mixdens, logdens = _core.densities(
        record.mu, record.sigma, record.pi_norm, T, eps_nll
    )
    weights, t_mins, normalizers = _core.position_weights_batch(
        record.curves, WEIGHT_TINY
    )
    nll_sum = float(np.sum(_core.nll_values(weights, logdens)))
    l1_sum = float(np.sum(np.abs(record.pi_raw)))

    dlogits = record.probs.copy()
    dlogits[label] -= 1.0
    dlogits *= c_ce
    grads["head_bias"] += dlogits
    grads["head_weights"] += np.outer(dlogits, record.normed)
    dnormed = model.head_weights.T @ dlogits

    scores, rms = record.scores, record.rms
    grads["rms_gain"] += dnormed * scores / rms
    inner = float(np.sum(dnormed * model.rms_gain * scores))
    dscores = dnormed * model.rms_gain / rms - scores * inner / (K * rms**3)

    n_z = record.refined_norms
    n_p = record.proto_norms
    denom = n_z * n_p + COS_EPS
    a = record.scores * denom
    inv_nz = np.where(n_z > 0, 1.0 / np.where(n_z > 0, n_z, 1.0), 0.0)
    inv_np = np.where(n_p > 0, 1.0 / np.where(n_p > 0, n_p, 1.0), 0.0)
    dZ = (
        dscores[:, None] * P / denom[:, None]
        - (dscores * a * n_p * inv_nz / denom**2)[:, None] * record.refined
    )
    grads["prototypes"] += (
        dscores[:, None] * record.refined / denom[:, None]
        - (dscores * a * n_z * inv_np / denom**2)[:, None] * P
    )

    S = record.mask_sum + REFINE_EPS
    dE = record.mask.T @ (dZ / S[:, None])
    dual = dZ @ E.T
    proj = np.sum(dZ * record.refined, axis=1)
    dmask = (dual - proj[:, None]) / S[:, None]

    mu_star = record.mu[rows, record.selected]
    open_ramp = (record.mask > 0.0) & (record.mask < 1.0)
    ramp_contrib = np.where(open_ramp, dmask, 0.0) / cfg.R
    dsigma_sel = np.sum(ramp_contrib, axis=1)
    dmu_sel = -np.sum(
        ramp_contrib * np.sign(mu_star[:, None] - positions[None, :]), axis=1
    )

    dmu = np.zeros((K, M))
    dsigma = np.zeros((K, M))
    dmu[rows, record.selected] += dmu_sel
    dsigma[rows, record.selected] += dsigma_sel

    g = mixdens + eps_nll
    ddens = -(c_nll * weights) / g
    dpi_norm = _core.density_param_grads(
        phi, record.mu, record.sigma, record.pi_norm, ddens, dmu, dsigma
    )

    dcurves = np.zeros((K, T))
    dw = -c_nll * logdens
    _core.weight_path_grads(dw, weights, t_mins, normalizers, WEIGHT_TINY, dcurves)

    S_pi = np.sum(record.pi_raw, axis=1, keepdims=True)
    dpi_raw = (
        dpi_norm - np.sum(dpi_norm * record.pi_norm, axis=1, keepdims=True)
    ) / S_pi
    dpi_raw += c_l1 * np.sign(record.pi_raw)

    remaining = np.concatenate(
        [np.ones((K, 1)), np.cumprod(1.0 - record.nu, axis=1)[:, :-1]], axis=1
    )
    prod = dpi_raw * record.pi_raw
    suffix = np.cumsum(prod[:, ::-1], axis=1)[:, ::-1] - prod
    one_minus_nu = 1.0 - record.nu
    safe = np.where(one_minus_nu != 0.0, one_minus_nu, 1.0)
    dnu = dpi_raw * remaining - np.where(one_minus_nu != 0.0, suffix / safe, 0.0)

    sig_mu = record.mu / T
    da_mu = dmu * T * sig_mu * (1.0 - sig_mu)
    in_clamp = (record.pre_sigma >= SIGMA_CLAMP_LO) & (
        record.pre_sigma <= SIGMA_CLAMP_HI
    )
    da_sigma = np.where(in_clamp, dsigma * record.sigma, 0.0)
    da_nu = dnu * record.nu * (1.0 - record.nu)

    h = record.h
    grads["w_mu"] += da_mu.T @ h
    grads["b_mu"] += np.sum(da_mu, axis=0)
    grads["w_sigma"] += da_sigma.T @ h
    grads["b_sigma"] += np.sum(da_sigma, axis=0)
    grads["w_pi"] += da_nu.T @ h
    grads["b_pi"] += np.sum(da_nu, axis=0)
    hd = model.head
    dh = da_mu @ hd.w_mu + da_sigma @ hd.w_sigma + da_nu @ hd.w_pi

    grads["w2"] += dh.T @ record.h1
    grads["b2"] += np.sum(dh, axis=0)
    dh1 = dh @ hd.w2
    dpre1 = dh1 * (1.0 - record.h1 * record.h1)
    grads["w1"] += dpre1.T @ record.padded
    grads["b1"] += np.sum(dpre1, axis=0)
    dpadded = dpre1 @ hd.w1
    dcurves += dpadded[:, :T]

    n_e = record.embed_norms
    D = n_p[:, None] * n_e[None, :] + COS_EPS
    W1 = dcurves / D
    Q = dcurves * record.curves / D
    inv_ne = np.where(n_e > 0, 1.0 / np.where(n_e > 0, n_e, 1.0), 0.0)
    grads["prototypes"] += W1 @ E - ((Q @ n_e) * inv_np)[:, None] * P
    dE += W1.T @ P - ((Q.T @ n_p) * inv_ne)[:, None] * E

    feats = record.features
    counts = np.diff(feats.indptr)
    if feats.indices.shape[0]:
        nz_rows = np.repeat(np.arange(T), counts)
        np.add.at(
            grads["projection"].T,
            feats.indices,
            dE[nz_rows] * feats.values[:, None],
        )
    if np.any(counts > 0):
        grads["projection_bias"] += np.sum(dE[counts > 0], axis=0)

    return ce, nll_sum, l1_sum


def batch_loss_and_grads(
    model,
    records: list[ForwardRecord],
    labels: list[int],
    grads: dict[str, np.ndarray],
    c_ce: float,
    c_nll: float,
    c_l1: float,
) -> tuple[float, float, float]:
    """Sum of instance passes; returns raw (ce_sum, nll_sum, l1_sum)."""
    ce_sum = nll_sum = l1_sum = 0.0
    for record, label in zip(records, labels):
        ce, nll, l1 = instance_loss_and_grads(
            model, record, label, grads, c_ce, c_nll, c_l1
        )
        ce_sum += ce
        nll_sum += nll
        l1_sum += l1
    return ce_sum, nll_sum, l1_sum
