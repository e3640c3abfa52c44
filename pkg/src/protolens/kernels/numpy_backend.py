"""Reference batch gradient kernel in plain numpy.

One call of instance_loss_and_grads walks the whole computational graph of a
single instance backwards, accumulating scaled gradients in-place. The math
mirrors model.forward and is held to finite differences by the gradcheck
harness, so treat every formula here as load-bearing.

Gradient conventions:
 - clip() passes gradient on the closed interval (boundary points included);
 - argmax/argmin selections are treated as constants of the backward pass;
 - epsilon guards match the forward definitions exactly.
"""

from __future__ import annotations

import numpy as np

from ..model import COS_EPS, REFINE_EPS, RMS_EPS, ForwardRecord
from ..spans import SIGMA_CLAMP_HI, SIGMA_CLAMP_LO

NAME = "numpy"

_SQRT_2PI = np.sqrt(2.0 * np.pi)
WEIGHT_TINY = 1e-12  # below this total mass the position weights go uniform


def position_weights(curve: np.ndarray) -> tuple[np.ndarray, int, float]:
    """Min-shifted, sum-normalized curve weights.

    Returns (weights, argmin index, normalizer W); W <= WEIGHT_TINY marks the
    uniform fallback for (near-)constant curves.
    """
    t_min = int(np.argmin(curve))
    shifted = curve - curve[t_min]
    W = float(np.sum(shifted))
    if W <= WEIGHT_TINY:
        T = curve.shape[0]
        return np.full(T, 1.0 / T), t_min, W
    return shifted / W, t_min, W


def instance_ce(record: ForwardRecord, label: int) -> float:
    """Cross-entropy from logits via log-sum-exp (no probability clamp needed)."""
    logits = record.logits
    m = float(np.max(logits))
    return float(np.log(np.sum(np.exp(logits - m))) + m - logits[label])


def instance_loss_and_grads(
    model,
    record: ForwardRecord,
    label: int,
    grads: dict[str, np.ndarray],
    c_ce: float,
    c_nll: float,
    c_l1: float,
) -> tuple[float, float, float]:
    """Backward pass for one instance; returns raw (ce, nll_sum, l1_sum).

    The returned scalars are unscaled (per-instance CE, NLL summed over
    prototypes, L1 summed over prototypes); the gradient contributions are
    accumulated into ``grads`` with the caller's coefficients already
    applied.
    """
    cfg = model.config
    K, M, T = cfg.K, cfg.M, record.T
    eps_nll = cfg.loss.eps_nll
    E = record.embeddings
    P = model.prototypes.vectors
    rows = np.arange(K)

    # ----- losses (forward values) -----
    ce = instance_ce(record, label)

    positions = np.arange(1, T + 1, dtype=np.float64)
    # densities phi[k, m, t]
    z = (positions[None, None, :] - record.mu[:, :, None]) / record.sigma[:, :, None]
    phi = np.exp(-0.5 * z * z) / (record.sigma[:, :, None] * _SQRT_2PI)
    mixdens = np.einsum("km,kmt->kt", record.pi_norm, phi)  # (K, T)
    logdens = np.log(mixdens + eps_nll)

    weights = np.empty((K, T))
    t_mins = np.empty(K, dtype=np.int64)
    normalizers = np.empty(K)
    for k in range(K):
        weights[k], t_mins[k], normalizers[k] = position_weights(record.curves[k])
    nll_per_k = -np.sum(weights * logdens, axis=1)  # (K,)
    nll_sum = float(np.sum(nll_per_k))
    l1_sum = float(np.sum(np.abs(record.pi_raw)))

    # ----- CE backward: logits -> head -> normed -----
    dlogits = record.probs.copy()
    dlogits[label] -= 1.0
    dlogits *= c_ce
    grads["head_bias"] += dlogits
    grads["head_weights"] += np.outer(dlogits, record.normed)
    dnormed = model.head_weights.T @ dlogits  # (K,)

    # ----- RMSNorm backward -----
    scores, rms = record.scores, record.rms
    grads["rms_gain"] += dnormed * scores / rms
    inner = float(np.sum(dnormed * model.rms_gain * scores))
    dscores = dnormed * model.rms_gain / rms - scores * inner / (K * rms**3)

    # ----- score cosine backward: scores_k = cos(refined_k, p_k) -----
    n_z = record.refined_norms
    n_p = record.proto_norms
    denom = n_z * n_p + COS_EPS
    a = record.scores * denom  # refined_k . p_k
    inv_nz = np.where(n_z > 0, 1.0 / np.where(n_z > 0, n_z, 1.0), 0.0)
    inv_np = np.where(n_p > 0, 1.0 / np.where(n_p > 0, n_p, 1.0), 0.0)
    dZ = (
        dscores[:, None] * P / denom[:, None]
        - (dscores * a * n_p * inv_nz / denom**2)[:, None] * record.refined
    )  # (K, d)
    grads["prototypes"] += (
        dscores[:, None] * record.refined / denom[:, None]
        - (dscores * a * n_z * inv_np / denom**2)[:, None] * P
    )

    # ----- refined-embedding backward -----
    S = record.mask_sum + REFINE_EPS
    dE = record.mask.T @ (dZ / S[:, None])  # (T, d)
    dual = dZ @ E.T  # (K, T): dZ_k . E_t
    proj = np.sum(dZ * record.refined, axis=1)  # (K,): dZ_k . Z_k
    dmask = (dual - proj[:, None]) / S[:, None]  # (K, T)

    # ----- mask backward (gradient lives on the open ramp only) -----
    mu_star = record.mu[rows, record.selected]
    open_ramp = (record.mask > 0.0) & (record.mask < 1.0)
    ramp_contrib = np.where(open_ramp, dmask, 0.0) / cfg.R
    dsigma_sel = np.sum(ramp_contrib, axis=1)  # (K,)
    dmu_sel = -np.sum(ramp_contrib * np.sign(mu_star[:, None] - positions[None, :]), axis=1)

    dmu = np.zeros((K, M))
    dsigma = np.zeros((K, M))
    dmu[rows, record.selected] += dmu_sel
    dsigma[rows, record.selected] += dsigma_sel

    # ----- NLL backward -----
    g = mixdens + eps_nll
    ddens = -(c_nll * weights) / g  # (K, T)
    dpi_norm = np.einsum("kmt,kt->km", phi, ddens)  # (K, M)
    dphi = record.pi_norm[:, :, None] * ddens[:, None, :]  # (K, M, T)
    dmu += np.sum(dphi * phi * z, axis=2) / record.sigma
    dsigma += np.sum(dphi * phi * (z * z - 1.0), axis=2) / record.sigma

    # weight path: w depends on the curve
    dcurves = np.zeros((K, T))
    dw = -c_nll * logdens  # (K, T)
    for k in range(K):
        if normalizers[k] <= WEIGHT_TINY:
            continue  # uniform fallback: constant in the curve
        da = (dw[k] - float(np.sum(dw[k] * weights[k]))) / normalizers[k]
        dcurves[k] += da
        dcurves[k, t_mins[k]] -= float(np.sum(da))

    # ----- pi_norm -> pi_raw (normalization), plus the L1 term -----
    S_pi = np.sum(record.pi_raw, axis=1, keepdims=True)  # (K, 1)
    dpi_raw = (dpi_norm - np.sum(dpi_norm * record.pi_norm, axis=1, keepdims=True)) / S_pi
    dpi_raw += c_l1 * np.sign(record.pi_raw)

    # ----- stick-breaking backward -----
    remaining = np.concatenate(
        [np.ones((K, 1)), np.cumprod(1.0 - record.nu, axis=1)[:, :-1]], axis=1
    )
    prod = dpi_raw * record.pi_raw  # (K, M)
    # suffix[k, m] = sum_{j > m} prod[k, j]
    suffix = np.cumsum(prod[:, ::-1], axis=1)[:, ::-1] - prod
    one_minus_nu = 1.0 - record.nu
    safe = np.where(one_minus_nu != 0.0, one_minus_nu, 1.0)
    dnu = dpi_raw * remaining - np.where(one_minus_nu != 0.0, suffix / safe, 0.0)

    # ----- heads backward -----
    sig_mu = record.mu / T  # sigmoid(a_mu)
    da_mu = dmu * T * sig_mu * (1.0 - sig_mu)
    in_clamp = (record.pre_sigma >= SIGMA_CLAMP_LO) & (record.pre_sigma <= SIGMA_CLAMP_HI)
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
    dh = da_mu @ hd.w_mu + da_sigma @ hd.w_sigma + da_nu @ hd.w_pi  # (K, hidden)

    # ----- MLP backward -----
    grads["w2"] += dh.T @ record.h1
    grads["b2"] += np.sum(dh, axis=0)
    dh1 = dh @ hd.w2
    dpre1 = dh1 * (1.0 - record.h1 * record.h1)
    grads["w1"] += dpre1.T @ record.padded
    grads["b1"] += np.sum(dpre1, axis=0)
    dpadded = dpre1 @ hd.w1  # (K, t_max)
    dcurves += dpadded[:, :T]

    # ----- curve cosine backward -----
    n_e = record.embed_norms
    D = n_p[:, None] * n_e[None, :] + COS_EPS  # (K, T)
    W1 = dcurves / D
    Q = dcurves * record.curves / D
    inv_ne = np.where(n_e > 0, 1.0 / np.where(n_e > 0, n_e, 1.0), 0.0)
    grads["prototypes"] += W1 @ E - ((Q @ n_e) * inv_np)[:, None] * P
    dE += W1.T @ P - ((Q.T @ n_p) * inv_ne)[:, None] * E

    # ----- encoder backward -----
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
