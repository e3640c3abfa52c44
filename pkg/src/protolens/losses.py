"""Loss assembly and gradient verification.

total_loss is the forward-only reference; loss_and_grads dispatches the
backward pass to the selected kernel backend and adds the batch-level
diversity gradient. grad_check holds the analytic gradients to central
finite differences, scalar by scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import InstanceFeatures
from .kernels import get_backend
from .kernels.numpy_backend import (
    WEIGHT_TINY,
    instance_ce,
    position_weights,
)
from .model import COS_EPS, ProtoLensModel
from .spans import (
    SIGMA_CLAMP_HI,
    SIGMA_CLAMP_LO,
    MixtureParams,
    gaussian_pdf,
)

CE_CLAMP = 1e-12
REL_ERR_FLOOR = 1e-8


@dataclass
class LossBreakdown:
    total: float
    ce: float
    gmm: float  # nll + lambda_l1 * l1
    nll: float
    l1: float
    div: float

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "ce": self.ce,
            "gmm": self.gmm,
            "nll": self.nll,
            "l1": self.l1,
            "div": self.div,
        }


def cross_entropy(true_label: int, probabilities: np.ndarray) -> float:
    """Negative log probability of the true class, input clamped at 1e-12."""
    return float(-np.log(max(float(probabilities[true_label]), CE_CLAMP)))


def nll_loss(curve: np.ndarray, params: MixtureParams, eps_nll: float) -> float:
    """Position-weighted negative log-likelihood of one curve's mixture.

    Positions t = 1..T are weighted by the min-shifted, sum-normalized curve
    (uniform when the curve is constant); the density is floored at eps_nll
    inside the log.
    """
    T = curve.shape[0]
    weights, _, _ = position_weights(curve)
    positions = np.arange(1, T + 1, dtype=np.float64)
    dens = np.zeros(T)
    for m in range(params.mu.shape[0]):
        dens += params.pi_norm[m] * gaussian_pdf(
            positions, float(params.mu[m]), float(params.sigma[m])
        )
    return float(-np.sum(weights * np.log(dens + eps_nll)))


def gmm_loss(curves, params_list, cfg) -> float:
    """Mean NLL over (instance, prototype) pairs plus the L1 pressure.

    ``curves`` and ``params_list`` are parallel flat sequences of per-pair
    curves and MixtureParams; the L1 term is lambda_l1 times the mean of
    sum |pi_raw| over the same pairs.
    """
    n = len(curves)
    if n == 0:
        raise ValueError("gmm_loss needs a non-empty batch")
    nll = sum(nll_loss(c, p, cfg.eps_nll) for c, p in zip(curves, params_list)) / n
    l1 = sum(float(np.sum(np.abs(p.pi_raw))) for p in params_list) / n
    return nll + cfg.lambda_l1 * l1


def diversity_loss(prototypes: np.ndarray, sign_corrected: bool = True) -> float:
    value, _ = diversity_and_grad(prototypes, sign_corrected)
    return value


def diversity_and_grad(
    prototypes: np.ndarray, sign_corrected: bool = True
) -> tuple[float, np.ndarray]:
    """Pairwise-cosine penalty over unordered prototype pairs, with gradient.

    sign_corrected=True sums cos(p_i, p_j), so minimizing it pushes
    prototypes apart; False keeps the literal sum of (1 - cos) form.
    """
    K = prototypes.shape[0]
    if K < 2:
        raise ValueError(f"diversity needs at least 2 prototypes, got {K}")
    P = prototypes
    norms = np.linalg.norm(P, axis=1)
    D = norms[:, None] * norms[None, :] + COS_EPS
    C = (P @ P.T) / D
    np.fill_diagonal(C, 0.0)
    cos_sum = float(np.sum(np.triu(C, k=1)))

    W = 1.0 / D
    np.fill_diagonal(W, 0.0)
    R = C * norms[None, :] / D
    np.fill_diagonal(R, 0.0)
    inv_n = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
    dP = W @ P - (np.sum(R, axis=1) * inv_n)[:, None] * P

    if sign_corrected:
        return cos_sum, dP
    npairs = K * (K - 1) // 2
    return float(npairs) - cos_sum, -dP


def _coefficients(model: ProtoLensModel, batch_size: int) -> tuple[float, float, float]:
    loss_cfg = model.config.loss
    c_ce = 1.0 / batch_size
    c_nll = loss_cfg.alpha / (batch_size * model.config.K)
    c_l1 = loss_cfg.alpha * loss_cfg.lambda_l1 / (batch_size * model.config.K)
    return c_ce, c_nll, c_l1


def _assemble(
    model: ProtoLensModel, ce: float, nll: float, l1: float, div: float
) -> LossBreakdown:
    """Combine pre-averaged components into the weighted total."""
    cfg = model.config.loss
    gmm = nll + cfg.lambda_l1 * l1
    return LossBreakdown(
        total=ce + cfg.alpha * gmm + cfg.beta * div,
        ce=ce,
        gmm=gmm,
        nll=nll,
        l1=l1,
        div=div,
    )


def _diversity_term(model: ProtoLensModel) -> float:
    if model.config.ablations.no_diversity:
        return 0.0
    return diversity_loss(
        model.prototypes.vectors, model.config.loss.diversity_sign_corrected
    )


def total_loss(model: ProtoLensModel, features: list[InstanceFeatures]) -> LossBreakdown:
    """Forward-only loss over a batch; the finite-difference objective."""
    B = len(features)
    if B == 0:
        raise ValueError("empty batch")
    K = model.config.K
    eps_nll = model.config.loss.eps_nll
    ce_sum = nll_sum = l1_sum = 0.0
    for feats in features:
        record = model.forward(feats)
        ce_sum += instance_ce(record, feats.label)
        for k in range(K):
            params = MixtureParams(
                nu=record.nu[k],
                pi_raw=record.pi_raw[k],
                pi_norm=record.pi_norm[k],
                mu=record.mu[k],
                sigma=record.sigma[k],
            )
            nll_sum += nll_loss(record.curves[k], params, eps_nll)
            l1_sum += float(np.sum(np.abs(record.pi_raw[k])))
    div = _diversity_term(model)
    return _assemble(model, ce_sum / B, nll_sum / (B * K), l1_sum / (B * K), div)


def loss_and_grads(
    model: ProtoLensModel, features: list[InstanceFeatures]
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Batch loss plus analytic gradients for every trainable array."""
    B = len(features)
    if B == 0:
        raise ValueError("empty batch")
    K = model.config.K
    records = [model.forward(f) for f in features]
    labels = [f.label for f in features]
    grads = model.zero_grads()
    c_ce, c_nll, c_l1 = _coefficients(model, B)
    backend = get_backend()
    ce_sum, nll_sum, l1_sum = backend.batch_loss_and_grads(
        model, records, labels, grads, c_ce, c_nll, c_l1
    )
    if model.config.ablations.no_diversity:
        div = 0.0
    else:
        div, dP = diversity_and_grad(
            model.prototypes.vectors, model.config.loss.diversity_sign_corrected
        )
        grads["prototypes"] += model.config.loss.beta * dP
    return (
        _assemble(model, ce_sum / B, nll_sum / (B * K), l1_sum / (B * K), div),
        grads,
    )


def finite_difference_grads(
    model: ProtoLensModel, features: list[InstanceFeatures], step: float = 1e-5
) -> dict[str, np.ndarray]:
    """Central differences of total_loss for every trainable scalar."""
    fd = {}
    for name, arr in model.parameters().items():
        flat = arr.ravel()
        out = np.zeros_like(flat)
        for i in range(flat.shape[0]):
            original = flat[i]
            flat[i] = original + step
            up = total_loss(model, features).total
            flat[i] = original - step
            down = total_loss(model, features).total
            flat[i] = original
            out[i] = (up - down) / (2.0 * step)
        fd[name] = out.reshape(arr.shape)
    return fd


def compare_grads(
    analytic: dict[str, np.ndarray], fd: dict[str, np.ndarray]
) -> dict[str, float]:
    """Per-group max of the scalar relative error |a-f| / max(|a|,|f|,1e-8)."""
    out = {}
    for name in analytic:
        a = analytic[name].ravel()
        f = fd[name].ravel()
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), REL_ERR_FLOOR)
        out[name] = float(np.max(np.abs(a - f) / denom)) if a.size else 0.0
    return out


@dataclass
class GradCheckReport:
    step: float
    per_param: dict[str, float]
    max_rel_err: float
    worst_param: str

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_err < tolerance

    def to_json_dict(self) -> dict[str, float]:
        return dict(self.per_param)


def grad_check(
    model: ProtoLensModel,
    features: list[InstanceFeatures],
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    _, analytic = loss_and_grads(model, features)
    fd = finite_difference_grads(model, features, step)
    per_param = compare_grads(analytic, fd)
    worst = max(per_param, key=per_param.get)
    return GradCheckReport(
        step=step,
        per_param=per_param,
        max_rel_err=per_param[worst],
        worst_param=worst,
    )


def conditioning_report(
    model: ProtoLensModel, features: list[InstanceFeatures]
) -> dict[str, float]:
    """Distances to the backward pass's nondifferentiable switches.

    Small margins mean a finite-difference probe may straddle an argmax flip,
    a mask kink, a clamp edge, or the uniform-weight fallback, making the
    comparison to analytic gradients unreliable at that step size.
    """
    argmax_gap = np.inf
    kink = np.inf
    clamp_margin = np.inf
    argmin_gap = np.inf
    normalizer = np.inf
    for feats in features:
        record = model.forward(feats)
        T = record.T
        positions = np.arange(1, T + 1, dtype=np.float64)
        for k in range(model.config.K):
            pi = np.sort(record.pi_raw[k])[::-1]
            if pi.shape[0] > 1:
                argmax_gap = min(argmax_gap, float(pi[0] - pi[1]))
            sel = record.selected[k]
            u = (
                model.config.R
                + record.sigma[k, sel]
                - np.abs(record.mu[k, sel] - positions)
            ) / model.config.R
            kink = min(kink, float(np.min(np.abs(u))), float(np.min(np.abs(u - 1.0))))
            clamp_margin = min(
                clamp_margin,
                float(np.min(np.abs(record.pre_sigma[k] - SIGMA_CLAMP_LO))),
                float(np.min(np.abs(record.pre_sigma[k] - SIGMA_CLAMP_HI))),
            )
            curve = np.sort(record.curves[k])
            if curve.shape[0] > 1:
                argmin_gap = min(argmin_gap, float(curve[1] - curve[0]))
            _, _, W = position_weights(record.curves[k])
            normalizer = min(normalizer, float(W - WEIGHT_TINY))
    return {
        "argmax_gap": argmax_gap,
        "mask_kink_distance": kink,
        "sigma_clamp_margin": clamp_margin,
        "argmin_gap": argmin_gap,
        "weight_normalizer": normalizer,
    }
