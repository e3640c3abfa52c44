"""Span extraction: a small MLP reads a similarity curve and emits a
stick-breaking Gaussian mixture over positions; the winning component is
rendered as a trapezoidal soft mask and, for reporting, a discrete span.

Positions are 1-based (t = 1..T). The mixture mean is sigmoid-squashed and
scaled by the instance's true part count T, so means stay on the curve even
when it is much shorter than the padded MLP input width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SIGMA_CLAMP_LO = -6.0
SIGMA_CLAMP_HI = 3.0
DEFAULT_HIDDEN = 64
SPAN_THRESHOLD = 0.5


@dataclass
class MixtureHeadParams:
    """Two affine layers with a tanh between, then three heads (mu, sigma, nu).

    Curves shorter than t_max are zero-padded on the right before layer 1;
    longer ones are rejected upstream.
    """

    t_max: int
    hidden: int
    num_components: int
    w1: np.ndarray  # (hidden, t_max)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, hidden)
    b2: np.ndarray  # (hidden,)
    w_mu: np.ndarray  # (num_components, hidden)
    b_mu: np.ndarray  # (num_components,)
    w_sigma: np.ndarray  # (num_components, hidden)
    b_sigma: np.ndarray  # (num_components,)
    w_pi: np.ndarray  # (num_components, hidden)
    b_pi: np.ndarray  # (num_components,)

    def __post_init__(self):
        if self.num_components < 1:
            raise ConfigError("num_components must be >= 1")
        expected = {
            "w1": (self.hidden, self.t_max),
            "b1": (self.hidden,),
            "w2": (self.hidden, self.hidden),
            "b2": (self.hidden,),
            "w_mu": (self.num_components, self.hidden),
            "b_mu": (self.num_components,),
            "w_sigma": (self.num_components, self.hidden),
            "b_sigma": (self.num_components,),
            "w_pi": (self.num_components, self.hidden),
            "b_pi": (self.num_components,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {shape}")


@dataclass
class MixtureParams:
    """Mixture state for one similarity curve, every field shaped (M,)."""

    nu: np.ndarray
    pi_raw: np.ndarray
    pi_norm: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class SpanMask:
    """Trapezoid mask over part positions plus the (mu, sigma) that shaped it."""

    soft: np.ndarray  # (T,) entries in [0, 1]
    anchor: float  # selected component's mu
    spread: float  # selected component's sigma
    ramp: float  # R
    discrete: tuple[int, int] | None = field(default=None)


PEAK_GAIN = 6.0
PEAK_THRESHOLD = 0.5
PI_SCALE = 60.0
MU_SCALE = 3.0
SIGMA_INIT = 2.5
JITTER = 1e-3


def init_mixture_head(
    t_max: int, hidden: int, num_components: int, rng: np.random.Generator
) -> MixtureHeadParams:
    """Position-aware initialization so the mixture localizes from step one.

    A freshly initialized random MLP makes the stick-breaking weights depend
    on curve-wide averages, so the selected component just reflects the stick
    prior and its mean sits wherever b_mu put it. That start is nearly blind
    to where the curve actually peaks, and with small learning rates the head
    takes far longer to discover position than the rest of the model takes to
    fit the labels. Instead we build the hidden layer as a bank of narrow
    Gaussian position bumps thresholded at PEAK_THRESHOLD, so each unit fires
    only when the curve near its grid point clears the threshold. On top of
    that, each component gets a window of grid cells around its anchor:

    - w_pi contrasts the window against the cross-component mean, so the
      component whose window holds the peak wins the stick-breaking argmax.
    - w_mu holds first-moment rows, sliding the mean from the anchor toward
      the peak within the window.
    - b_mu staggers the anchors evenly over (0, 1) in sigmoid space and
      b_sigma starts every width at SIGMA_INIT.

    A small jitter keeps units from being exactly interchangeable and keeps
    distinct seeds distinguishable.
    """
    pos = np.arange(1, t_max + 1, dtype=np.float64)
    grid = (np.arange(hidden) + 0.5) / hidden * t_max
    width = max(t_max / hidden, 1.0)
    w1 = np.exp(-0.5 * ((pos[None, :] - grid[:, None]) / width) ** 2)
    w1 = PEAK_GAIN * w1 / w1.sum(axis=1, keepdims=True)
    w1 += rng.normal(0.0, JITTER, w1.shape)
    b1 = np.full(hidden, -PEAK_GAIN * PEAK_THRESHOLD)
    w2 = np.eye(hidden) + rng.normal(0.0, JITTER, (hidden, hidden))

    basin = t_max / (2.0 * num_components)
    anchors = (np.arange(num_components) + 0.5) / num_components * t_max
    dist = np.abs(grid[None, :] - anchors[:, None])

    pi_window = (dist <= 0.9 * basin).astype(np.float64)
    pi_window /= np.maximum(pi_window.sum(axis=1, keepdims=True), 1.0)
    w_pi = PI_SCALE * (pi_window - pi_window.mean(axis=0, keepdims=True))
    w_pi += rng.normal(0.0, JITTER, w_pi.shape)

    mu_window = (dist <= basin).astype(np.float64)
    counts = np.maximum(mu_window.sum(axis=1, keepdims=True), 1.0)
    offsets = (grid[None, :] - anchors[:, None]) / basin
    w_mu = MU_SCALE * offsets * mu_window / counts
    w_mu += rng.normal(0.0, JITTER, w_mu.shape)

    w_sigma = rng.normal(0.0, JITTER, (num_components, hidden))
    # sigmoid(b_mu) spaced roughly evenly in (0, 1)
    quantiles = (np.arange(num_components) + 0.5) / num_components
    b_mu = np.log(quantiles / (1.0 - quantiles))
    return MixtureHeadParams(
        t_max=t_max,
        hidden=hidden,
        num_components=num_components,
        w1=w1,
        b1=b1,
        w2=w2,
        b2=np.zeros(hidden),
        w_mu=w_mu,
        b_mu=b_mu,
        w_sigma=w_sigma,
        b_sigma=np.full(num_components, np.log(SIGMA_INIT)),
        w_pi=w_pi,
        b_pi=np.zeros(num_components),
    )


def pad_curve(curve: np.ndarray, t_max: int) -> np.ndarray:
    """Right-pad a similarity curve with zeros to t_max entries."""
    T = curve.shape[0]
    if T > t_max:
        raise ConfigError(f"curve length {T} exceeds t_max {t_max}")
    if T == t_max:
        return curve
    out = np.zeros(t_max)
    out[:T] = curve
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mixture_params(head: MixtureHeadParams, curve: np.ndarray) -> MixtureParams:
    """Run the MLP heads on one unpadded curve of length T <= t_max.

    mu = sigmoid(.) * T keeps means on the actual curve; sigma is exp of a
    clamped pre-activation so widths stay in a sane range; nu are the
    stick-breaking fractions in (0, 1).
    """
    T = curve.shape[0]
    x = pad_curve(curve, head.t_max)
    h1 = np.tanh(head.w1 @ x + head.b1)
    h = head.w2 @ h1 + head.b2
    mu = _sigmoid(head.w_mu @ h + head.b_mu) * T
    pre_sigma = np.clip(head.w_sigma @ h + head.b_sigma, SIGMA_CLAMP_LO, SIGMA_CLAMP_HI)
    sigma = np.exp(pre_sigma)
    nu = _sigmoid(head.w_pi @ h + head.b_pi)
    pi_raw, pi_norm = stick_break(nu)
    return MixtureParams(nu=nu, pi_raw=pi_raw, pi_norm=pi_norm, mu=mu, sigma=sigma)


def stick_break(nu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(pi_raw, pi_norm) from fractions: pi_m = nu_m * prod_{l<m} (1 - nu_l).

    The last stick is not forced to absorb the remainder, so pi_raw sums to
    strictly less than 1 for nu in (0, 1); pi_norm renormalizes to sum 1.
    """
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - nu)[:-1]))
    pi_raw = nu * remaining
    return pi_raw, pi_raw / np.sum(pi_raw)


def gaussian_pdf(x, mu: float, sigma: float):
    """Normal density; sigma must be strictly positive."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    z = (np.asarray(x, dtype=np.float64) - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * np.sqrt(2.0 * np.pi))


def span_mask(mu: float, sigma: float, ramp: float, T: int) -> np.ndarray:
    """Trapezoidal soft mask over positions 1..T.

    Flat 1 inside |mu - t| <= sigma, 0 beyond sigma + ramp, linear between.
    """
    if ramp <= 0:
        raise ValueError(f"ramp must be > 0, got {ramp}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    t = np.arange(1, T + 1, dtype=np.float64)
    return np.clip((ramp + sigma - np.abs(mu - t)) / ramp, 0.0, 1.0)


def select_component(params: MixtureParams) -> tuple[float, float]:
    """(mu, sigma) of the component with the largest raw weight.

    Ties go to the lowest index (numpy argmax behaviour).
    """
    m = int(np.argmax(params.pi_raw))
    return float(params.mu[m]), float(params.sigma[m])


def extract_soft_mask(
    params: MixtureParams, ramp: float, T: int, mode: str = "argmax"
) -> SpanMask:
    """Instance mask: the winning component's trapezoid, or with mode="union"
    the elementwise max over every component's trapezoid.

    The anchor/spread recorded on the mask are always the winning
    component's, whichever mode shaped the soft values.
    """
    mu_star, sigma_star = select_component(params)
    if mode == "argmax":
        soft = span_mask(mu_star, sigma_star, ramp, T)
    elif mode == "union":
        masks = [
            span_mask(float(params.mu[m]), float(params.sigma[m]), ramp, T)
            for m in range(params.mu.shape[0])
        ]
        soft = np.max(np.stack(masks), axis=0)
    else:
        raise ConfigError(f"unknown span mode {mode!r}")
    return SpanMask(soft=soft, anchor=mu_star, spread=sigma_star, ramp=ramp)


def extract_discrete_span(
    mask: SpanMask, threshold: float = SPAN_THRESHOLD
) -> tuple[int, int] | None:
    """Contiguous run of parts with soft >= threshold around the anchor.

    Returns 1-based inclusive (start_part, end_part), or None when no part
    clears the threshold. The run is grown outward from the part nearest the
    anchor (ties toward the lower index), which for a trapezoid is the
    maximal qualifying run.
    """
    soft = mask.soft
    T = soft.shape[0]
    t_star = int(np.clip(np.ceil(mask.anchor - 0.5), 1, T))
    if soft[t_star - 1] < threshold:
        return None
    lo = t_star
    while lo > 1 and soft[lo - 2] >= threshold:
        lo -= 1
    hi = t_star
    while hi < T and soft[hi] >= threshold:
        hi += 1
    return lo, hi
