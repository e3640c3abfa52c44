# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Typed loops for the mixture block of the training backward pass.

These mirror the corresponding numpy expressions in numpy_backend.py; the
fused loops avoid materializing the (K, M, T) intermediate tensors that
dominate the reference implementation's runtime. Accumulation order within
each kernel is fixed (m innermost where it matters) so results stay
deterministic, though they may differ from numpy's pairwise summation by
ordinary float rounding.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, sqrt

cnp.import_array()

cdef double SQRT_2PI = sqrt(2.0 * 3.14159265358979323846)


def densities(
    cnp.ndarray[cnp.float64_t, ndim=2] mu,
    cnp.ndarray[cnp.float64_t, ndim=2] sigma,
    cnp.ndarray[cnp.float64_t, ndim=2] pi_norm,
    int T,
    double eps_nll,
):
    """Gaussian component densities and the mixture NLL ingredients.

    Returns (phi (K,M,T), mixdens (K,T), logdens (K,T)) evaluated at
    positions 1..T.
    """
    cdef int K = mu.shape[0]
    cdef int M = mu.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] phi = np.empty((K, M, T))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] mixdens = np.zeros((K, T))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] logdens = np.empty((K, T))
    cdef int k, m, t
    cdef double s, z, p
    for k in range(K):
        for m in range(M):
            s = sigma[k, m]
            for t in range(T):
                z = ((t + 1) - mu[k, m]) / s
                p = exp(-0.5 * z * z) / (s * SQRT_2PI)
                phi[k, m, t] = p
                mixdens[k, t] += pi_norm[k, m] * p
        for t in range(T):
            logdens[k, t] = log(mixdens[k, t] + eps_nll)
    return phi, mixdens, logdens


def density_param_grads(
    cnp.ndarray[cnp.float64_t, ndim=3] phi,
    cnp.ndarray[cnp.float64_t, ndim=2] mu,
    cnp.ndarray[cnp.float64_t, ndim=2] sigma,
    cnp.ndarray[cnp.float64_t, ndim=2] pi_norm,
    cnp.ndarray[cnp.float64_t, ndim=2] ddens,
    cnp.ndarray[cnp.float64_t, ndim=2] dmu,
    cnp.ndarray[cnp.float64_t, ndim=2] dsigma,
):
    """Accumulate the density-path gradients into dmu/dsigma; return dpi_norm.

    ddens is dL/d(mixdens); the phi factors carry the component shapes. The
    (K, M, T) contraction happens here without allocating dphi.
    """
    cdef int K = phi.shape[0]
    cdef int M = phi.shape[1]
    cdef int T = phi.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dpi_norm = np.zeros((K, M))
    cdef int k, m, t
    cdef double s, z, dp, acc_pi, acc_mu, acc_sg, d
    for k in range(K):
        for m in range(M):
            s = sigma[k, m]
            acc_pi = 0.0
            acc_mu = 0.0
            acc_sg = 0.0
            for t in range(T):
                d = ddens[k, t]
                dp = phi[k, m, t]
                z = ((t + 1) - mu[k, m]) / s
                acc_pi += dp * d
                acc_mu += pi_norm[k, m] * d * dp * z
                acc_sg += pi_norm[k, m] * d * dp * (z * z - 1.0)
            dpi_norm[k, m] = acc_pi
            dmu[k, m] += acc_mu / s
            dsigma[k, m] += acc_sg / s
    return dpi_norm


def position_weights_batch(
    cnp.ndarray[cnp.float64_t, ndim=2] curves, double weight_tiny
):
    """Min-shifted, sum-normalized weights for every prototype curve.

    Returns (weights (K,T), t_mins (K,), normalizers (K,)); rows whose
    shifted mass is <= weight_tiny fall back to the uniform distribution.
    """
    cdef int K = curves.shape[0]
    cdef int T = curves.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] weights = np.empty((K, T))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] t_mins = np.empty(K, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] normalizers = np.empty(K)
    cdef int k, t, tmin
    cdef double lo, W, v
    for k in range(K):
        tmin = 0
        lo = curves[k, 0]
        for t in range(1, T):
            if curves[k, t] < lo:
                lo = curves[k, t]
                tmin = t
        W = 0.0
        for t in range(T):
            W += curves[k, t] - lo
        t_mins[k] = tmin
        normalizers[k] = W
        if W <= weight_tiny:
            v = 1.0 / T
            for t in range(T):
                weights[k, t] = v
        else:
            for t in range(T):
                weights[k, t] = (curves[k, t] - lo) / W
    return weights, t_mins, normalizers


def weight_path_grads(
    cnp.ndarray[cnp.float64_t, ndim=2] dw,
    cnp.ndarray[cnp.float64_t, ndim=2] weights,
    cnp.ndarray[cnp.int64_t, ndim=1] t_mins,
    cnp.ndarray[cnp.float64_t, ndim=1] normalizers,
    double weight_tiny,
    cnp.ndarray[cnp.float64_t, ndim=2] dcurves,
):
    """Backpropagate dL/d(weights) through the min-shift normalization.

    Adds into dcurves in place. Uniform-fallback rows are constant in the
    curve and contribute nothing.
    """
    cdef int K = dw.shape[0]
    cdef int T = dw.shape[1]
    cdef int k, t
    cdef double W, dot, da, total
    for k in range(K):
        W = normalizers[k]
        if W <= weight_tiny:
            continue
        dot = 0.0
        for t in range(T):
            dot += dw[k, t] * weights[k, t]
        total = 0.0
        for t in range(T):
            da = (dw[k, t] - dot) / W
            dcurves[k, t] += da
            total += da
        dcurves[k, t_mins[k]] -= total
    return None


def nll_values(
    cnp.ndarray[cnp.float64_t, ndim=2] weights,
    cnp.ndarray[cnp.float64_t, ndim=2] logdens,
):
    """Per-prototype NLL: -sum_t weights * logdens."""
    cdef int K = weights.shape[0]
    cdef int T = weights.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(K)
    cdef int k, t
    cdef double acc
    for k in range(K):
        acc = 0.0
        for t in range(T):
            acc += weights[k, t] * logdens[k, t]
        out[k] = -acc
    return out
