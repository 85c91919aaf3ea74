"""Parameter uncertainty from propagating encoded-data jitter through the
bit-cost stationarity condition.

At a minimum of the cost, a perturbation of the data moves the optimal
parameters by an amount controlled by the mixed and pure second
derivatives of the cost.  The data perturbation channel is modeled on the
encoded coordinates, which are uniform for a good model, with a standard
deviation of (12 n)^{-1/2} per coordinate and no cross correlation.  The
parameter vector here is the flattened mixture parameters concatenated
with the truncation ranges (on their natural, linear scale).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .bitcost import per_point_terms, solve_lower_batched
from .mixture import MixtureParams, as_points, encode_dataset
from .optimize import FitResult, numeric_gradient

Method = Literal["simple", "full"]


@dataclass(frozen=True)
class ErrorEstimate:
    """Propagated parameter uncertainty.

    std is the square root of the covariance diagonal; condition is the
    condition number of the solved curvature system.  rank_deficient is
    set when that system needed a pseudo-inverse.
    """

    std: np.ndarray
    covariance: np.ndarray
    method: Method
    condition: float
    rank_deficient: bool = False


def encoded_noise_std(n_points: int) -> float:
    """Standard deviation assigned to each encoded coordinate."""
    return float((12.0 * n_points) ** -0.5)


def _q_of(points, params, ranges_vals, mode):
    nll, log_b, ok = per_point_terms(points, params, ranges_vals)
    n, d = log_b.shape
    if not np.all(ok):
        return np.inf
    param_bits = -float(np.sum(np.log(ranges_vals)))
    if mode == "local":
        corr = 1.0 - d * np.exp(np.mean(log_b, axis=1))
        if np.any(corr <= 0.0):
            return np.inf
        pen = -float(np.sum(np.log(corr)))
    else:
        corr = 1.0 - d * np.exp(np.mean(log_b))
        if corr <= 0.0:
            return np.inf
        pen = -n * float(np.log(corr))
    return float(np.sum(nll)) + param_bits + pen


def _split_p(p_vec, template: MixtureParams):
    n_m = template.n_params
    params = MixtureParams.unflatten(p_vec[:n_m], template.scheme,
                                     template.n_components, template.n_dim)
    return params, np.asarray(p_vec[n_m:], dtype=float)


def _hessian_pp(q_func, p0, steps):
    """Central second differences of a scalar function."""
    n = p0.size
    h = np.zeros((n, n))
    f0 = q_func(p0)
    for k in range(n):
        pk = p0.copy(); pk[k] += steps[k]
        mk = p0.copy(); mk[k] -= steps[k]
        h[k, k] = (q_func(pk) - 2.0 * f0 + q_func(mk)) / steps[k] ** 2
    for k in range(n):
        for l in range(k + 1, n):
            pp = p0.copy(); pp[k] += steps[k]; pp[l] += steps[l]
            pm = p0.copy(); pm[k] += steps[k]; pm[l] -= steps[l]
            mp = p0.copy(); mp[k] -= steps[k]; mp[l] += steps[l]
            mm = p0.copy(); mm[k] -= steps[k]; mm[l] -= steps[l]
            h[k, l] = h[l, k] = (q_func(pp) - q_func(pm) - q_func(mp) + q_func(mm)) \
                / (4.0 * steps[k] * steps[l])
    return h


def _mixed_hessian(points, template, p0, steps, x_steps, mode):
    """d^2 Q / dp dx for every data coordinate, shape (n_p, n, d).

    Built from whole-column shifts of the data: the per-point nll rows and
    log-perturbation rows only depend on their own point, so the four
    corner evaluations per (parameter, dimension) pair reconstruct the
    single-coordinate differences for all points at once.  The global mode
    couples points only through the sum of log perturbations, which is
    patched per point.
    """
    n, d = points.shape
    n_p = p0.size
    out = np.empty((n_p, n, d))
    for k in range(n_p):
        corner = {}
        for sp in (+1, -1):
            pk = p0.copy(); pk[k] += sp * steps[k]
            params_k, ranges_k = _split_p(pk, template)
            base_nll, base_log_b, base_ok = per_point_terms(points, params_k, ranges_k)
            for mu in range(d):
                for sx in (+1, -1):
                    shifted = points.copy()
                    shifted[:, mu] += sx * x_steps[mu]
                    nll_s, log_b_s, ok_s = per_point_terms(shifted, params_k, ranges_k)
                    corner[(sp, mu, sx)] = (nll_s, log_b_s, ok_s, base_nll, base_log_b, base_ok)
        for mu in range(d):
            val = np.zeros(n)
            for sp in (+1, -1):
                for sx in (+1, -1):
                    nll_s, log_b_s, ok_s, base_nll, base_log_b, base_ok = corner[(sp, mu, sx)]
                    q_i = _per_point_q(nll_s, log_b_s, ok_s, base_nll, base_log_b,
                                       base_ok, mode, d)
                    val += sp * sx * q_i
            out[k, :, mu] = val / (4.0 * steps[k] * x_steps[mu])
    return out


def _per_point_q(nll_s, log_b_s, ok_s, base_nll, base_log_b, base_ok, mode, d):
    """Cost with exactly one point shifted, vectorized over which point.

    Returns a vector whose i-th entry is Q evaluated on the dataset where
    only point i took its shifted value; parameter-only terms are omitted
    because they cancel in the mixed difference.
    """
    n = base_nll.shape[0]
    if not (np.all(ok_s) and np.all(base_ok)):
        return np.full(n, np.inf)
    nll_tot = float(np.sum(base_nll))
    q = nll_tot - base_nll + nll_s
    if mode == "local":
        corr_base = 1.0 - d * np.exp(np.mean(base_log_b, axis=1))
        corr_s = 1.0 - d * np.exp(np.mean(log_b_s, axis=1))
        if np.any(corr_base <= 0.0) or np.any(corr_s <= 0.0):
            return np.full(n, np.inf)
        pen_tot = -np.sum(np.log(corr_base))
        q += pen_tot + np.log(corr_base) - np.log(corr_s)
    else:
        row_base = base_log_b.sum(axis=1)
        row_s = log_b_s.sum(axis=1)
        total = row_base.sum()
        sums = total - row_base + row_s
        corr = 1.0 - d * np.exp(sums / (n * d))
        if np.any(corr <= 0.0):
            return np.full(n, np.inf)
        q += -n * np.log(corr)
    return q


def estimate_errors(data, fit_result: FitResult, method: Method = "full",
                    noise_std: float | None = None) -> ErrorEstimate:
    """Propagate encoded-data jitter to the fitted parameters and ranges.

    The simple method inverts only the parameter curvature; the full
    method corrects it with the model's own response to the data shift.
    noise_std overrides the per-coordinate encoded standard deviation
    (useful to switch the data channel off entirely).
    """
    points = as_points(data)
    n, d = points.shape
    template = fit_result.params
    mode = fit_result.config.mode
    p0 = np.concatenate([template.flatten(), fit_result.ranges.values])
    n_p = p0.size

    def q_func(p_vec):
        try:
            params, rng_vals = _split_p(p_vec, template)
            if np.any(rng_vals <= 0.0):
                return np.inf
            return _q_of(points, params, rng_vals, mode)
        except Exception:
            return np.inf

    grad_scale = max(abs(q_func(p0)), 1.0)
    steps = 1e-4 * np.maximum(np.abs(p0), 1.0)
    n_m = template.n_params
    steps[n_m:] = np.minimum(steps[n_m:], 0.49 * p0[n_m:])  # stay positive
    g = numeric_gradient(q_func, p0, rel_step=1e-7)
    if np.max(np.abs(g.values)) > 1e-2 * grad_scale:
        warnings.warn("error estimate requested away from a stationary point",
                      stacklevel=2)

    h_pp = _hessian_pp(q_func, p0, steps)
    x_steps = 1e-4 * np.maximum(points.std(axis=0), 1e-8)
    h_px = _mixed_hessian(points, template, p0, steps, x_steps, mode)
    h_px = np.nan_to_num(h_px, nan=0.0, posinf=0.0, neginf=0.0)

    enc = encode_dataset(points, fit_result.params)
    # per-point G_i = H_px,i J_x,i^{-1} via triangular solves on the right:
    # solve J_x^T y = H_px^T
    jt = np.transpose(enc.jac_x, (0, 2, 1))[:, ::-1, ::-1]  # upper -> flipped lower
    rhs = np.transpose(h_px, (1, 2, 0))[:, ::-1, :]         # (n, d, n_p) flipped
    g_rows = solve_lower_batched(jt, rhs)[:, ::-1, :]        # (n, d, n_p)
    g_mat = np.transpose(g_rows, (0, 2, 1))                  # (n, n_p, d)

    if method == "full":
        jac_p = np.concatenate(
            [enc.jac_m, np.zeros((n, d, n_p - template.n_params))], axis=2)
        correction = np.einsum("nkm,nml->kl", g_mat, jac_p)
        a_mat = h_pp - correction
    elif method == "simple":
        a_mat = h_pp
    else:
        raise ValueError(f"unknown method: {method!r}")

    b_mat = np.einsum("nkm,nlm->kl", g_mat, g_mat)
    sigma_u = encoded_noise_std(n) if noise_std is None else float(noise_std)

    condition = float(np.linalg.cond(a_mat))
    rank = int(np.linalg.matrix_rank(a_mat))
    rank_deficient = rank < n_p
    if rank_deficient:
        a_inv = np.linalg.pinv(a_mat)
    else:
        a_inv = np.linalg.inv(a_mat)
    cov = sigma_u ** 2 * (a_inv @ b_mat @ a_inv.T)
    cov = 0.5 * (cov + cov.T)
    std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return ErrorEstimate(std=std, covariance=cov, method=method,
                         condition=condition, rank_deficient=rank_deficient)
