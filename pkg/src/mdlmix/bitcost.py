"""Total bit cost of a mixture model plus its encoded data.

The objective decomposes into three parts: the negative log-likelihood of
the data under the model (nll), the bit length of the model parameters
given their truncation ranges (param_bits), and a penalty that accounts
for the encoding volume lost to independent parameter truncation
(penalty).  The volume bookkeeping exists in three algebraic forms of the
same first-order approximation: a signed column-shift determinant, a
determinant-lemma linearization, and a per-parameter decoupled product.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import DegenerateJacobianError, EvaluationError
from .mixture import EncoderEval, MixtureParams, as_points, encode_dataset

Mode = Literal["local", "global"]

#: truncation ranges below this are clamped during optimization so the
#: parameter bit length stays finite
RANGE_FLOOR = 1e-12

#: replaces exact zeros inside the geometric mean of the global penalty
ZERO_B_FLOOR = 1e-300


@dataclass(frozen=True)
class TruncationRanges:
    """Per-parameter truncation half-widths, one per flattened parameter.

    Each value lies in (0, 1]; the negative log of a value is the bit
    length of the corresponding parameter after the decimal point.  The
    optimizer works on log values.
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if np.any(vals <= 0.0) or np.any(vals > 1.0) or not np.all(np.isfinite(vals)):
            raise ValueError("truncation ranges must lie in (0, 1]")
        object.__setattr__(self, "values", vals)

    @property
    def log_values(self) -> np.ndarray:
        return np.log(self.values)

    @classmethod
    def from_log(cls, log_vals: np.ndarray) -> "TruncationRanges":
        return cls(np.exp(np.asarray(log_vals, dtype=float)))

    def scaled(self, factor: float) -> "TruncationRanges":
        return TruncationRanges(np.maximum(self.values * factor, RANGE_FLOOR))


def as_ranges(ranges) -> np.ndarray:
    if isinstance(ranges, TruncationRanges):
        return ranges.values
    return np.atleast_1d(np.asarray(ranges, dtype=float))


@dataclass(frozen=True)
class BitCostBreakdown:
    """Decomposed bit-cost objective.

    total == nll + param_bits + penalty whenever valid; an invalid
    evaluation reports penalty (and total) as +inf.  corrections holds the
    per-point arguments of the logarithms in the penalty before the log is
    taken; validity means all of them are strictly positive.
    """

    nll: float
    param_bits: float
    penalty: float
    total: float
    valid: bool
    corrections: np.ndarray
    floored_zero_b: bool = False


@dataclass(frozen=True)
class PerturbationMatrix:
    """Per-point, per-dimension total first-order shifts |J_x^-1 J_m| dm."""

    values: np.ndarray  # (n_points, n_dim), non-negative


def solve_lower_batched(lower: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Forward substitution for stacked lower-triangular systems.

    lower has shape (n, d, d), rhs (n, d, p); returns (n, d, p).  The
    inverse is never materialized.
    """
    out = np.empty_like(rhs)
    d = rhs.shape[1]
    for nu in range(d):
        acc = rhs[:, nu, :].copy()
        for mu in range(nu):
            acc -= lower[:, nu, mu, None] * out[:, mu, :]
        out[:, nu, :] = acc / lower[:, nu, nu, None]
    return out


def unit_perturbations(encoding) -> np.ndarray:
    """|J_x^-1 J_m| for every point of a dataset encoding, shape (n, d, P)."""
    return np.abs(solve_lower_batched(encoding.jac_x, encoding.jac_m))


def perturbation_matrix(data, params: MixtureParams, ranges) -> PerturbationMatrix:
    """Total first-order encoding shift per point and dimension.

    Raises EvaluationError naming the first offending point if the encoder
    Jacobians are non-finite or the spatial Jacobian loses its positive
    diagonal there.
    """
    dm = as_ranges(ranges)
    enc = encode_dataset(data, params)
    diag = np.diagonal(enc.jac_x, axis1=1, axis2=2)
    bad = ~(np.all(np.isfinite(enc.jac_m), axis=(1, 2))
            & np.all(np.isfinite(enc.jac_x), axis=(1, 2))
            & np.all(diag > 0.0, axis=1))
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise EvaluationError(f"non-finite encoder Jacobian at data point {idx}")
    b = unit_perturbations(enc) @ dm
    return PerturbationMatrix(values=b)


def _volume_prelude(ev: EncoderEval, ranges, delta_x):
    dm = as_ranges(ranges)
    d = ev.jac_x.shape[0]
    dx = np.broadcast_to(np.asarray(delta_x, dtype=float), (d,)).astype(float)
    if np.any(dx <= 0.0):
        raise ValueError("delta_x must be strictly positive")
    return dm, dx, d


def volume_column_shift(ev: EncoderEval, ranges, delta_x) -> float:
    """Available encoding volume via signed column shifts of the Jacobian.

    Each column of jac_x * diag(delta_x) is shifted against every
    parameter direction, with the shift sign chosen along the component of
    the column orthogonal to all other columns (Gram-Schmidt), so the
    perturbation can only reduce the volume.
    """
    dm, dx, d = _volume_prelude(ev, ranges, delta_x)
    shifted = ev.jac_x * dx[None, :]
    for b_col in range(d):
        col = ev.jac_x[:, b_col]
        if d > 1:
            others = np.delete(ev.jac_x, b_col, axis=1)
            q, _ = np.linalg.qr(others)
            perp = col - q @ (q.T @ col)
        else:
            perp = col
        norm = np.linalg.norm(perp)
        if norm <= 1e-300 or not np.isfinite(norm):
            raise DegenerateJacobianError(
                f"column {b_col} of the spatial Jacobian is linearly dependent"
            )
        signs = np.where(perp @ ev.jac_m >= 0.0, 1.0, -1.0)
        shifted[:, b_col] -= ev.jac_m @ (signs * dm)
    return float(abs(np.linalg.det(shifted)))


def volume_det_lemma(ev: EncoderEval, ranges, delta_x) -> float:
    """Available encoding volume via the matrix determinant lemma.

    Linearizes every parameter shift into a single correction factor
    1 - sum over dimensions and parameters of |J_x^-1 J_m| dm / dx.  The
    return value is signed: a non-positive value means the truncation
    ranges ate the whole volume and the evaluation is invalid.
    """
    dm, dx, d = _volume_prelude(ev, ranges, delta_x)
    y = np.abs(solve_triangular(ev.jac_x, ev.jac_m, lower=True))  # (d, P)
    correction = 1.0 - float((y @ dm) @ (1.0 / dx))
    det = abs(np.linalg.det(ev.jac_x))
    return correction * det * float(np.prod(dx))


def volume_decoupled(ev: EncoderEval, ranges, delta_x) -> float:
    """Available encoding volume with one correction factor per parameter.

    Same first order as the other two forms; any single factor dropping to
    or below zero marks the evaluation invalid, signalled by a non-positive
    return built from the smallest factor.
    """
    dm, dx, d = _volume_prelude(ev, ranges, delta_x)
    y = np.abs(solve_triangular(ev.jac_x, ev.jac_m, lower=True))
    factors = 1.0 - (dm * ((1.0 / dx) @ y))
    det = abs(np.linalg.det(ev.jac_x))
    base = det * float(np.prod(dx))
    if np.any(factors <= 0.0):
        return float(factors.min()) * base
    return float(np.prod(factors)) * base


def _log_b_matrix(encoding, dm: np.ndarray):
    """Log of the perturbation matrix entries plus a pointwise validity mask.

    Points where the spatial Jacobian lost its positive diagonal (extreme
    tails) are flagged instead of raising, so the caller can report an
    invalid bit cost for them.
    """
    diag = np.diagonal(encoding.jac_x, axis1=1, axis2=2)
    ok = (np.all(np.isfinite(encoding.jac_m), axis=(1, 2))
          & np.all(np.isfinite(encoding.jac_x), axis=(1, 2))
          & np.all(diag > 0.0, axis=1))
    n, d = diag.shape
    b = np.full((n, d), np.inf)
    if np.any(ok):
        # tiny-but-positive diagonals may overflow here; such rows are
        # filtered right after, so the evaluation stays graceful
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            y = np.abs(solve_lower_batched(encoding.jac_x[ok], encoding.jac_m[ok]))
            b_ok = y @ dm
        finite = np.all(np.isfinite(b_ok), axis=1)
        ok_idx = np.flatnonzero(ok)
        b[ok_idx[finite]] = b_ok[finite]
        ok = np.zeros_like(ok)
        ok[ok_idx[finite]] = True
    with np.errstate(divide="ignore"):
        log_b = np.log(b)
    return log_b, ok


def _penalty_from_log_b(log_b: np.ndarray, ok: np.ndarray, n_dim: int, mode: Mode):
    """Penalty and per-point correction arguments from log perturbations.

    Local mode fixes the precision volume of every data point to one and
    optimizes the per-dimension split, giving one correction per point
    from the geometric mean of its row.  Global mode fixes only the
    product over all points, which ties every point to the geometric mean
    of the whole matrix; it is evaluated as a mean of logs to avoid
    overflow in the long product.
    """
    n = log_b.shape[0]
    floored = False
    if mode == "local":
        with np.errstate(invalid="ignore"):
            row_gm = np.exp(np.mean(log_b, axis=1))  # rows with a zero give 0
        corrections = 1.0 - n_dim * row_gm
        corrections[~ok] = -np.inf
    elif mode == "global":
        if np.all(ok):
            lb = log_b.copy()
            zero = np.isneginf(lb)
            if np.any(zero):
                floored = True
                lb[zero] = np.log(ZERO_B_FLOOR)
            gm = np.exp(np.mean(lb))
            corrections = np.full(n, 1.0 - n_dim * gm)
        else:
            corrections = np.full(n, -np.inf)
    else:
        raise ValueError(f"unknown mode: {mode!r}")
    if np.all(corrections > 0.0):
        penalty = -float(np.sum(np.log(corrections)))
    else:
        penalty = np.inf
    return penalty, corrections, floored


def per_point_terms(data, params: MixtureParams, ranges):
    """Per-point negative log density and log perturbation rows.

    Returns (nll_i, log_b, ok) where nll_i has shape (n,), log_b (n, d)
    and ok flags rows whose encoder evaluation stayed finite.  Ranges are
    taken as a raw array, without the (0, 1] domain check, so difference
    stencils may step slightly past the boundary.
    """
    dm = as_ranges(ranges)
    enc = encode_dataset(data, params)
    log_b, ok = _log_b_matrix(enc, dm)
    return -enc.log_pdf, log_b, ok


def precision_penalty(data, params: MixtureParams, ranges, mode: Mode = "global"):
    """Bit-cost penalty for the encoding volume lost to truncation.

    Returns (penalty, corrections) where corrections are the per-point
    arguments of the logarithm; any non-positive argument makes the
    penalty +inf.
    """
    dm = as_ranges(ranges)
    enc = encode_dataset(data, params)
    log_b, ok = _log_b_matrix(enc, dm)
    penalty, corrections, _ = _penalty_from_log_b(log_b, ok, enc.u.shape[1], mode)
    return penalty, corrections


def total_bit_cost(data, params: MixtureParams, ranges, mode: Mode = "global",
                   data_precision: float = 1.0) -> BitCostBreakdown:
    """Full decomposed bit cost of the model plus the encoded dataset.

    data_precision is the reconstruction tolerance of every data
    coordinate, with the truncation ranges read as ratios to it.  It only
    shifts nll and param_bits by count-proportional constants, so the
    minimizer over (params, ranges) does not move.
    """
    pts = as_points(data)
    dm = as_ranges(ranges)
    if dm.size != params.n_params:
        raise ValueError("one truncation range per flattened parameter required")
    if data_precision <= 0.0:
        raise ValueError("data_precision must be positive")
    log_dx = float(np.log(data_precision))
    enc = encode_dataset(pts, params)
    nll = -float(np.sum(enc.log_pdf)) - pts.size * log_dx
    param_bits = -float(np.sum(np.log(dm))) - dm.size * log_dx
    log_b, ok = _log_b_matrix(enc, dm)
    penalty, corrections, floored = _penalty_from_log_b(log_b, ok, pts.shape[1], mode)
    valid = bool(np.isfinite(penalty))
    total = nll + param_bits + penalty if valid else np.inf
    return BitCostBreakdown(
        nll=nll,
        param_bits=param_bits,
        penalty=penalty,
        total=total,
        valid=valid,
        corrections=corrections,
        floored_zero_b=floored,
    )


def univariate_bit_cost(data, params: MixtureParams, r) -> float:
    """Standalone univariate objective used as an oracle for the total.

    For one-dimensional data the cost is
    -sum_i log(f_i - sum_k |dF/dp_k|_i r_k) - sum_k log r_k; any
    non-positive log argument yields +inf.
    """
    pts = as_points(data)
    if pts.shape[1] != 1:
        raise ValueError("univariate objective requires one-dimensional data")
    r = as_ranges(r)
    if np.any(r <= 0.0):
        return np.inf
    enc = encode_dataset(pts, params)
    f = np.exp(enc.log_pdf)
    shaved = f - np.abs(enc.jac_m[:, 0, :]) @ r
    if np.any(shaved <= 0.0):
        return np.inf
    return -float(np.sum(np.log(shaved))) - float(np.sum(np.log(r)))
