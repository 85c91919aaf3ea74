"""Diagonal-covariance Gaussian mixture as a parametric coordinate transform.

The mixture is used as an encoding map u = F(x): each output coordinate is
the CDF of the corresponding input coordinate conditioned on the previous
ones.  The map is strictly increasing per coordinate, its spatial Jacobian
is lower triangular, and the absolute Jacobian determinant equals the
mixture density.  Everything is evaluated with a largest-term (log-sum-exp)
expansion so that far-tail points stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import ndtr

from .exceptions import DegenerateParameterError

Scheme = Literal["sqnorm", "hyperspherical"]

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def weights(amp_raw: np.ndarray, scheme: Scheme) -> tuple[np.ndarray, np.ndarray]:
    """Mixture weights and their Jacobian for a raw amplitude vector.

    "sqnorm" maps n_a unconstrained reals r to a_i = r_i^2 / sum(r^2).
    "hyperspherical" maps n_a - 1 angles to the squared components of a
    rotated unit vector, e_i = sin(angle_i) * prod_{j<i} cos(angle_j) with
    the last component picking up the full cosine product.

    Returns (a, da) where a sums to one and da[i, j] = d a_i / d raw_j.
    """
    raw = np.asarray(amp_raw, dtype=float)
    if raw.ndim != 1:
        raise ValueError("amp_raw must be a vector")
    if scheme == "sqnorm":
        scale = float(np.max(np.abs(raw)))
        if scale == 0.0:
            raise DegenerateParameterError("all-zero raw amplitude vector")
        # the map is scale invariant; normalizing keeps squares from
        # under- or overflowing for extreme raw magnitudes
        r = raw / scale
        s = float(np.dot(r, r))
        a = r * r / s
        da = (2.0 / (s * scale)) * (np.diag(r) - np.outer(a, r))
        return a, da
    if scheme == "hyperspherical":
        n_a = raw.size + 1
        cos = np.cos(raw)
        sin = np.sin(raw)
        # cumulative cosine products; cprod[i] = prod_{j<i} cos(angle_j)
        cprod = np.concatenate(([1.0], np.cumprod(cos)))
        e = np.empty(n_a)
        e[:-1] = sin * cprod[:-1]
        e[-1] = cprod[-1]
        a = e * e
        da = np.zeros((n_a, n_a - 1))
        for i in range(n_a):
            for j in range(n_a - 1):
                if j > i:
                    continue
                if i < n_a - 1 and j == i:
                    de = cos[i] * cprod[i]
                else:
                    # drop cos(angle_j) from the product, differentiate it
                    prod_rest = sin[i] * cprod[i] if i < n_a - 1 else cprod[-1]
                    if cos[j] != 0.0:
                        prod_rest = prod_rest / cos[j]
                    else:
                        terms = [sin[i]] if i < n_a - 1 else []
                        terms += [cos[k] for k in range(min(i, n_a - 1)) if k != j]
                        prod_rest = float(np.prod(terms)) if terms else 1.0
                    de = -sin[j] * prod_rest
                da[i, j] = 2.0 * e[i] * de
        return a, da
    raise ValueError(f"unknown amplitude scheme: {scheme!r}")


def equal_weight_raw(n_a: int, scheme: Scheme) -> np.ndarray:
    """Raw amplitude vector giving n_a equal weights under the scheme."""
    if scheme == "sqnorm":
        return np.ones(n_a)
    angles = np.zeros(max(n_a - 1, 0))
    for j in range(n_a - 1):
        angles[j] = np.arcsin(1.0 / np.sqrt(n_a - j))
    return angles


def raw_from_weights(target: np.ndarray, scheme: Scheme) -> np.ndarray:
    """Raw amplitude vector reproducing the given weights (up to fp error)."""
    target = np.asarray(target, dtype=float)
    if scheme == "sqnorm":
        return np.sqrt(target)
    e = np.sqrt(target)
    n_a = e.size
    angles = np.zeros(max(n_a - 1, 0))
    cprod = 1.0
    for j in range(n_a - 1):
        if cprod <= 0.0:
            angles[j] = 0.0
            continue
        angles[j] = np.arcsin(np.clip(e[j] / cprod, -1.0, 1.0))
        cprod *= np.cos(angles[j])
    return angles


@dataclass(frozen=True)
class MixtureParams:
    """Parameters of a diagonal Gaussian mixture.

    Widths are stored as logs so the optimizer can work on an unconstrained
    scale.  Instances are immutable; treat the arrays as read-only.
    """

    scheme: Scheme
    amp_raw: np.ndarray
    means: np.ndarray       # (n_components, n_dim)
    log_widths: np.ndarray  # (n_components, n_dim)

    def __post_init__(self):
        object.__setattr__(self, "amp_raw", np.atleast_1d(np.asarray(self.amp_raw, dtype=float)))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        object.__setattr__(self, "log_widths", np.atleast_2d(np.asarray(self.log_widths, dtype=float)))
        if self.means.shape != self.log_widths.shape:
            raise ValueError("means and log_widths must share a shape")
        n_a = self.means.shape[0]
        expect = n_a if self.scheme == "sqnorm" else n_a - 1
        if self.amp_raw.size != expect:
            raise ValueError(
                f"amp_raw has length {self.amp_raw.size}, expected {expect} "
                f"for scheme {self.scheme!r} with {n_a} components"
            )
        if not (np.all(np.isfinite(self.amp_raw)) and np.all(np.isfinite(self.means))
                and np.all(np.isfinite(self.log_widths))):
            raise ValueError("mixture parameters must be finite")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def n_dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_params(self) -> int:
        return self.amp_raw.size + 2 * self.means.size

    @property
    def widths(self) -> np.ndarray:
        return np.exp(self.log_widths)

    def weight_values(self) -> np.ndarray:
        return weights(self.amp_raw, self.scheme)[0]

    def flatten(self) -> np.ndarray:
        """Single parameter vector: [amp_raw, means (C order), log_widths]."""
        return np.concatenate([self.amp_raw, self.means.ravel(), self.log_widths.ravel()])

    @classmethod
    def unflatten(cls, vec: np.ndarray, scheme: Scheme, n_components: int, n_dim: int) -> "MixtureParams":
        vec = np.asarray(vec, dtype=float)
        n_amp = n_components if scheme == "sqnorm" else n_components - 1
        n_mw = n_components * n_dim
        if vec.size != n_amp + 2 * n_mw:
            raise ValueError("flattened vector has the wrong length")
        return cls(
            scheme=scheme,
            amp_raw=vec[:n_amp].copy(),
            means=vec[n_amp:n_amp + n_mw].reshape(n_components, n_dim).copy(),
            log_widths=vec[n_amp + n_mw:].reshape(n_components, n_dim).copy(),
        )

    def mean_param_indices(self, dim: int) -> np.ndarray:
        """Flat indices of the mean parameters for one data dimension."""
        n_amp = self.amp_raw.size
        return n_amp + np.arange(self.n_components) * self.n_dim + dim


@dataclass(frozen=True)
class Dataset:
    """Sample matrix, one point per row."""

    points: np.ndarray
    labels: list[str] | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError("dataset must be a non-empty 2D matrix")
        if not np.all(np.isfinite(pts)):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_dim(self) -> int:
        return self.points.shape[1]


def as_points(data) -> np.ndarray:
    """Coerce a Dataset or array-like into an (n, d) float matrix."""
    if isinstance(data, Dataset):
        return data.points
    pts = np.asarray(data, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


@dataclass(frozen=True)
class EncoderEval:
    """Encoder output at a single point.

    jac_x is lower triangular with a strictly positive diagonal (up to
    floating-point underflow in extreme tails); log of its determinant
    equals log_pdf.
    """

    u: np.ndarray        # (n_dim,)
    jac_x: np.ndarray    # (n_dim, n_dim)
    jac_m: np.ndarray    # (n_dim, n_params)
    log_pdf: float


@dataclass(frozen=True)
class DatasetEncoding:
    """Batched encoder output for a whole dataset."""

    u: np.ndarray        # (n, n_dim)
    jac_x: np.ndarray    # (n, n_dim, n_dim)
    jac_m: np.ndarray    # (n, n_dim, n_params)
    log_pdf: np.ndarray  # (n,)

    def point(self, i: int) -> EncoderEval:
        return EncoderEval(
            u=self.u[i], jac_x=self.jac_x[i], jac_m=self.jac_m[i],
            log_pdf=float(self.log_pdf[i]),
        )


def _component_logs(points: np.ndarray, params: MixtureParams):
    """Per-component per-dimension z scores and log densities.

    Returns (z, log_norm) with shape (n, n_components, n_dim).
    """
    sigma = params.widths
    z = (points[:, None, :] - params.means[None, :, :]) / sigma[None, :, :]
    log_norm = -0.5 * z * z - params.log_widths[None, :, :] - LOG_SQRT_2PI
    return z, log_norm


def _weighted_logsumexp(comp: np.ndarray, a: np.ndarray) -> np.ndarray:
    """log sum_k a_k exp(comp_k) along the last axis, largest-term shifted.

    Finite whenever any weighted exponent is finite; zero weights are
    skipped rather than producing log(0) noise.
    """
    with np.errstate(divide="ignore"):
        t = comp + np.log(a)[None, :]
    shift = t.max(axis=1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    return shift[:, 0] + np.log(np.exp(t - shift).sum(axis=1))


def log_pdf_batch(data, params: MixtureParams) -> np.ndarray:
    """Log mixture density at every point, via the largest-term expansion."""
    points = as_points(data)
    a = params.weight_values()
    _, log_norm = _component_logs(points, params)
    return _weighted_logsumexp(log_norm.sum(axis=2), a)


def log_pdf(x, params: MixtureParams) -> float:
    """Log mixture density at a single point."""
    return float(log_pdf_batch(np.atleast_2d(np.asarray(x, dtype=float)), params)[0])


def encode_dataset(data, params: MixtureParams) -> DatasetEncoding:
    """Conditional-CDF encoding with analytic spatial and parametric Jacobians.

    Coordinate lam of the output is the CDF of x_lam given x_{<lam} under the
    mixture; the component mixture weights per coordinate are the marginal
    densities over the preceding dimensions, handled in log space with a
    per-point largest-term shift.
    """
    points = as_points(data)
    if points.shape[1] != params.n_dim:
        raise ValueError("data dimension does not match the mixture")
    n, d = points.shape
    n_a = params.n_components
    a, da_draw = weights(params.amp_raw, params.scheme)
    sigma = params.widths
    z, log_norm = _component_logs(points, params)
    pdf = np.exp(log_norm)                     # (n, K, d) per-dim densities
    phi = ndtr(z)                              # (n, K, d) per-dim CDFs

    # exclusive cumulative log marginal over preceding dimensions
    cml = np.zeros_like(log_norm)
    if d > 1:
        cml[:, :, 1:] = np.cumsum(log_norm, axis=2)[:, :, :-1]
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
    t = log_a[None, :, None] + cml
    shift = t.max(axis=1, keepdims=True)
    wgt = np.exp(t - shift)                    # (n, K, d), max entry is 1
    denom = wgt.sum(axis=1)                    # (n, d), >= 1

    u = np.einsum("nkl,nkl->nl", wgt, phi) / denom
    cond = np.einsum("nkl,nkl->nl", wgt, pdf) / denom   # conditional densities

    # influence of reweighting component k on coordinate lam
    infl = wgt * (phi - u[:, None, :]) / denom[:, None, :]   # (n, K, d)

    # spatial Jacobian: diagonal is the conditional density, off-diagonal
    # entries come from the x-dependence of the marginal weights
    dlog_dx = -z / sigma[None, :, :]           # d log N / d x
    jac_x = np.einsum("nkl,nkm->nlm", infl, dlog_dx)
    tril_strict = np.tril(np.ones((d, d)), k=-1)
    jac_x *= tril_strict[None, :, :]
    jac_x[:, np.arange(d), np.arange(d)] = cond

    # parametric Jacobian, flat order [amp_raw, means, log_widths]
    n_amp = params.amp_raw.size
    jac_m = np.empty((n, d, params.n_params))

    if params.scheme == "sqnorm":
        raw = params.amp_raw
        with np.errstate(divide="ignore", invalid="ignore"):
            amp_cols = np.where(raw[None, :, None] != 0.0,
                                2.0 * infl / raw[None, :, None], 0.0)
        jac_m[:, :, :n_amp] = np.transpose(amp_cols, (0, 2, 1))
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(a[:, None] > 0.0, da_draw / a[:, None], 0.0)
        jac_m[:, :, :n_amp] = np.einsum("nkl,kj->nlj", infl, ratio)

    dlog_dm = z / sigma[None, :, :]            # d log N / d mean
    dlog_ds = z * z - 1.0                      # d log N / d log width
    mean_block = np.einsum("nkl,nkm->nlkm", infl, dlog_dm)
    width_block = np.einsum("nkl,nkm->nlkm", infl, dlog_ds)
    mean_block *= tril_strict[None, :, None, :]
    width_block *= tril_strict[None, :, None, :]
    diag_common = -wgt * pdf / denom[:, None, :]          # (n, K, lam)
    lam = np.arange(d)
    mean_block[:, lam, :, lam] = np.transpose(diag_common, (2, 0, 1))
    width_diag = diag_common * (z * sigma[None, :, :])
    width_block[:, lam, :, lam] = np.transpose(width_diag, (2, 0, 1))
    jac_m[:, :, n_amp:n_amp + n_a * d] = mean_block.reshape(n, d, n_a * d)
    jac_m[:, :, n_amp + n_a * d:] = width_block.reshape(n, d, n_a * d)

    lp = _weighted_logsumexp(log_norm.sum(axis=2), a)
    return DatasetEncoding(u=u, jac_x=jac_x, jac_m=jac_m, log_pdf=lp)


def encode(x, params: MixtureParams) -> EncoderEval:
    """Encode a single point."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return encode_dataset(x, params).point(0)


def jac_x_from_means(ev: EncoderEval, params: MixtureParams) -> np.ndarray:
    """Spatial Jacobian reconstructed from mean-parameter derivatives.

    Every x coordinate enters the encoder only through differences to the
    component means of the same dimension, so each column of jac_x is the
    negative sum of the corresponding mean columns of jac_m.  Used as a
    consistency check, not as the production path.
    """
    d = params.n_dim
    out = np.empty((d, d))
    for mu in range(d):
        cols = params.mean_param_indices(mu)
        out[:, mu] = -ev.jac_m[:, cols].sum(axis=1)
    return out
