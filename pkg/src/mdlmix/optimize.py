"""Staged minimization of the total bit cost over mixture parameters and
truncation ranges.

The chain runs a bounded simplex search from a data-driven start, an
evolutionary global stage, a second simplex refinement, and a final
quasi-Newton polish driven by a numerically differenced gradient.  The
best point seen so far is carried (and clamped to bounds) between stages,
so the stage history is non-increasing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Literal, NamedTuple, Sequence

import numpy as np
from scipy import optimize as sciopt

from .bitcost import (RANGE_FLOOR, BitCostBreakdown, Mode, TruncationRanges,
                      as_ranges, total_bit_cost)
from .exceptions import (DegenerateParameterError, EvaluationError,
                         FitFailureError, IrreparableRangesError, PruneError)
from .mixture import (Dataset, MixtureParams, Scheme, as_points,
                      equal_weight_raw, log_pdf_batch, raw_from_weights)

LOG_RANGE_FLOOR = float(np.log(RANGE_FLOOR))


@dataclass(frozen=True)
class FitConfig:
    """Knobs of the staged fit."""

    max_components: int = 5
    stage_budgets: tuple[int, int, int, int] = (3000, 6000, 3000, 600)
    bounds: tuple[np.ndarray, np.ndarray] | None = None  # over flat params
    seed: int = 0
    mode: Mode = "global"
    significant_amplitude: float = 0.01
    min_width_fraction: float = 1e-6
    scheme: Scheme = "sqnorm"
    objective: Literal["bits", "nll"] = "bits"
    data_precision: float = 1.0

    def __post_init__(self):
        if self.max_components < 1:
            raise ValueError("max_components must be at least 1")
        if len(self.stage_budgets) != 4 or any(b <= 0 for b in self.stage_budgets):
            raise ValueError("four positive stage budgets required")
        if self.bounds is not None:
            low, high = (np.asarray(b, dtype=float) for b in self.bounds)
            if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))
                    and np.all(low < high)):
                raise ValueError("bounds must be finite with low < high")

    def digest(self) -> str:
        payload = {
            "max_components": self.max_components,
            "stage_budgets": list(self.stage_budgets),
            "bounds": None if self.bounds is None else
                      [list(map(float, self.bounds[0])), list(map(float, self.bounds[1]))],
            "seed": self.seed,
            "mode": self.mode,
            "significant_amplitude": self.significant_amplitude,
            "min_width_fraction": self.min_width_fraction,
            "scheme": self.scheme,
            "objective": self.objective,
            "data_precision": self.data_precision,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class FitResult:
    """Outcome of a staged fit; q is recomputable from (params, ranges)."""

    params: MixtureParams
    ranges: TruncationRanges
    q: BitCostBreakdown
    stage_history: list[float]
    pruned: list[int]
    validity: bool
    config: FitConfig
    invalid_by_runaway_width: bool = False

    def significant_components(self, threshold: float | None = None) -> np.ndarray:
        thr = self.config.significant_amplitude if threshold is None else threshold
        return np.flatnonzero(self.params.weight_values() >= thr)


class NumericGradient(NamedTuple):
    values: np.ndarray
    undefined: np.ndarray  # mask of coordinates where both sides were invalid


def numeric_gradient(objective: Callable[[np.ndarray], float], point: np.ndarray,
                     rel_step: float = 1e-6) -> NumericGradient:
    """Central-difference gradient with one-sided fallback at invalid edges.

    The step per coordinate is rel_step * max(|coordinate|, 1).  A
    coordinate whose perturbed objective is non-finite on one side falls
    back to a one-sided difference through the base point; if both sides
    are invalid the coordinate is reported as 0 and flagged.
    """
    point = np.asarray(point, dtype=float)
    f0 = None
    grad = np.zeros_like(point)
    undefined = np.zeros(point.size, dtype=bool)
    for k in range(point.size):
        h = rel_step * max(abs(point[k]), 1.0)
        xp = point.copy(); xp[k] += h
        xm = point.copy(); xm[k] -= h
        fp = objective(xp)
        fm = objective(xm)
        fin_p, fin_m = np.isfinite(fp), np.isfinite(fm)
        if fin_p and fin_m:
            grad[k] = (fp - fm) / (2.0 * h)
        elif fin_p or fin_m:
            if f0 is None:
                f0 = objective(point)
            if not np.isfinite(f0):
                undefined[k] = True
                continue
            grad[k] = (fp - f0) / h if fin_p else (f0 - fm) / h
        else:
            undefined[k] = True
    return NumericGradient(values=grad, undefined=undefined)


def _kmeanspp_means(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style seeding of component means from the data."""
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            ((points[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(axis=2),
            axis=1,
        )
        total = d2.sum()
        if total <= 0.0:
            centers.append(points[rng.integers(n)])
            continue
        centers.append(points[rng.choice(n, p=d2 / total)])
    return np.asarray(centers)


def _data_span(points: np.ndarray) -> np.ndarray:
    span = points.max(axis=0) - points.min(axis=0)
    return np.where(span > 0.0, span, 1.0)


def default_bounds(data, config: FitConfig) -> tuple[np.ndarray, np.ndarray]:
    """Data-driven box bounds over the flattened parameter vector."""
    points = as_points(data)
    d = points.shape[1]
    k = config.max_components
    lo_pt, hi_pt = points.min(axis=0), points.max(axis=0)
    span = _data_span(points)
    n_amp = k if config.scheme == "sqnorm" else k - 1
    if config.scheme == "sqnorm":
        amp_lo, amp_hi = np.full(n_amp, -10.0), np.full(n_amp, 10.0)
    else:
        amp_lo, amp_hi = np.zeros(n_amp), np.full(n_amp, 2.0 * np.pi)
    mean_lo = np.tile(lo_pt - 0.5 * span, k)
    mean_hi = np.tile(hi_pt + 0.5 * span, k)
    lw_lo = np.tile(np.log(1e-4 * span), k)
    lw_hi = np.tile(np.log(2.0 * span), k)
    return (np.concatenate([amp_lo, mean_lo, lw_lo]),
            np.concatenate([amp_hi, mean_hi, lw_hi]))


def initial_params(data, config: FitConfig) -> MixtureParams:
    """Seed: k-means++ means, widths at per-dimension sigma / k, equal weights."""
    points = as_points(data)
    rng = np.random.default_rng(config.seed)
    k = config.max_components
    means = _kmeanspp_means(points, k, rng)
    sigma = points.std(axis=0)
    sigma = np.where(sigma > 0.0, sigma, _data_span(points))
    widths = np.tile(sigma / k, (k, 1))
    return MixtureParams(
        scheme=config.scheme,
        amp_raw=equal_weight_raw(k, config.scheme),
        means=means,
        log_widths=np.log(widths),
    )


def repair_truncation(data, params: MixtureParams, ranges) -> TruncationRanges:
    """Largest uniform shrinkage of the ranges that makes the cost valid.

    Returns the input unchanged when it is already valid.  Bisects the
    scale factor in log space (40 iterations); validity is monotone in the
    scale because the perturbation matrix is linear in the ranges.
    """
    tr = ranges if isinstance(ranges, TruncationRanges) else TruncationRanges(as_ranges(ranges))

    def valid_at(s: float) -> bool:
        return total_bit_cost(data, params, tr.scaled(s)).valid

    if valid_at(1.0):
        return tr
    lo = 1e-12
    if not valid_at(lo):
        raise IrreparableRangesError(
            "bit cost stays invalid even with truncation ranges scaled by 1e-12"
        )
    log_lo, log_hi = np.log(lo), 0.0
    for _ in range(40):
        mid = 0.5 * (log_lo + log_hi)
        if valid_at(float(np.exp(mid))):
            log_lo = mid
        else:
            log_hi = mid
    return tr.scaled(float(np.exp(log_lo)))


def _theta_split(theta: np.ndarray, params_template: MixtureParams):
    n_p = params_template.n_params
    params = MixtureParams.unflatten(
        theta[:n_p], params_template.scheme,
        params_template.n_components, params_template.n_dim,
    )
    ranges = TruncationRanges.from_log(np.clip(theta[n_p:], LOG_RANGE_FLOOR, 0.0))
    return params, ranges


def _with_weights(theta: np.ndarray, new_weights: np.ndarray,
                  template: MixtureParams) -> np.ndarray:
    out = theta.copy()
    n_amp = template.amp_raw.size
    out[:n_amp] = (raw_from_weights(new_weights, "hyperspherical")
                   if template.scheme == "hyperspherical" else np.sqrt(new_weights))
    return out


def _free_component_ranges(theta: np.ndarray, j: int, template: MixtureParams) -> None:
    """Open component j's truncation ranges to 1 (zero bit cost), in place."""
    n_p = template.n_params
    k, d = template.n_components, template.n_dim
    n_amp = template.amp_raw.size
    if template.scheme == "sqnorm":
        theta[n_p + j] = 0.0
    theta[n_p + n_amp + j * d:n_p + n_amp + (j + 1) * d] = 0.0
    theta[n_p + n_amp + (k + j) * d:n_p + n_amp + (k + j + 1) * d] = 0.0


def _collapsed_theta(theta: np.ndarray, drop: Sequence[int],
                     template: MixtureParams) -> np.ndarray:
    """Trial point with the given components' weights forced to zero.

    The dead components' truncation ranges are opened to 1, where they cost
    no bits, so a model that truly does not need them pays nothing.
    """
    params, _ = _theta_split(theta, template)
    a = params.weight_values().copy()
    a[list(drop)] = 0.0
    if a.sum() <= 0.0:
        raise ValueError("cannot collapse every component")
    a /= a.sum()
    out = _with_weights(theta, a, template)
    for j in drop:
        _free_component_ranges(out, j, template)
    return out


def _split_theta(theta: np.ndarray, source: int, target: int,
                 template: MixtureParams) -> np.ndarray:
    """Trial point where a dead slot takes half of one component's weight.

    The pair straddles the source mean along its widest dimension with
    narrowed widths; the revived slot inherits the source's truncation
    ranges.
    """
    n_p = template.n_params
    k, d = template.n_components, template.n_dim
    n_amp = template.amp_raw.size
    params, _ = _theta_split(theta, template)
    a = params.weight_values().copy()
    a[target] = a[source] = a[source] / 2.0
    out = _with_weights(theta, a, template)
    dim = int(np.argmax(params.log_widths[source]))
    offset = 0.8 * params.widths[source, dim]
    mean_base = n_amp + source * d
    mean_tgt = n_amp + target * d
    width_base = n_amp + (k + source) * d
    width_tgt = n_amp + (k + target) * d
    out[mean_tgt:mean_tgt + d] = out[mean_base:mean_base + d]
    out[mean_tgt + dim] += offset
    out[mean_base + dim] -= offset
    out[width_tgt:width_tgt + d] = out[width_base:width_base + d]
    out[width_base + dim] -= 0.5
    out[width_tgt + dim] -= 0.5
    # revived slot inherits the source's truncation ranges
    if template.scheme == "sqnorm":
        out[n_p + target] = out[n_p + source]
    out[n_p + mean_tgt:n_p + mean_tgt + d] = out[n_p + mean_base:n_p + mean_base + d]
    out[n_p + width_tgt:n_p + width_tgt + d] = out[n_p + width_base:n_p + width_base + d]
    return out


def fit(data, config: FitConfig | None = None) -> FitResult:
    """Minimize the bit cost (or the bare nll) with the four-stage chain.

    Deterministic for a fixed (dataset, config, seed).  Raises
    FitFailureError carrying the best diagnostics when no valid point was
    found within the budgets.
    """
    config = config or FitConfig()
    dataset = data if isinstance(data, Dataset) else Dataset(as_points(data))
    points = dataset.points
    start = initial_params(dataset, config)
    n_p = start.n_params
    lo_p, hi_p = config.bounds if config.bounds is not None else default_bounds(dataset, config)
    if lo_p.size != n_p:
        raise ValueError("bounds length does not match the flattened parameters")

    with_ranges = config.objective == "bits"
    if with_ranges:
        lo = np.concatenate([lo_p, np.full(n_p, LOG_RANGE_FLOOR)])
        hi = np.concatenate([hi_p, np.zeros(n_p)])
    else:
        lo, hi = lo_p, hi_p

    # the data-precision offset is a count-only constant, so it is left out
    # of the optimized objective (relative stopping rules would otherwise
    # shift with it) and applied to the reported cost afterwards
    def objective(theta: np.ndarray) -> float:
        try:
            if with_ranges:
                params, ranges = _theta_split(theta, start)
                return total_bit_cost(points, params, ranges, mode=config.mode).total
            params = MixtureParams.unflatten(theta, start.scheme,
                                             start.n_components, start.n_dim)
            return -float(np.sum(log_pdf_batch(points, params)))
        except (DegenerateParameterError, EvaluationError, FloatingPointError, ValueError):
            return np.inf

    # starting vector; shrink the initial ranges until the cost is valid
    theta0_p = np.clip(start.flatten(), lo_p, hi_p)
    if with_ranges:
        start_clamped = MixtureParams.unflatten(theta0_p, start.scheme,
                                                start.n_components, start.n_dim)
        init_ranges = TruncationRanges(np.full(n_p, 0.5))
        try:
            init_ranges = repair_truncation(dataset, start_clamped, init_ranges)
        except IrreparableRangesError:
            pass
        theta0 = np.concatenate([theta0_p, init_ranges.log_values])
    else:
        theta0 = theta0_p

    best_x = np.clip(theta0, lo, hi)
    best_f = objective(best_x)
    history: list[float] = []
    sci_bounds = sciopt.Bounds(lo, hi)
    rng = np.random.default_rng(config.seed)

    def consider(x: np.ndarray, _f: float):
        # clamp stage output to the box, then re-score the clamped point
        nonlocal best_x, best_f
        x = np.clip(x, lo, hi)
        fc = objective(x)
        if fc < best_f or (np.isfinite(fc) and not np.isfinite(best_f)):
            best_x, best_f = x, fc

    b1, b2, b3, b4 = config.stage_budgets

    # stage 1: simplex from the seeded start
    res = sciopt.minimize(objective, best_x, method="Nelder-Mead", bounds=sci_bounds,
                          options={"maxfev": b1, "xatol": 1e-8, "fatol": 1e-10,
                                   "adaptive": True})
    consider(res.x, res.fun)
    history.append(best_f)

    # stage 2: evolutionary global search seeded with the current best.
    # Truncation-range coordinates are seeded inside a plausible sub-box
    # (their full box spans twelve decades, nearly all of it invalid).
    dim = lo.size
    popmult = 5
    gens = max(1, b2 // (popmult * dim))
    npop = popmult * dim
    lo_init = np.concatenate([lo_p, np.full(n_p, np.log(1e-4))]) if with_ranges else lo
    init = rng.uniform(lo_init, hi, (max(npop, 5), dim))
    init[0] = best_x
    row = 1
    if with_ranges and start.n_components > 1:
        # collapsed variants of the incumbent join the initial population
        params_now, _ = _theta_split(best_x, start)
        order = np.argsort(params_now.weight_values())
        for n_drop in range(1, start.n_components):
            if row >= init.shape[0]:
                break
            try:
                init[row] = np.clip(
                    _collapsed_theta(best_x, order[:n_drop].tolist(), start), lo, hi)
                row += 1
            except ValueError:
                break
    res = sciopt.differential_evolution(
        objective, bounds=list(zip(lo, hi)), maxiter=gens, init=init,
        mutation=(0.5, 1.0), recombination=0.7, tol=0.0, polish=False,
        seed=int(rng.integers(2**31 - 1)), updating="immediate",
    )
    consider(res.x, res.fun)
    history.append(best_f)

    # stage 3: simplex refinement of the global winner, then deterministic
    # structural probes: short re-refinements from trial points with the
    # weakest component zeroed out (collapse) or a dead slot revived as
    # half of a strong component (split), keeping any improvement
    res = sciopt.minimize(objective, best_x, method="Nelder-Mead", bounds=sci_bounds,
                          options={"maxfev": b3, "xatol": 1e-10, "fatol": 1e-12,
                                   "adaptive": True})
    consider(res.x, res.fun)
    if with_ranges and start.n_components > 1 and np.isfinite(best_f):
        probe_budget = max(500, b3 // 3)
        spent, improved = 0, True
        while improved and spent < 3 * b3:
            improved = False
            params_now, _ = _theta_split(best_x, start)
            a_now = params_now.weight_values()
            trials: list[np.ndarray] = []
            for j in np.argsort(a_now):
                if a_now[j] > 0.0:
                    try:
                        trials.append(_collapsed_theta(best_x, [int(j)], start))
                    except ValueError:
                        pass
            dead = np.flatnonzero(a_now < 1e-12)
            if dead.size:
                target = int(dead[0])
                for j in np.argsort(a_now)[::-1]:
                    if a_now[j] >= max(1e-3, 2e-12):
                        trials.append(_split_theta(best_x, int(j), target, start))
            for trial in trials:
                res = sciopt.minimize(objective, np.clip(trial, lo, hi),
                                      method="Nelder-Mead", bounds=sci_bounds,
                                      options={"maxfev": probe_budget,
                                               "xatol": 1e-10, "fatol": 1e-12,
                                               "adaptive": True})
                spent += probe_budget
                if res.fun < best_f - 1e-9:
                    consider(res.x, res.fun)
                    improved = True
                    break
                if spent >= 3 * b3:
                    break
    history.append(best_f)

    # stage 4: gradient polish; the gradient is numeric by construction
    if np.isfinite(best_f):
        jac = lambda x: numeric_gradient(objective, x, rel_step=1e-6).values
        maxiter = max(1, b4 // (2 * dim + 2))
        res = sciopt.minimize(objective, best_x, method="L-BFGS-B", jac=jac,
                              bounds=sci_bounds, options={"maxiter": maxiter})
        consider(res.x, res.fun)
    history.append(best_f)

    params, ranges = (_theta_split(best_x, start) if with_ranges
                      else (MixtureParams.unflatten(best_x, start.scheme,
                                                    start.n_components, start.n_dim),
                            TruncationRanges(np.ones(n_p))))
    q = total_bit_cost(points, params, ranges, mode=config.mode,
                       data_precision=config.data_precision)
    offset = -(points.size + n_p) * float(np.log(config.data_precision))
    history = [h + offset for h in history]
    result = FitResult(params=params, ranges=ranges, q=q, stage_history=history,
                       pruned=[], validity=q.valid, config=config)
    if config.objective == "bits" and not q.valid:
        raise FitFailureError("no valid bit cost found within budget", best_result=result)
    return result


def prune(fit_result: FitResult, data) -> FitResult:
    """Drop insignificant or collapsed components and recompute the cost.

    Components fall when their weight is below the significance threshold
    or any of their widths is below min_width_fraction of the data span.
    A component removed for width while still carrying significant weight
    marks the model invalid (runaway width).
    """
    config = fit_result.config
    points = as_points(data)
    span = _data_span(points)
    params = fit_result.params
    a = params.weight_values()
    width_floor = config.min_width_fraction * span
    too_thin = np.any(params.widths < width_floor[None, :], axis=1)
    weak = a < config.significant_amplitude
    drop = weak | too_thin
    if not np.any(drop):
        return fit_result
    keep = np.flatnonzero(~drop)
    if keep.size == 0:
        raise PruneError("pruning would remove every component")
    runaway = bool(np.any(too_thin & ~weak))

    kept_weights = a[keep] / a[keep].sum()
    if params.scheme == "sqnorm":
        new_raw = params.amp_raw[keep]
        if np.all(new_raw == 0.0):
            new_raw = np.sqrt(kept_weights)
    else:
        new_raw = raw_from_weights(kept_weights, "hyperspherical")
    new_params = MixtureParams(
        scheme=params.scheme,
        amp_raw=new_raw,
        means=params.means[keep],
        log_widths=params.log_widths[keep],
    )

    # carry over the survivors' truncation ranges; amplitude coordinates do
    # not map one-to-one under the hyperspherical scheme, so take the first
    # entries there
    d = params.n_dim
    n_amp_old = params.amp_raw.size
    vals = fit_result.ranges.values
    amp_vals = vals[:n_amp_old]
    mean_vals = vals[n_amp_old:n_amp_old + params.n_components * d].reshape(-1, d)
    width_vals = vals[n_amp_old + params.n_components * d:].reshape(-1, d)
    if params.scheme == "sqnorm":
        new_amp_vals = amp_vals[keep]
    else:
        new_amp_vals = amp_vals[:max(keep.size - 1, 0)]
    new_ranges = TruncationRanges(np.concatenate([
        new_amp_vals, mean_vals[keep].ravel(), width_vals[keep].ravel(),
    ]))

    q = total_bit_cost(points, new_params, new_ranges, mode=config.mode,
                       data_precision=config.data_precision)
    return FitResult(
        params=new_params,
        ranges=new_ranges,
        q=q,
        stage_history=list(fit_result.stage_history),
        pruned=sorted(set(fit_result.pruned) | set(np.flatnonzero(drop).tolist())),
        validity=q.valid and not runaway,
        config=config,
        invalid_by_runaway_width=runaway,
    )
