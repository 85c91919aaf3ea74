"""Sample generation, persistence, cross-sample evaluation tables and plot
data emission."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bitcost import Mode, TruncationRanges, total_bit_cost
from .exceptions import ModelFormatError, UnsupportedPlotError
from .mixture import Dataset, MixtureParams, as_points, log_pdf_batch, weights
from .optimize import FitResult

MODEL_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# sample generation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GeneratorSpec:
    """Mixture sampler: weighted diagonal Gaussian components."""

    components: list[tuple[float, np.ndarray, np.ndarray]]  # (weight, mean, width)
    n: int = 100
    seed: int = 0
    project_to: int | None = None

    def __post_init__(self):
        comps = [(float(w), np.atleast_1d(np.asarray(m, dtype=float)),
                  np.atleast_1d(np.asarray(s, dtype=float)))
                 for w, m, s in self.components]
        object.__setattr__(self, "components", comps)
        w = np.array([c[0] for c in comps])
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0.0):
            raise ValueError("component weights must be non-negative and sum to 1")
        if any(np.any(c[2] <= 0.0) for c in comps):
            raise ValueError("component widths must be positive")


def default_generator_spec(n: int = 100, seed: int = 0,
                           univariate: bool = False) -> GeneratorSpec:
    """Three slightly overlapping 2D Gaussians: one carrying 80% of the
    probability and two with 10% each; the univariate variant projects the
    sample onto the first axis."""
    comps = [
        (0.8, np.array([0.0, 0.0]), np.array([1.0, 1.0])),
        (0.1, np.array([2.5, 2.5]), np.array([1.0, 1.0])),
        (0.1, np.array([-2.5, 2.5]), np.array([1.0, 1.0])),
    ]
    return GeneratorSpec(components=comps, n=n, seed=seed,
                         project_to=0 if univariate else None)


def generate(spec: GeneratorSpec) -> Dataset:
    """Draw a sample: component choice by weight, then per-dimension draws."""
    rng = np.random.default_rng(spec.seed)
    w = np.array([c[0] for c in spec.components])
    means = np.stack([c[1] for c in spec.components])
    sigmas = np.stack([c[2] for c in spec.components])
    choice = rng.choice(len(spec.components), size=spec.n, p=w)
    pts = rng.normal(means[choice], sigmas[choice])
    if spec.project_to is not None:
        pts = pts[:, [spec.project_to]]
    return Dataset(pts)


# ---------------------------------------------------------------------------
# dataset files: headerless delimited text, one point per row
# ---------------------------------------------------------------------------
def save_dataset(dataset: Dataset, path) -> None:
    np.savetxt(path, dataset.points, delimiter=",", fmt="%.17g")


def load_dataset(path) -> Dataset:
    pts = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return Dataset(pts)


# ---------------------------------------------------------------------------
# model files: one self-describing JSON document
# ---------------------------------------------------------------------------
def save_model(path, params: MixtureParams, ranges: TruncationRanges,
               q, mode: Mode = "global", provenance: dict | None = None) -> None:
    """Write the model as deterministic JSON.

    Floats go through Python's shortest round-trip repr, so the encoding
    is binary exact and save-load-save is byte identical.  The widths
    array is informational; the log widths are canonical.
    """
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "scheme": params.scheme,
        "amp_raw": params.amp_raw.tolist(),
        "means": params.means.tolist(),
        "log_widths": params.log_widths.tolist(),
        "widths": params.widths.tolist(),
        "trunc_ranges": ranges.values.tolist(),
        "mode": mode,
        "q": {
            "nll": q.nll,
            "param_bits": q.param_bits,
            "penalty": q.penalty,
            "total": q.total,
            "valid": bool(q.valid),
        },
        "provenance": provenance or {},
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def load_model(path):
    """Read a model file; returns (params, ranges, q_dict, mode, provenance).

    Raises ModelFormatError on malformed documents, version mismatches or
    invariant violations (non-finite parameters, non-positive widths,
    inconsistent width/log-width pairs, out-of-range truncation values).
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not a valid model document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ModelFormatError(
            f"unsupported schema version {doc.get('schema_version')!r}"
            if isinstance(doc, dict) else "not a model document")
    try:
        scheme = doc["scheme"]
        amp_raw = np.asarray(doc["amp_raw"], dtype=float)
        means = np.asarray(doc["means"], dtype=float)
        log_widths = np.asarray(doc["log_widths"], dtype=float)
        widths = np.asarray(doc["widths"], dtype=float)
        ranges_vals = np.asarray(doc["trunc_ranges"], dtype=float)
        mode = doc["mode"]
        q = dict(doc["q"])
        provenance = doc.get("provenance", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"missing or malformed field: {exc}") from exc
    if np.any(widths <= 0.0) or not np.all(np.isfinite(widths)):
        raise ModelFormatError("widths must be strictly positive and finite")
    if widths.shape != log_widths.shape or not np.allclose(
            widths, np.exp(log_widths), rtol=1e-9, atol=0.0):
        raise ModelFormatError("widths are inconsistent with log widths")
    if mode not in ("local", "global"):
        raise ModelFormatError(f"unknown mode {mode!r}")
    try:
        params = MixtureParams(scheme=scheme, amp_raw=amp_raw, means=means,
                               log_widths=log_widths)
        derived = weights(params.amp_raw, params.scheme)[0]
        ranges = TruncationRanges(ranges_vals)
    except Exception as exc:
        raise ModelFormatError(f"invariant violation: {exc}") from exc
    if ranges.values.size != params.n_params:
        raise ModelFormatError("truncation range count does not match parameters")
    if abs(derived.sum() - 1.0) > 1e-9:
        raise ModelFormatError("derived weights do not sum to one")
    return params, ranges, q, mode, provenance


def save_fit_result(path, fit_result: FitResult) -> None:
    provenance = {
        "seed": fit_result.config.seed,
        "config_hash": fit_result.config.digest(),
        "stage_history": list(map(float, fit_result.stage_history)),
        "pruned": list(map(int, fit_result.pruned)),
    }
    save_model(path, fit_result.params, fit_result.ranges, fit_result.q,
               mode=fit_result.config.mode, provenance=provenance)


# ---------------------------------------------------------------------------
# cross-sample evaluation tables
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CrossTable:
    """Relative cost of each trained model on every sample.

    Rows are training runs, columns test samples; each row is normalized
    to the model's cost on its own training sample (the diagonal, which is
    exactly zero).  rel_q may contain +inf; rel_entropy, built from the
    likelihood part only, stays finite for valid models.
    """

    models: list[str]
    samples: list[str]
    rel_q: np.ndarray
    rel_entropy: np.ndarray

    def to_text(self) -> str:
        width = max(9, max((len(m) for m in self.models), default=9) + 1)
        lines = []
        for name, mat in (("relative Q", self.rel_q),
                          ("relative entropy", self.rel_entropy)):
            lines.append(f"# {name} (row: training sample, column: testing sample)")
            header = " " * width + "".join(f"{s:>{width}}" for s in self.samples)
            lines.append(header)
            for i, m in enumerate(self.models):
                cells = "".join(
                    f"{'inf':>{width}}" if not np.isfinite(v) else f"{100*v:>{width-1}.1f}%"
                    for v in mat[i])
                lines.append(f"{m:<{width}}" + cells)
            lines.append("")
        return "\n".join(lines)

    def to_json(self) -> str:
        doc = {
            "models": self.models,
            "samples": self.samples,
            "rel_q": [[v if np.isfinite(v) else "inf" for v in row]
                      for row in self.rel_q.tolist()],
            "rel_entropy": self.rel_entropy.tolist(),
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def crosstab(fits: list[FitResult], samples: list[Dataset],
             mode: Mode | None = None,
             model_names: list[str] | None = None,
             sample_names: list[str] | None = None) -> CrossTable:
    """Evaluate every fit on every sample, index-aligned (fit i trained on
    sample i); invalid costs appear as +inf in rel_q."""
    if len(fits) != len(samples):
        raise ValueError("need exactly one fit per sample, index-aligned")
    k = len(fits)
    q = np.empty((k, k))
    ent = np.empty((k, k))
    for i, fr in enumerate(fits):
        fit_mode = mode or fr.config.mode
        for j, sample in enumerate(samples):
            bc = total_bit_cost(sample, fr.params, fr.ranges, mode=fit_mode)
            q[i, j] = bc.total
            ent[i, j] = bc.nll
    rel_q = np.empty_like(q)
    rel_e = np.empty_like(ent)
    for i in range(k):
        rel_q[i] = (q[i] - q[i, i]) / q[i, i]
        rel_e[i] = (ent[i] - ent[i, i]) / ent[i, i]
        rel_q[i, i] = 0.0
        rel_e[i, i] = 0.0
    names_m = model_names or [f"model_{i}" for i in range(k)]
    names_s = sample_names or [f"sample_{j}" for j in range(k)]
    return CrossTable(models=names_m, samples=names_s, rel_q=rel_q, rel_entropy=rel_e)


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GridSpec:
    """Evaluation grid; empty limits default to the data range plus margin."""

    n_points: int = 512
    low: np.ndarray | None = None
    high: np.ndarray | None = None
    margin_sigmas: float = 3.0


def _component_pdfs(grid: np.ndarray, params: MixtureParams) -> np.ndarray:
    """Weighted per-component densities on the grid, shape (n, k)."""
    a = params.weight_values()
    out = np.empty((grid.shape[0], params.n_components))
    for j in range(params.n_components):
        single = MixtureParams(scheme="sqnorm", amp_raw=np.array([1.0]),
                               means=params.means[[j]],
                               log_widths=params.log_widths[[j]])
        out[:, j] = a[j] * np.exp(log_pdf_batch(grid, single))
    return out


def plotdata(fit_result: FitResult, dataset: Dataset, grid_spec: GridSpec | None = None,
             out_prefix=None) -> dict[str, Path]:
    """Emit model density, per-component densities and the raw sample.

    One and two dimensional models only; the grid raster for 2D has one
    row per cell.  Returns the written file paths keyed by content.
    """
    grid_spec = grid_spec or GridSpec()
    params = fit_result.params
    d = params.n_dim
    if d > 2:
        raise UnsupportedPlotError("plot data supports one or two dimensions")
    pts = dataset.points
    sigma = pts.std(axis=0)
    low = grid_spec.low if grid_spec.low is not None else pts.min(axis=0) - grid_spec.margin_sigmas * sigma
    high = grid_spec.high if grid_spec.high is not None else pts.max(axis=0) + grid_spec.margin_sigmas * sigma
    low = np.broadcast_to(np.atleast_1d(low), (d,))
    high = np.broadcast_to(np.atleast_1d(high), (d,))
    n = grid_spec.n_points
    if d == 1:
        grid = np.linspace(low[0], high[0], n)[:, None]
    else:
        xs = np.linspace(low[0], high[0], n)
        ys = np.linspace(low[1], high[1], n)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        grid = np.column_stack([gx.ravel(), gy.ravel()])
    density = np.exp(log_pdf_batch(grid, params))
    comps = _component_pdfs(grid, params)
    table = np.column_stack([grid, density, comps])
    head_cols = ["x"] if d == 1 else ["x", "y"]
    header = ",".join(head_cols + ["pdf"] +
                      [f"component_{j}" for j in range(params.n_components)])
    prefix = Path(out_prefix) if out_prefix is not None else Path("plotdata")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    density_path = prefix.with_name(prefix.name + "_density.csv")
    sample_path = prefix.with_name(prefix.name + "_sample.csv")
    np.savetxt(density_path, table, delimiter=",", fmt="%.17g",
               header=header, comments="# ")
    np.savetxt(sample_path, pts, delimiter=",", fmt="%.17g")
    return {"density": density_path, "sample": sample_path}
