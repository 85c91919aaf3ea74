"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 invalid model or irreparable cost,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bitcost import TruncationRanges, total_bit_cost
from .dataio import (GeneratorSpec, GridSpec, crosstab, default_generator_spec,
                     generate, load_dataset, load_model, plotdata,
                     save_dataset, save_fit_result, save_model)
from .exceptions import (FitFailureError, IrreparableRangesError, MdlmixError,
                         ModelFormatError, PruneError, UnsupportedPlotError)
from .optimize import FitConfig, FitResult, fit, prune, repair_truncation

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID_MODEL = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_budget(text: str) -> tuple[int, int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 1:
        total = parts[0]
        split = (0.25, 0.45, 0.25, 0.05)
        budgets = tuple(max(1, int(total * s)) for s in split)
        return budgets  # type: ignore[return-value]
    if len(parts) == 4:
        return tuple(parts)  # type: ignore[return-value]
    raise argparse.ArgumentTypeError("budget is one total or four comma-separated stages")


def _config_from_args(args) -> FitConfig:
    kwargs = dict(
        max_components=args.max_components,
        seed=args.seed,
        mode=args.mode,
        scheme=args.scheme,
    )
    if args.budget is not None:
        kwargs["stage_budgets"] = args.budget
    return FitConfig(**kwargs)


def _add_fit_flags(p):
    p.add_argument("--mode", choices=["local", "global"], default="global")
    p.add_argument("--scheme", choices=["sqnorm", "hyperspherical"], default="sqnorm")
    p.add_argument("--max-components", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=_parse_budget, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdlmix",
                     description="bit-cost regularized Gaussian mixture fitting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a sample from a mixture spec")
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--spec", help="JSON generator spec file")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--univariate", action="store_true",
                   help="project the default 2D sample onto the first axis")

    p = sub.add_parser("fit", help="fit a mixture by minimizing the bit cost")
    p.add_argument("data")
    p.add_argument("--out", "-o", required=True)
    _add_fit_flags(p)

    p = sub.add_parser("eval", help="evaluate the bit cost of a model on data")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--mode", choices=["local", "global"], default=None)
    p.add_argument("--repair", action="store_true",
                   help="shrink truncation ranges until the cost is valid")
    p.add_argument("--out", "-o", help="write the (possibly repaired) model here")

    p = sub.add_parser("crosstab", help="cross-evaluate models on samples")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--samples", nargs="+", required=True)
    p.add_argument("--out", "-o", required=True,
                   help="output prefix; writes <prefix>.txt and <prefix>.json")
    p.add_argument("--mode", choices=["local", "global"], default=None)

    p = sub.add_parser("prune", help="drop weak or collapsed components")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--significant-amplitude", type=float, default=0.01)
    p.add_argument("--min-width-fraction", type=float, default=1e-6)

    p = sub.add_parser("errors", help="parameter uncertainty of a fitted model")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--method", choices=["simple", "full"], default="simple")
    p.add_argument("--out", "-o", help="write JSON estimate here")

    p = sub.add_parser("plotdata", help="emit density and sample tables")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out", "-o", required=True, help="output file prefix")
    p.add_argument("--grid", type=int, default=512)
    return parser


def _load_model_as_result(path, default_mode=None) -> FitResult:
    params, ranges, q_doc, mode, provenance = load_model(path)
    cfg = FitConfig(
        max_components=params.n_components,
        mode=default_mode or mode,
        scheme=params.scheme,
        seed=int(provenance.get("seed", 0)),
    )
    from .bitcost import BitCostBreakdown
    q = BitCostBreakdown(
        nll=float(q_doc["nll"]), param_bits=float(q_doc["param_bits"]),
        penalty=float(q_doc["penalty"]), total=float(q_doc["total"]),
        valid=bool(q_doc["valid"]), corrections=np.array([]),
    )
    return FitResult(params=params, ranges=ranges, q=q, stage_history=[],
                     pruned=[], validity=q.valid, config=cfg)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _dispatch(args)
    except SystemExit as exc:
        code = exc.code
        if code is None:
            return 0
        return code if isinstance(code, int) else EXIT_USAGE
    except (ModelFormatError, FitFailureError, IrreparableRangesError, PruneError,
            UnsupportedPlotError) as exc:
        print(f"mdlmix: {exc}", file=sys.stderr)
        return EXIT_INVALID_MODEL
    except (OSError, ValueError) as exc:
        print(f"mdlmix: {exc}", file=sys.stderr)
        return EXIT_IO
    except MdlmixError as exc:
        print(f"mdlmix: {exc}", file=sys.stderr)
        return EXIT_INVALID_MODEL


def _dispatch(args) -> int:
    if args.command == "generate":
        if args.spec:
            doc = json.loads(Path(args.spec).read_text())
            spec = GeneratorSpec(
                components=[(c["weight"], np.asarray(c["mean"]), np.asarray(c["width"]))
                            for c in doc["components"]],
                n=args.n, seed=args.seed,
                project_to=doc.get("project_to"),
            )
        else:
            spec = default_generator_spec(n=args.n, seed=args.seed,
                                          univariate=args.univariate)
        save_dataset(generate(spec), args.out)
        return EXIT_OK

    if args.command == "fit":
        data = load_dataset(args.data)
        result = fit(data, _config_from_args(args))
        save_fit_result(args.out, result)
        sig = result.significant_components().size
        print(f"total={result.q.total:.6g} valid={result.q.valid} "
              f"significant_components={sig}")
        return EXIT_OK

    if args.command == "eval":
        params, ranges, _q_doc, mode, provenance = load_model(args.model)
        data = load_dataset(args.data)
        use_mode = args.mode or mode
        q = total_bit_cost(data, params, ranges, mode=use_mode)
        if args.repair and not q.valid:
            ranges = repair_truncation(data, params, ranges)
            q = total_bit_cost(data, params, ranges, mode=use_mode)
            print("repaired: truncation ranges rescaled")
        print(f"nll={q.nll:.6g} param_bits={q.param_bits:.6g} "
              f"penalty={q.penalty:.6g} total={q.total:.6g} valid={q.valid}")
        if args.out:
            save_model(args.out, params, ranges, q, mode=use_mode,
                       provenance=provenance)
        return EXIT_OK

    if args.command == "crosstab":
        if len(args.models) != len(args.samples):
            print("mdlmix: need as many models as samples", file=sys.stderr)
            return EXIT_USAGE
        fits = [_load_model_as_result(m, default_mode=args.mode) for m in args.models]
        samples = [load_dataset(s) for s in args.samples]
        table = crosstab(fits, samples, mode=args.mode,
                         model_names=[Path(m).stem for m in args.models],
                         sample_names=[Path(s).stem for s in args.samples])
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".txt").write_text(table.to_text())
        out.with_suffix(".json").write_text(table.to_json() + "\n")
        print(table.to_text())
        return EXIT_OK

    if args.command == "prune":
        result = _load_model_as_result(args.model)
        data = load_dataset(args.data)
        cfg = FitConfig(
            max_components=result.params.n_components,
            mode=result.config.mode, scheme=result.params.scheme,
            significant_amplitude=args.significant_amplitude,
            min_width_fraction=args.min_width_fraction,
        )
        result = FitResult(params=result.params, ranges=result.ranges, q=result.q,
                           stage_history=[], pruned=[], validity=result.validity,
                           config=cfg)
        pruned = prune(result, data)
        save_fit_result(args.out, pruned)
        print(f"removed={pruned.pruned} total={pruned.q.total:.6g} "
              f"valid={pruned.validity}")
        if pruned.invalid_by_runaway_width:
            print("mdlmix: model flagged invalid by runaway width", file=sys.stderr)
            return EXIT_INVALID_MODEL
        return EXIT_OK

    if args.command == "errors":
        from .uncertainty import estimate_errors
        result = _load_model_as_result(args.model)
        data = load_dataset(args.data)
        est = estimate_errors(data, result, method=args.method)
        doc = {
            "std": est.std.tolist(),
            "method": est.method,
            "condition": est.condition,
            "rank_deficient": est.rank_deficient,
        }
        text = json.dumps(doc, indent=2)
        print(text)
        if args.out:
            Path(args.out).write_text(text + "\n")
        return EXIT_OK

    if args.command == "plotdata":
        result = _load_model_as_result(args.model)
        data = load_dataset(args.data)
        paths = plotdata(result, data, GridSpec(n_points=args.grid),
                         out_prefix=args.out)
        for kind, path in paths.items():
            print(f"{kind}: {path}")
        return EXIT_OK

    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
