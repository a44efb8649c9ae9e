"""Command-line entry point: ``mud-est``.

Exit codes: 0 on success, 2 on bad input, 3 when ``--strict`` is set and a
diagnostic verdict is not ``OK``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from . import experiments as ex
from .density import DEFAULT_BAND
from .io import IngestError
from .linalg import LinAlgInputError
from .linear import PredictabilityError, UnsupportedProblemError

EXIT_INPUT = 2
EXIT_SUSPECT = 3


def _band(text: str):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO,HI") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError("need LO < HI")
    return lo, hi


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def _bandwidth(text: str):
    if text in ("scott", "silverman"):
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected scott, silverman or a positive factor") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("bandwidth factor must be positive")
    return value


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    def d(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    parser.add_argument("--out", metavar="DIR", default=d("mud-out"),
                        help="output directory (default ./mud-out)")
    parser.add_argument("--format", choices=("csv", "json"), default=d("csv"),
                        help="format of the plot-data tables (default csv)")
    parser.add_argument("--strict", action="store_true", default=d(False),
                        help="exit with status 3 when a diagnostic verdict is not OK")
    parser.add_argument("--diag-band", type=_band, metavar="LO,HI", default=d(DEFAULT_BAND),
                        help="acceptance band for E(r) (default 0.9,1.1)")
    parser.add_argument("--bandwidth", type=_bandwidth, default=d("scott"),
                        help="KDE bandwidth rule: scott, silverman, or a numeric factor")
    parser.add_argument("--variance-threshold", type=float, metavar="X", default=d(0.95),
                        help="cumulative explained variance for PCA (default 0.95)")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mud-est", description="Maximal updated density parameter estimation.")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-linear", parents=[common],
                       help="closed-form MUD, MAP and least squares for a linear-Gaussian problem")
    p.add_argument("--problem", help="problem JSON (default: built-in 2-parameter fixture)")
    p.add_argument("--alphas", type=_floats, default=list(ex.DEFAULT_ALPHAS),
                   help="initial-covariance scalings (default 0.001,0.01,0.1,10)")
    p.add_argument("--reference", type=_floats, help="true parameter for relative errors")

    p = sub.add_parser("solve-density", parents=[common],
                       help="KDE update of a sample ensemble")
    p.add_argument("--ensemble", required=True, help="ensemble CSV or JSON")
    p.add_argument("--obs-mean", type=_floats, default=[0.0])
    p.add_argument("--obs-std", type=_floats, default=[1.0])
    p.add_argument("--reference", type=_floats)

    p = sub.add_parser("wme", parents=[common], help="weighted-mean-error map from repeated data")
    p.add_argument("--data", required=True, help="CSV with device,index,value,sigma")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--operator", help="JSON with linear measurement rows 'M' (closed form)")
    src.add_argument("--ensemble", help="ensemble whose q_* columns are per-device outputs")
    p.add_argument("--alphas", type=_floats, default=list(ex.DEFAULT_ALPHAS))
    p.add_argument("--reference", type=_floats)

    p = sub.add_parser("pca", parents=[common], help="PCA map with E(r)-driven component choice")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--components", type=_ints, help="candidate component counts, e.g. 1,2")
    p.add_argument("--reference", type=_floats)

    p = sub.add_parser("experiment", parents=[common], help="built-in experiments")
    p.add_argument("name", choices=("illustrative", "spectral", "dimension", "rank"))
    p.add_argument("--p", type=int, help="parameter dimension (spectral: 20, sweeps: 100)")
    p.add_argument("--steps", type=_ints, help="sweep steps (m or r values) or N list")
    p.add_argument("--alphas", type=_floats, default=list(ex.DEFAULT_ALPHAS))
    p.add_argument("--obs-std", type=float, default=1e-8,
                   help="observed standard deviation in the sweeps (default 1e-8)")
    p.add_argument("--sigma", type=float, help="measurement noise (spectral, illustrative)")
    p.add_argument("--n-samples", type=int, default=1000, help="initial samples (illustrative)")
    return parser


def _config(args, kind: str, inputs: dict, options: dict) -> ex.RunConfig:
    return ex.RunConfig(kind=kind, inputs={k: v for k, v in inputs.items() if v},
                        seed=args.seed, bandwidth=args.bandwidth,
                        variance_threshold=args.variance_threshold, diag_band=tuple(args.diag_band),
                        out_dir=args.out,
                        options={k: v for k, v in options.items() if v is not None})


def dispatch(args) -> ex.RunReport:
    cmd = args.command
    if cmd == "solve-linear":
        return ex.run_linear_gaussian(_config(args, "linear-gaussian", {"problem": args.problem},
                                              {"alphas": args.alphas, "reference": args.reference}))
    if cmd == "solve-density":
        return ex.run_density(_config(args, "density", {"ensemble": args.ensemble},
                                      {"obs_mean": args.obs_mean, "obs_std": args.obs_std,
                                       "reference": args.reference}))
    if cmd == "wme":
        return ex.run_wme(_config(args, "wme", {"data": args.data, "operator": args.operator,
                                                "ensemble": args.ensemble},
                                  {"alphas": args.alphas, "reference": args.reference}))
    if cmd == "pca":
        return ex.run_pca_pipeline(_config(args, "pca", {"ensemble": args.ensemble,
                                                         "data": args.data},
                                           {"components": args.components,
                                            "reference": args.reference}))
    name = args.name
    opts = {k: v for k, v in {"p": args.p, "steps": args.steps, "sigma": args.sigma}.items()
            if v is not None}
    if name == "illustrative":
        config = _config(args, "illustrative", {}, {**opts, "n_samples": args.n_samples})
        kw = {"N_list": args.steps} if args.steps else {}
        if args.sigma is not None:
            kw["sigma"] = args.sigma
        return ex.experiment_illustrative(args.seed, n_samples=args.n_samples, config=config, **kw)
    if name == "spectral":
        config = _config(args, "spectral", {}, opts)
        kw = {"p": args.p} if args.p else {}
        if args.steps:
            kw["N_list"] = args.steps
        if args.sigma is not None:
            kw["sigma"] = args.sigma
        return ex.experiment_spectral_decay(args.seed, config=config, **kw)
    config = _config(args, name, {}, {**opts, "alphas": args.alphas, "obs_std": args.obs_std})
    p = args.p or 100
    runner = ex.experiment_dimension_sweep if name == "dimension" else ex.experiment_rank_sweep
    return runner(args.seed, p, args.steps, tuple(args.alphas), args.obs_std, config=config)


def _summary_lines(report: ex.RunReport) -> List[str]:
    lines = [f"{report.kind}: seed={report.seed}"]
    for e in report.estimates[:12]:
        est = ", ".join(f"{v:.6g}" for v in list(e["estimate"])[:6])
        if len(e["estimate"]) > 6:
            est += ", ..."
        extra = ""
        if e.get("relative_error") is not None:
            extra += f" rel_err={e['relative_error']:.3e}"
        if "verdict" in e:
            e_r = "n/a" if e.get("e_r") is None else f"{e['e_r']:.4f}"
            extra += f" e_r={e_r} [{e['verdict']}]"
        alpha = "" if e.get("alpha") is None else f"(alpha={e['alpha']:g})"
        lines.append(f"  {e['method']}{alpha}: [{est}]{extra}")
    if len(report.estimates) > 12:
        lines.append(f"  ... {len(report.estimates) - 12} more in report.json")
    return lines


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = dispatch(args)
    except (FileNotFoundError, IngestError, LinAlgInputError, PredictabilityError,
            UnsupportedProblemError, ValueError) as exc:
        print(f"mud-est: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    written = report.write(args.out, args.format)
    for line in _summary_lines(report):
        print(line)
    print(f"wrote {len(written)} file(s) to {args.out}")
    if args.strict and report.suspect:
        bad = sorted(set(v for v in report.verdicts() if v != "OK"))
        print(f"mud-est: diagnostic verdict {', '.join(bad)}", file=sys.stderr)
        return EXIT_SUSPECT
    return 0


if __name__ == "__main__":
    sys.exit(main())
