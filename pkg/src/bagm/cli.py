"""Command-line front end: ``bagm ingest | fit | simulate | msecurve | report``.

Exit codes: 0 success, 2 usage or input error, 3 estimation failure,
4 storage error, 64 unknown flag.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import __version__
from ._backend import BACKEND
from .bagging import bagging_estimate
from .core import BaggingConfig, SolverConfig
from .errors import EstimationError, InputError, StoreError
from .ingest import build_store, schema_report
from .models import get_model
from .rowstore import open_store
from .simulate import DESK_B, DESK_N, PAPER_B, PAPER_N, monte_carlo, mse_curve, reference_design, parse_int_list

log = logging.getLogger("bagm")

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATION, EXIT_STORE, EXIT_UNKNOWN_FLAG = 0, 2, 3, 4, 64
DEFAULT_SEED = 20220101


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        code = EXIT_UNKNOWN_FLAG if message.startswith("unrecognized arguments") else EXIT_INPUT
        self.exit(code, f"{self.prog}: error: {message}\n")


def auto_subsample_size(N: int) -> int:
    """``floor(sqrt(N) * log(log(N)))``, the default subsample size for ``--n auto``."""
    if N < 16:
        return max(1, N)
    return int(math.floor(math.sqrt(N) * math.log(math.log(N))))


def _threads(value):
    if value == "auto":
        return "auto"
    try:
        t = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--threads expects an integer or 'auto', got {value!r}") from None
    if t < 1:
        raise argparse.ArgumentTypeError("--threads must be >= 1")
    return t


def _seed(args):
    if args.seed is None:
        log.warning("no --seed given; using default seed %d", DEFAULT_SEED)
        return DEFAULT_SEED
    return args.seed


def _write(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bagm", description="Bagging M-estimation on out-of-core row stores.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="convert a CSV file into a row store")
    p.add_argument("--csv", required=True, help="input CSV with a header row")
    p.add_argument("--schema", required=True,
                   help="'name:numeric,name:categorical,name:response' or a JSON spec (inline or file)")
    p.add_argument("--out", required=True, help="output store path; the schema sidecar is written next to it")
    p.add_argument("--intercept", action="store_true", help="prepend a constant column")

    p = sub.add_parser("fit", help="bagging estimate with standard errors and p-values")
    p.add_argument("--store", required=True)
    p.add_argument("--family", required=True, choices=("linear", "logistic", "poisson"))
    p.add_argument("--n", required=True, help="subsample size, or 'auto' for floor(sqrt(N) log log N)")
    p.add_argument("--k", "--K", dest="k", required=True, type=int, help="number of subsamples")
    p.add_argument("--seed", type=int, help=f"master seed (default {DEFAULT_SEED})")
    p.add_argument("--level", type=float, default=0.95, help="confidence level (default 0.95)")
    p.add_argument("--json", help="write the result document here ('-' for stdout)")
    p.add_argument("--include-thetas", action="store_true", help="add per-subsample estimates to the JSON")
    p.add_argument("--retry-limit", type=int, default=3, help="redraws allowed per failed subsample (default 3)")
    p.add_argument("--threads", type=_threads, default="auto", help="worker threads (default auto)")

    for name, help_text in (("simulate", "Monte Carlo bias / SE / coverage table"),
                            ("msecurve", "MSE of bagging versus the global estimator as K grows")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--design", required=True, choices=("linear", "logistic", "poisson"))
        if name == "simulate":
            p.add_argument("--grid", default="n=500,750,1000;K=50..250",
                           help="'n=a,b;K=lo..hi[:step]' (default %(default)s; lo..hi steps by lo)")
            p.add_argument("--level", type=float, default=0.95)
            p.add_argument("--json", help="write the report JSON here ('-' for stdout)")
        else:
            p.add_argument("--n", type=int, default=2000, help="subsample size (default 2000)")
            p.add_argument("--k-list", default="50..2000", help="K values, e.g. '50..2000' or '10,40,160'")
        p.add_argument("--b", type=int, help=f"replications (default {DESK_B}, or {PAPER_B} with --paper-scale)")
        p.add_argument("--N", dest="N", type=int, help=f"sample size (default {DESK_N}, or {PAPER_N} with --paper-scale)")
        p.add_argument("--paper-scale", action="store_true", help="full-size runs; hours of compute")
        p.add_argument("--seed", type=int, help=f"design seed (default {DEFAULT_SEED})")
        p.add_argument("--csv", help="write the CSV here (default stdout)")
        p.add_argument("--threads", type=_threads, default="auto")

    p = sub.add_parser("report", help="describe a store")
    p.add_argument("--store", required=True)
    return parser


def _cmd_ingest(args):
    summary = build_store(args.csv, args.schema, args.out, intercept=args.intercept or None)
    with open_store(args.out) as store:
        sys.stdout.write(schema_report(store))
    log.info("wrote %d records to %s", summary["N"], args.out)
    return EXIT_OK


def format_fit_report(result) -> str:
    lines = [f"bagging estimate: family={result.family} N={result.N} n={result.n} K={result.K} "
             f"seed={result.seed} retries={result.retries_used}"]
    width = max([len("covariate")] + [len(s) for s in result.names])
    lines.append(f"{'covariate':<{width}}  {'estimate':>12}  {'SE':>12}  {'p-value':>10}")
    se = result.se
    pv = None
    if se is not None:
        try:
            pv = result.p_values
        except EstimationError:
            pv = None
    for j, name in enumerate(result.names):
        est = f"{result.theta_bag[j]:12.6f}"
        if se is None:
            lines.append(f"{name:<{width}}  {est}  {'unavailable (Degenerate)':>12}")
            continue
        p = "n/a" if pv is None else ("<0.001" if pv[j] < 0.001 else f"{pv[j]:.3f}")
        lines.append(f"{name:<{width}}  {est}  {se[j]:12.6f}  {p:>10}")
    return "\n".join(lines) + "\n"


def _cmd_fit(args):
    store = open_store(args.store)
    try:
        N = store.N
        n = auto_subsample_size(N) if args.n == "auto" else int(args.n)
        seed = _seed(args)
        cfg = BaggingConfig(n=n, K=args.k, master_seed=seed, retry_limit=args.retry_limit, parallelism=args.threads)
        result = bagging_estimate(get_model(args.family, store.p), store, cfg, SolverConfig(), level=args.level)
    finally:
        store.close()
    sys.stdout.write(format_fit_report(result))
    if args.json:
        _write(args.json, result.dumps(args.include_thetas))
    return EXIT_OK


def _scale(args):
    N = args.N or (PAPER_N if args.paper_scale else DESK_N)
    B = args.b if args.b is not None else (PAPER_B if args.paper_scale else DESK_B)
    return N, B


def _cmd_simulate(args):
    N, B = _scale(args)
    if B < 2:
        raise InputError(f"--b must be >= 2, got {B}")
    design = reference_design(args.design, N=N, seed=_seed(args))
    report = monte_carlo(design, args.grid, B, level=args.level, parallelism=args.threads)
    _write(args.csv or "-", report.to_csv())
    if args.json:
        _write(args.json, report.dumps())
    return EXIT_OK


def _cmd_msecurve(args):
    N, B = _scale(args)
    if B < 1:
        raise InputError(f"--b must be >= 1, got {B}")
    design = reference_design(args.design, N=N, seed=_seed(args))
    curve = mse_curve(design, args.n, parse_int_list(args.k_list), B, parallelism=args.threads)
    _write(args.csv or "-", curve.to_csv())
    return EXIT_OK


def _cmd_report(args):
    with open_store(args.store) as store:
        sys.stdout.write(schema_report(store))
    return EXIT_OK


COMMANDS = {"ingest": _cmd_ingest, "fit": _cmd_fit, "simulate": _cmd_simulate, "msecurve": _cmd_msecurve,
            "report": _cmd_report}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"bagm {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EstimationError as exc:
        print(f"bagm {args.command}: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except StoreError as exc:
        print(f"bagm {args.command}: store error: {exc}", file=sys.stderr)
        return EXIT_STORE
    except ValueError as exc:
        print(f"bagm {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
