"""Command-line front end.

Subcommands: ``mi``, ``table``, ``fit``, ``ergodic``, ``compare`` and
``replay``. SNR flags are in dB. Exit codes: 0 success, 1 numerical or
runtime failure, 2 usage error.

When ``-o`` is given the output is written atomically and a run manifest
lands next to it (``<output>.manifest.json``); ``miq replay`` re-runs a
manifest and reproduces the same bytes.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .constellation import build_qam
from .errors import InvalidOrderError, MiqError, ParseError
from .ergodic import (
    FadingModel,
    ergodic_mi_closed,
    ergodic_mi_numeric,
    exact_source,
    surrogate_source,
)
from .exact_mi import (
    QuadratureSpec,
    SnrGrid,
    db_to_linear,
    mi_curve,
    mi_curve_monte_carlo,
)
from .fitter import FitConfig, fit_edcf
from .medcf import best_model, builtin_table, canonical_grid, eval_edcf, load_table, rmse

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- argument types --------------------------------------------------------------

def _qam_order(text):
    try:
        order = int(text)
        build_qam(order)
    except (ValueError, InvalidOrderError):
        raise argparse.ArgumentTypeError(f"modulation order must be a power of 4 >= 4, got {text!r}")
    return order


def _count(text):
    """Positive integer; accepts scientific notation such as 1e6."""
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not math.isfinite(val) or val != int(val) or val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(val)


def _nakagami_m(text):
    try:
        m = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not (math.isfinite(m) and m >= 0.5):
        raise argparse.ArgumentTypeError(f"Nakagami m must be >= 0.5, got {text!r}")
    return m


def _finite(text):
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not math.isfinite(val):
        raise argparse.ArgumentTypeError(f"expected a finite number, got {text!r}")
    return val


# -- output ----------------------------------------------------------------------

def write_atomic(path, text: str):
    """Write UTF-8 text with LF endings via a temp file and rename."""
    path = os.path.abspath(path)
    fd, tmp = tempfile.mkstemp(prefix=".miq-", dir=os.path.dirname(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Outputs:
    """Collects a command's artifacts and the manifest describing them."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.paths = []

    def emit(self, text: str, suffix: str = "", stream=None):
        if self.args.output:
            path = self.args.output + suffix
            write_atomic(path, text)
            self.paths.append(path)
        else:
            (stream or sys.stdout).write(text)

    def manifest(self, params: dict):
        if not self.args.output and not self.args.manifest:
            return
        path = self.args.manifest or self.args.output + ".manifest.json"
        doc = {
            "command": self.args.command,
            "argv": self.argv,
            "parameters": params,
            "seed": params.get("seed"),
            "version": __version__,
            "outputs": self.paths,
        }
        write_atomic(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _grid_from(args, order) -> SnrGrid:
    if args.from_db is None and args.to_db is None:
        return canonical_grid(order)
    if args.from_db is None or args.to_db is None:
        raise UsageError("--from-db and --to-db go together")
    if args.to_db < args.from_db:
        raise UsageError("--to-db must not be below --from-db")
    if not args.step_db > 0:
        raise UsageError("--step-db must be positive")
    return SnrGrid.from_db(args.from_db, args.to_db, args.step_db)


def _table(args):
    return load_table(args.coeff_file) if args.coeff_file else builtin_table()


def _model(args, table, order):
    if args.terms is None:
        return best_model(table, order)
    return table.lookup(order, args.terms)


def _num(x):
    return float(x) if x is not None else None


# -- commands ----------------------------------------------------------------------

def cmd_mi(args, out: Outputs):
    if args.to_db < args.from_db:
        raise UsageError("--to-db must not be below --from-db")
    if not args.step_db > 0:
        raise UsageError("--step-db must be positive")
    c = build_qam(args.mod)
    grid = SnrGrid.from_db(args.from_db, args.to_db, args.step_db)
    params = {
        "modulation": args.mod, "from_db": args.from_db, "to_db": args.to_db,
        "step_db": args.step_db, "method": args.method,
    }
    if args.method == "quad":
        params["nodes"] = args.nodes
        text = mi_curve(c, grid, QuadratureSpec(args.nodes)).to_csv()
    else:
        params.update(samples=args.samples, seed=args.seed)
        curve, err = mi_curve_monte_carlo(c, grid, args.samples, args.seed)
        lines = curve.to_csv().splitlines()
        lines[0] += ",std_err"
        lines[1:] = [f"{ln},{float(e)!r}" for ln, e in zip(lines[1:], err)]
        text = "\n".join(lines) + "\n"
    out.emit(text)
    out.manifest(params)


def cmd_table(args, out: Outputs):
    table = _table(args)
    curves = {}
    rows = []
    for order in table.orders():
        try:
            curves[order] = mi_curve(build_qam(order), canonical_grid(order))
        except MiqError:
            curves[order] = None
        best = best_model(table, order)
        for m in table.for_order(order):
            rec = rmse(m, curves[order]) if curves[order] is not None else None
            rep = m.reported_rmse
            rows.append({
                "order": m.order,
                "n_terms": m.n_terms,
                "a": list(m.a),
                "b": list(m.b),
                "reported_rmse": rep,
                "recomputed_rmse": rec,
                "ratio": rec / rep if rec is not None and rep else None,
                "best": m is best,
            })
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        lines = ["order  N  best  reported_rmse  recomputed_rmse  ratio  a | b"]
        for r in rows:
            fmt = lambda x: "-" if x is None else f"{x:.6g}"
            lines.append(
                f"{r['order']:5d} {r['n_terms']:2d}  {'*' if r['best'] else ' ':>4}  "
                f"{fmt(r['reported_rmse']):>13}  {fmt(r['recomputed_rmse']):>15}  "
                f"{fmt(r['ratio']):>5}  "
                + " ".join(f"{a:.6g}" for a in r["a"]) + " | " + " ".join(f"{b:.6g}" for b in r["b"])
            )
        text = "\n".join(lines) + "\n"
    out.emit(text)
    out.manifest({"coeff_file": args.coeff_file, "format": args.format, "grid": "canonical"})


def cmd_fit(args, out: Outputs):
    order = args.mod
    grid = _grid_from(args, order)
    config = FitConfig(
        n_terms=args.terms, grid=grid, multistarts=args.multistarts,
        max_lm_iterations=args.max_iterations, seed=args.seed,
    )
    reference = mi_curve(build_qam(order), grid, QuadratureSpec(args.nodes))
    result = fit_edcf(reference, config)
    out.emit(json.dumps(result.model.to_json(), indent=2) + "\n")
    out.emit(json.dumps(result.report(), indent=2) + "\n", suffix=".report.json", stream=sys.stderr)
    out.manifest({
        "modulation": order, "n_terms": args.terms, "multistarts": args.multistarts,
        "max_iterations": args.max_iterations, "seed": args.seed, "nodes": args.nodes,
        "grid_db": [args.from_db, args.to_db, args.step_db] if args.from_db is not None else "canonical",
    })


def cmd_ergodic(args, out: Outputs):
    if args.fading == "nakagami":
        fading = FadingModel.nakagami(args.m, float(db_to_linear(args.mean_snr_db)))
    else:
        fading = FadingModel.rayleigh(float(db_to_linear(args.mean_snr_db)))
    model = _model(args, _table(args), args.mod)
    closed = ergodic_mi_closed(model, fading)
    numeric = ergodic_mi_numeric(surrogate_source(model), fading)
    doc = {
        "modulation": args.mod,
        "fading": args.fading,
        "m": fading.m,
        "mean_snr_db": args.mean_snr_db,
        "mean_snr": fading.mean_snr,
        "n_terms": model.n_terms,
        "closed_form": closed.value,
        "numeric_oracle": numeric.value,
        "numeric_error_estimate": numeric.error_estimate,
        "abs_diff": abs(closed.value - numeric.value),
    }
    if args.with_exact:
        exact = ergodic_mi_numeric(exact_source(build_qam(args.mod)), fading, tol=1e-7, max_levels=8)
        doc["exact_ergodic"] = exact.value
        doc["exact_error_estimate"] = exact.error_estimate
    out.emit(json.dumps(doc, indent=2) + "\n")
    out.manifest({
        "modulation": args.mod, "fading": args.fading, "m": args.m,
        "mean_snr_db": args.mean_snr_db, "terms": args.terms, "coeff_file": args.coeff_file,
        "with_exact": args.with_exact,
    })


def cmd_compare(args, out: Outputs):
    order = args.mod
    grid = _grid_from(args, order)
    model = _model(args, _table(args), order)
    exact = mi_curve(build_qam(order), grid, QuadratureSpec(args.nodes))
    approx = np.atleast_1d(eval_edcf(model, grid.values))
    lines = ["gamma_db,exact_mi,edcf_mi,abs_err"]
    for d, e, a in zip(grid.db, exact.mi, approx):
        lines.append(f"{float(d)!r},{float(e)!r},{float(a)!r},{float(abs(a - e))!r}")
    out.emit("\n".join(lines) + "\n")
    out.manifest({
        "modulation": order, "terms": model.n_terms, "coeff_file": args.coeff_file,
        "nodes": args.nodes,
        "grid_db": [args.from_db, args.to_db, args.step_db] if args.from_db is not None else "canonical",
    })


def cmd_replay(args, out: Outputs):
    try:
        with open(args.manifest_file, encoding="utf-8") as fh:
            doc = json.load(fh)
        argv = list(doc["argv"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{args.manifest_file}: cannot read manifest: {exc}") from exc
    if args.output:
        argv = _replace_output(argv, args.output)
    return main(argv)


def _replace_output(argv, path):
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok in ("-o", "--output", "--manifest"):
            skip = True
            continue
        if tok.startswith("--output=") or tok.startswith("--manifest="):
            continue
        out.append(tok)
    return out + ["-o", path]


# -- parser ----------------------------------------------------------------------

def _add_output(p):
    p.add_argument("-o", "--output", help="write the result to this file (atomic) plus a manifest")
    p.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")


def _add_grid(p):
    p.add_argument("--from-db", type=_finite, help="grid start in dB (default: canonical grid)")
    p.add_argument("--to-db", type=_finite, help="grid stop in dB, inclusive")
    p.add_argument("--step-db", type=_finite, default=0.1, help="grid step in dB (default 0.1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="miq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"miq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mi", help="exact MI sweep for square QAM over AWGN")
    p.add_argument("--mod", type=_qam_order, required=True)
    p.add_argument("--from-db", type=_finite, required=True)
    p.add_argument("--to-db", type=_finite, required=True)
    p.add_argument("--step-db", type=_finite, required=True)
    p.add_argument("--method", choices=("quad", "mc"), default="quad")
    p.add_argument("--nodes", type=_count, default=64, help="quadrature nodes per dimension")
    p.add_argument("--samples", type=_count, default=10**6, help="Monte Carlo samples per point")
    p.add_argument("--seed", type=int, default=1)
    _add_output(p)
    p.set_defaults(func=cmd_mi)

    p = sub.add_parser("table", help="list coefficient sets with recomputed RMSE")
    p.add_argument("--coeff-file")
    p.add_argument("--format", choices=("text", "json"), default="text")
    _add_output(p)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("fit", help="fit surrogate coefficients to the exact MI curve")
    p.add_argument("--mod", type=_qam_order, required=True)
    p.add_argument("--terms", type=_count, required=True)
    _add_grid(p)
    p.add_argument("--multistarts", type=_count, default=64)
    p.add_argument("--max-iterations", type=_count, default=2000)
    p.add_argument("--nodes", type=_count, default=64)
    p.add_argument("--seed", type=int, default=1)
    _add_output(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ergodic", help="ergodic MI of the surrogate over fading")
    p.add_argument("--mod", type=_qam_order, required=True)
    p.add_argument("--fading", choices=("rayleigh", "nakagami"), required=True)
    p.add_argument("--mean-snr-db", type=_finite, required=True)
    p.add_argument("--m", type=_nakagami_m, default=1.0, help="Nakagami m (>= 0.5)")
    p.add_argument("--terms", type=_count, help="number of terms (default: lowest RMSE)")
    p.add_argument("--coeff-file")
    p.add_argument("--with-exact", action="store_true", help="also integrate the exact MI curve")
    _add_output(p)
    p.set_defaults(func=cmd_ergodic)

    p = sub.add_parser("compare", help="exact vs surrogate MI on a grid")
    p.add_argument("--mod", type=_qam_order, required=True)
    _add_grid(p)
    p.add_argument("--terms", type=_count, help="number of terms (default: lowest RMSE)")
    p.add_argument("--coeff-file")
    p.add_argument("--nodes", type=_count, default=64)
    _add_output(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest_file")
    p.add_argument("-o", "--output", help="write to this path instead of the recorded one")
    p.set_defaults(func=cmd_replay, manifest=None)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        rc = args.func(args, Outputs(args, argv))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"miq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MiqError, ArithmeticError, OSError) as exc:
        print(f"miq {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())
