"""Command-line front end: ``blunderfit fit | thresholds | simulate``.

Exit codes::

    0  success (fit: converged to a fixpoint)
    1  bad input, bad flags or invalid configuration
    2  the least-squares fit failed
    3  fit stopped on min_retained or max_iterations
"""

from __future__ import annotations

import argparse
import csv
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .exclusion import ExclusionConfig, ExclusionError, run_exclusion
from .fitting import Dataset, FitError, design_poly
from .report import RunReport, dumps
from .simulation import RULE_PRESETS, BlunderScenario, NullSimSpec, simulate_blunders, simulate_null
from .stat_core import k_gamma_approx, k_gamma_exact, kappa_limit

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FIT = 2
EXIT_STOPPED = 3

# plain decimal notation only; float() alone would also take "nan", "inf" and "1_0"
_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


class InputError(ValueError):
    pass


def _number(text, lineno, row_id, column):
    text = text.strip()
    if not _NUMBER.match(text):
        raise InputError(f"line {lineno} (row {row_id!r}): column {column!r} is not a number: {text!r}")
    return float(text)


def parse_model(spec: str | None):
    """``None`` or ``'linear'`` for raw design columns, ``'poly:k'`` for a polynomial in x."""
    if spec is None or spec == "linear":
        return None
    m = re.fullmatch(r"poly:(\d+)", spec)
    if not m:
        raise InputError(f"--model must be 'poly:<degree>', got {spec!r}")
    return int(m.group(1))


def read_csv(path, degree: int | None = None) -> Dataset:
    """Read ``id,y,sigma,x1,...,xp`` (or ``id,y,sigma,x`` with a polynomial degree).

    Lines starting with ``#`` and blank lines are skipped.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise InputError(f"{path} is not valid UTF-8") from exc

    header = None
    ids, ys, sigmas, xs = [], [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            fields = next(csv.reader([line], strict=True))
        except csv.Error as exc:
            raise InputError(f"line {lineno}: malformed CSV: {exc}") from exc
        fields = [f.strip() for f in fields]
        if header is None:
            header = fields
            if [h.lower() for h in header[:3]] != ["id", "y", "sigma"] or len(header) < 4:
                raise InputError(f"line {lineno}: header must start with id,y,sigma and name at least one x column")
            if degree is not None and len(header) != 4:
                raise InputError(f"line {lineno}: polynomial model expects header id,y,sigma,x")
            continue
        row_id = fields[0] if fields else ""
        if len(fields) != len(header):
            raise InputError(
                f"line {lineno}: row {row_id!r} has {len(fields)} columns, header has {len(header)}"
            )
        if not row_id:
            raise InputError(f"line {lineno}: empty id")
        ids.append(row_id)
        ys.append(_number(fields[1], lineno, row_id, header[1]))
        sigma = _number(fields[2], lineno, row_id, header[2])
        if not sigma > 0.0:
            raise InputError(f"line {lineno}: row {row_id!r} has sigma={fields[2]}; sigma must be > 0")
        sigmas.append(sigma)
        xs.append([_number(v, lineno, row_id, h) for v, h in zip(fields[3:], header[3:])])

    if header is None:
        raise InputError(f"{path}: no header row")
    if not ids:
        raise InputError(f"{path}: no data rows")
    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise InputError(f"duplicate row id {dup!r}")

    design = np.array(xs, dtype=float)
    if degree is not None:
        design = design_poly(design[:, 0], degree)
    try:
        return Dataset(tuple(ids), design, ys, sigmas)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _add_config_flags(p):
    p.add_argument("--gamma", type=float, default=0.05, help="confidence level for k_gamma (default 0.05)")
    p.add_argument("--lprime", type=int, default=2, help="kappa exceedances spared from exclusion (default 2)")
    p.add_argument("--kgamma", choices=("exact", "approx"), default="exact")
    p.add_argument("--sigma-rescale", choices=("none", "vf"), default="vf",
                   help="refresh sigmas by sqrt(variance factor) each iteration (default vf)")
    p.add_argument("--baseline-k", type=float, default=None, help="use the fixed rule |eps|/sigma > K instead")
    p.add_argument("--min-retained", type=int, default=None, help="default: parameter count + 2")
    p.add_argument("--max-iter", type=int, default=None, help="default: number of equations")


def _config_from(args) -> ExclusionConfig:
    return ExclusionConfig(
        gamma=args.gamma,
        l_prime=args.lprime,
        kgamma_mode=args.kgamma,
        sigma_mode="variance-factor" if args.sigma_rescale == "vf" else "none",
        min_retained=args.min_retained,
        max_iterations=args.max_iter,
        baseline_k=args.baseline_k,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blunderfit",
        description="Least-squares fitting with adaptive exclusion of blunders.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a CSV of conditional equations, excluding blunders")
    fit.add_argument("input", help="CSV with header id,y,sigma,x1,...,xp")
    fit.add_argument("--model", default=None, help="poly:<k> builds 1, x, ..., x^k from an x column")
    _add_config_flags(fit)
    fit.add_argument("--out", default=None, help="write the JSON report here")
    fit.add_argument("--seed", type=int, default=None, help="accepted for symmetry; fit is deterministic")

    thr = sub.add_parser("thresholds", help="tabulate kappa(n) and k_gamma(n)")
    thr.add_argument("--n-list", nargs="+", required=True, help="sample sizes, space or comma separated")
    thr.add_argument("--gamma", type=float, default=0.05)

    sim = sub.add_parser("simulate", help="Monte Carlo checks")
    mode = sim.add_mutually_exclusive_group(required=True)
    mode.add_argument("--null", action="store_true", help="count kappa exceedances among normal residuals")
    mode.add_argument("--blunders", type=int, metavar="K", help="contaminate K points per trial and compare rules")
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--trials", type=int, default=10000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--magnitude", type=float, default=10.0, help="blunder offset in units of sigma")
    sim.add_argument("--params", default="2,-1", help="generating polynomial coefficients, constant first")
    sim.add_argument("--rules", default="adaptive,baseline3",
                     help=f"comma-separated presets: {','.join(RULE_PRESETS)}; 'adaptive' follows the config flags")
    _add_config_flags(sim)
    sim.add_argument("--out", default=None, help="write the JSON report here instead of standard output")
    return parser


def _err(msg):
    print(f"blunderfit: error: {msg}", file=sys.stderr)


def _summary(report: RunReport) -> str:
    inp, fin = report.input, report.final
    lines = [f"{inp['path']}: N={inp['N']} p={inp['p']} model={inp['model']}"]
    lines.append(f"{'iter':>4} {'n_in':>6} {'kappa':>9} {'L':>4} {'k_gamma':>9}  excluded")
    for it in report.iterations:
        flagged = [f"{e['id']}({e['normalized_residual']:.2f},s3)" for e in it["excluded_step3"]]
        tag = "base" if it["mode"] == "baseline" else "s4"
        flagged += [f"{e['id']}({e['normalized_residual']:.2f},{tag})" for e in it["excluded_step4"]]
        lines.append(
            f"{it['iteration']:>4} {it['n_in']:>6} {it['kappa']:>9.6f} {it['L']:>4} {it['k_gamma']:>9.6f}  "
            + (" ".join(flagged) or "-")
        )
    errors = np.sqrt(np.maximum(np.diag(np.array(fin["covariance"], dtype=float)), 0.0))
    for k, (v, e) in enumerate(zip(fin["parameters"], errors)):
        lines.append(f"  a{k} = {v:.10g} +/- {e:.3g}")
    lines.append(
        f"stop: {fin['stop_reason']}; retained {len(fin['retained_ids'])}, excluded {len(fin['excluded'])}"
    )
    return "\n".join(lines)


def cmd_fit(args) -> int:
    try:
        degree = parse_model(args.model)
        config = _config_from(args)
        data = read_csv(args.input, degree)
    except (InputError, ExclusionError) as exc:
        _err(exc)
        return EXIT_INPUT

    start = time.perf_counter()
    try:
        outcome = run_exclusion(data, config)
    except ExclusionError as exc:
        _err(exc)
        return EXIT_INPUT
    except FitError as exc:
        _err(exc)
        return EXIT_FIT
    elapsed = (time.perf_counter() - start) * 1e3

    model = "linear" if degree is None else f"poly:{degree}"
    report = RunReport.from_outcome(outcome, path=args.input, n=data.n, p=data.p, model=model, timing_ms=elapsed)
    if args.out:
        try:
            Path(args.out).write_text(report.to_json(), encoding="utf-8")
        except OSError as exc:
            _err(f"cannot write {args.out}: {exc.strerror or exc}")
            return EXIT_INPUT

    if outcome.converged:
        print(_summary(report))
        return EXIT_OK
    print(_summary(report), file=sys.stderr)
    _err(f"stopped before a fixpoint ({outcome.stop_reason})")
    return EXIT_STOPPED


def _parse_n_list(values):
    out = []
    for v in values:
        for part in v.split(","):
            part = part.strip()
            if not part:
                continue
            if not re.fullmatch(r"\d+", part):
                raise InputError(f"n must be a positive integer, got {part!r}")
            out.append(int(part))
    if not out:
        raise InputError("--n-list is empty")
    return out


def cmd_thresholds(args) -> int:
    try:
        ns = _parse_n_list(args.n_list)
        rows = [(n, kappa_limit(n), k_gamma_exact(n, args.gamma), k_gamma_approx(n, args.gamma)) for n in ns]
    except (InputError, ValueError) as exc:
        _err(exc)
        return EXIT_INPUT
    print(f"{'n':>8} {'kappa':>12} {'k_gamma_exact':>14} {'k_gamma_approx':>15}")
    for n, kappa, exact, approx in rows:
        print(f"{n:>8d} {kappa:>12.6f} {exact:>14.6f} {approx:>15.6f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        if args.null:
            report = simulate_null(NullSimSpec(n=args.n, trials=args.trials, seed=args.seed))
        else:
            params = [float(v) for v in args.params.split(",")]
            scenario = BlunderScenario(
                n=args.n,
                blunder_count=args.blunders,
                blunder_magnitude=args.magnitude,
                trials=args.trials,
                seed=args.seed,
                parameters=tuple(params),
            )
            rules = {}
            for name in (r.strip() for r in args.rules.split(",")):
                if not name:
                    continue
                rules[name] = _config_from(args) if name == "adaptive" else name
            report = simulate_blunders(scenario, rules)
    except (ValueError, InputError) as exc:
        _err(exc)
        return EXIT_INPUT

    text = dumps(report.to_dict())
    if args.out:
        try:
            Path(args.out).write_text(text, encoding="utf-8")
        except OSError as exc:
            _err(f"cannot write {args.out}: {exc.strerror or exc}")
            return EXIT_INPUT
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage errors are input errors here
        return EXIT_INPUT if exc.code else EXIT_OK
    handler = {"fit": cmd_fit, "thresholds": cmd_thresholds, "simulate": cmd_simulate}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
