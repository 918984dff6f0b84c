"""Command-line interface: basis listing, fitting, encoding, verification, studies.

Every command emits one report.  The JSON envelope is
``{"config": ..., "report": ..., "meta": ...}`` where ``config`` is the fully
resolved run configuration (flags plus applied defaults), ``report`` carries
the deterministic payload, and ``meta`` holds the volatile fields (timestamp,
wall time, version).  Given identical flags and seed, ``config`` and
``report`` serialize byte-identically; only ``meta`` varies.

Exit codes: 0 success / all checks hold, 1 I/O or malformed input file,
2 usage, 3 numerical failure, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .estimators import (
    GridConvergenceError,
    NonConvergenceError,
    SingularGramError,
    convergence_study,
    fit_mle,
    fit_score_matching,
    study_csv,
)
from .expfam import (
    QuadratureGrid,
    build_grid,
    family_grid,
    param_from_json,
    verify_1d_moment_bound,
    verify_int_concentration,
)
from .fisher import verify_bounds
from .hardness import (
    default_params,
    encode,
    encoded_to_json,
    hardness_grid,
    load_fixture,
    mean_sign_experiment,
    orthant_mass,
    pad_with_duplicates,
    parse_dimacs,
    satisfying_assignments,
    verify_roots,
    zgap_experiment,
)
from .polybasis import (
    check_mon_l2_bound,
    enumerate_basis,
    from_legendre,
    legendre_indices,
    to_legendre,
)
from .reports import BoundCheck, to_jsonable
from .sampler import DivergenceError, load_samples

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_NONCONVERGENCE = 4

# desk-scale surrogate for the hardness experiments; validated by the
# quadrature convergence gate on every run
DEFAULT_HARDNESS_SCALE = 0.01


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise _CliError(EXIT_IO, f"cannot read {path}: {e}") from e


def _emit(args, config: dict, report: dict, t0: float) -> None:
    doc = {
        "config": to_jsonable(config),
        "report": to_jsonable(report),
        "meta": {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "wall_time_s": time.perf_counter() - t0,
            "version": __version__,
        },
    }
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as e:
            raise _CliError(EXIT_IO, f"cannot write {args.out}: {e}") from e
    else:
        sys.stdout.write(text)


def _family_flags(p: argparse.ArgumentParser, need_B: bool = True):
    p.add_argument("--n", type=int, required=True, help="number of variables")
    p.add_argument("--d", type=int, required=True, help="polynomial degree (odd)")
    if need_B:
        p.add_argument("--B", type=float, default=1.0, help="coefficient box radius")


def _grid_flags(p: argparse.ArgumentParser):
    p.add_argument("--radius", type=float, default=None, help="quadrature box half-width")
    p.add_argument("--points-per-axis", type=int, default=None)
    p.add_argument("--refine-near", type=str, default=None, help="comma list of abscissae")
    p.add_argument("--refine-width", type=float, default=1.0)


def _resolve_grid(args, basis, B: float) -> tuple[QuadratureGrid, dict]:
    refine = (
        [float(t) for t in args.refine_near.split(",")] if args.refine_near else None
    )
    if args.radius is None and args.points_per_axis is None and refine is None:
        grid = family_grid(basis, B)
    else:
        if args.radius is None or args.points_per_axis is None:
            raise _CliError(
                EXIT_USAGE, "--radius and --points-per-axis must be given together"
            )
        grid = build_grid(
            basis.n, args.radius, args.points_per_axis, refine, args.refine_width
        )
    return grid, grid.spec()


def _basis_for(args):
    try:
        return enumerate_basis(args.n, args.d)
    except ValueError as e:
        raise _CliError(EXIT_USAGE, str(e)) from e


# ---------------------------------------------------------------------------
# subcommands


def cmd_basis(args) -> int:
    t0 = time.perf_counter()
    basis = _basis_for(args)
    names = basis.monomial_names()
    M = basis.size + 1  # the constant slot is implicit
    if args.format == "text" and not args.out:
        for name in names:
            sys.stdout.write(name + "\n")
        sys.stdout.write(f"M={M}\n")
        return EXIT_OK
    report = {
        "n": basis.n,
        "d": basis.d,
        "M": M,
        "indices": [list(idx) for idx in basis.indices],
        "names": names,
    }
    _emit(args, {"command": "basis", "n": args.n, "d": args.d}, report, t0)
    return EXIT_OK


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    basis = _basis_for(args)
    try:
        samples = load_samples(args.samples)
    except FileNotFoundError as e:
        raise _CliError(EXIT_IO, f"samples file not found: {args.samples}") from e
    except (OSError, ValueError) as e:
        raise _CliError(EXIT_IO, f"cannot load samples: {e}") from e
    if samples.n != basis.n:
        raise _CliError(
            EXIT_USAGE, f"samples have n={samples.n} but --n {basis.n} was given"
        )
    grid_spec = None
    try:
        if args.estimator == "sm":
            fit = fit_score_matching(samples, basis)
        else:
            grid, grid_spec = _resolve_grid(args, basis, args.B)
            fit = fit_mle(samples, basis, grid, tol=args.tol)
    except SingularGramError as e:
        raise _CliError(EXIT_NUMERICAL, str(e)) from e
    except GridConvergenceError as e:
        raise _CliError(EXIT_NUMERICAL, str(e)) from e
    except NonConvergenceError as e:
        raise _CliError(EXIT_NONCONVERGENCE, str(e)) from e
    config = {
        "command": "fit",
        "estimator": args.estimator,
        "samples": args.samples,
        "n": args.n,
        "d": args.d,
        "B": args.B,
        "tol": args.tol,
        "grid": grid_spec,
    }
    report = {
        "estimator": fit.estimator,
        "theta_hat": fit.theta_hat,
        "loss": fit.loss,
        "gram_condition": fit.gram_condition,
        "N": fit.N,
        "notes": fit.notes,
        "monomials": basis.monomial_names(),
    }
    _emit(args, config, report, t0)
    return EXIT_OK


def cmd_encode(args) -> int:
    t0 = time.perf_counter()
    try:
        formula = parse_dimacs(_read_text(args.cnf))
    except ValueError as e:
        raise _CliError(EXIT_IO, f"malformed DIMACS in {args.cnf}: {e}") from e
    if args.alpha is not None or args.beta is not None:
        if args.alpha is None or args.beta is None:
            raise _CliError(EXIT_USAGE, "--alpha and --beta must be given together")
        alpha, beta = args.alpha, args.beta
        prescription = None
    elif args.mode is not None:
        try:
            pp = default_params(formula.n, formula.m, args.mode, scale=args.scale)
        except ValueError as e:
            raise _CliError(EXIT_USAGE, str(e)) from e
        alpha, beta = pp.alpha, pp.beta
        prescription = {"mode": pp.mode, "scale": pp.scale}
    else:
        raise _CliError(EXIT_USAGE, "give either --alpha/--beta or --mode")
    try:
        inst = encode(formula, alpha, beta)
    except ValueError as e:
        raise _CliError(EXIT_USAGE, str(e)) from e
    report = encoded_to_json(inst)
    report["prescription"] = prescription
    config = {
        "command": "encode",
        "cnf": args.cnf,
        "alpha": alpha,
        "beta": beta,
        "mode": args.mode,
        "scale": args.scale,
    }
    _emit(args, config, report, t0)
    return EXIT_OK


def _checks_hold(checks: Sequence[BoundCheck]) -> bool:
    return all(c.holds for c in checks)


def _suite_polybasis(args) -> dict:
    rng = np.random.Generator(np.random.Philox(key=np.array([args.seed, 0], dtype=np.uint64)))
    checks = []
    for _ in range(20):
        n = int(rng.integers(1, 4))
        d = int(rng.integers(1, 6))
        idxs = legendre_indices(n, d)
        f = from_legendre(rng.standard_normal(len(idxs)), n, d)
        checks.append(check_mon_l2_bound(f, n, d))
    n, d = 2, 4
    c0 = rng.standard_normal(len(legendre_indices(n, d)))
    err = float(np.max(np.abs(to_legendre(from_legendre(c0, n, d), d=d) - c0)))
    checks.append(
        BoundCheck("legendre_roundtrip", err, 1e-9, err <= 1e-9, note="max abs coefficient error")
    )
    return {"checks": checks, "all_hold": _checks_hold(checks)}


def _suite_bounds(args) -> dict:
    from .expfam import random_params

    basis = enumerate_basis(args.n, args.d)
    p = random_params(args.n, args.d, args.B, seed=args.seed)
    grid, grid_spec = _resolve_grid(args, basis, args.B)
    rep = verify_bounds(p, grid, corrupt=args.corrupt, seed=args.seed)
    checks = list(rep.checks)
    checks += [
        verify_int_concentration(2.2e5, 0.03, 1),
        verify_int_concentration(2.0e5, 0.035, 2),
        verify_int_concentration(6.5e5, 0.02, 3),
    ]
    checks += verify_1d_moment_bound(350.0)
    return {
        "family": {"n": args.n, "d": args.d, "B": args.B},
        "grid": grid_spec,
        "spectrum": {
            "lambda_min": rep.lambda_min,
            "lambda_max": rep.lambda_max,
            "C_P": rep.C_P,
            "gamma_bound": rep.gamma_bound,
        },
        "checks": checks,
        "all_hold": _checks_hold(checks),
    }


def _suite_hardness(args) -> dict:
    if args.cnf:
        formula = parse_dimacs(_read_text(args.cnf))
        fixture_pair = False
    else:
        formula = load_fixture("uniq3")
        fixture_pair = True
    sections: dict = {}
    checks: list[BoundCheck] = []

    def couplings(mode: str, m: int):
        if args.alpha is not None and args.beta is not None:
            return args.alpha, args.beta, None
        pp = default_params(formula.n, m, mode, scale=args.scale)
        return pp.alpha, pp.beta, {"mode": mode, "scale": args.scale}

    alpha_r, beta_r, presc = couplings("zeroth", formula.m)
    roots = verify_roots(encode(formula, alpha_r, beta_r), seed=args.seed)
    sections["roots"] = roots
    checks.append(
        BoundCheck(
            "roots_certified",
            0.0,
            1.0 if roots["holds"] else 0.0,
            bool(roots["holds"]),
            note="vertex zero set matches the satisfying assignments",
        )
    )
    if formula.n > 3:
        sections["note"] = "quadrature experiments need n <= 3; only roots were checked"
        return {"sections": sections, "checks": checks, "all_hold": _checks_hold(checks)}

    ppa = args.points_per_axis
    if fixture_pair:
        a, b, _ = couplings("zeroth", 8)
        pair = (pad_with_duplicates(formula, 8), load_fixture("unsat8"))
        zrep = zgap_experiment(
            pair[0], pair[1], a, b, hardness_grid(3, b, points_per_axis=ppa) if ppa else None
        )
        sections["zgap"] = zrep
        checks += zrep["checks"]
    sols = satisfying_assignments(formula)
    if len(sols) == 1:
        a, b, _ = couplings("first", formula.m)
        mrep = mean_sign_experiment(
            formula, a, b, hardness_grid(formula.n, b, points_per_axis=ppa) if ppa else None
        )
        sections["mean_sign"] = mrep
        checks += mrep["checks"]
    else:
        sections["mean_sign"] = {
            "skipped": f"formula has {len(sols)} satisfying assignments, need exactly 1"
        }
    a, b, _ = couplings("sampling", formula.m)
    orep = orthant_mass(
        formula, a, b, hardness_grid(formula.n, b, points_per_axis=ppa) if ppa else None
    )
    sections["orthant"] = orep
    checks += orep["checks"]
    return {
        "formula": {"n": formula.n, "m": formula.m},
        "prescription": presc,
        "sections": sections,
        "checks": checks,
        "all_hold": _checks_hold(checks),
    }


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    if (args.alpha is None) != (args.beta is None):
        raise _CliError(EXIT_USAGE, "--alpha and --beta must be given together")
    suites = ["polybasis", "bounds", "hardness"] if args.suite == "all" else [args.suite]
    report: dict = {"suites": {}}
    try:
        for name in suites:
            if name == "polybasis":
                report["suites"][name] = _suite_polybasis(args)
            elif name == "bounds":
                report["suites"][name] = _suite_bounds(args)
            else:
                report["suites"][name] = _suite_hardness(args)
    except (GridConvergenceError, DivergenceError, np.linalg.LinAlgError) as e:
        raise _CliError(EXIT_NUMERICAL, str(e)) from e
    except ValueError as e:
        raise _CliError(EXIT_USAGE, str(e)) from e
    all_hold = all(s["all_hold"] for s in report["suites"].values())
    report["all_hold"] = all_hold
    config = {
        "command": "verify",
        "suite": args.suite,
        "n": args.n,
        "d": args.d,
        "B": args.B,
        "seed": args.seed,
        "cnf": args.cnf,
        "alpha": args.alpha,
        "beta": args.beta,
        "scale": args.scale,
        "corrupt": args.corrupt,
    }
    _emit(args, config, report, t0)
    return EXIT_OK if all_hold else EXIT_NUMERICAL


def cmd_study(args) -> int:
    t0 = time.perf_counter()
    try:
        theta_obj = json.loads(_read_text(args.theta_file))
        theta_star = param_from_json(theta_obj)
    except (ValueError, KeyError) as e:
        raise _CliError(EXIT_IO, f"cannot parse theta file {args.theta_file}: {e}") from e
    try:
        Ns = [int(t) for t in args.Ns.split(",")]
    except ValueError as e:
        raise _CliError(EXIT_USAGE, f"--Ns must be a comma list of integers: {args.Ns}") from e
    estimators = ["SM", "MLE"] if args.estimator == "both" else [args.estimator.upper()]
    notes = []
    if args.trials == 1:
        notes.append("slope from a single trial per N; the confidence interval is wide")
    if len(Ns) < 2:
        notes.append("a rate slope needs at least two sample sizes")
    results = {}
    csv_parts: list[str] = []
    try:
        for name in estimators:
            res = convergence_study(theta_star, Ns, args.trials, estimator=name, seed=args.seed)
            results[name] = {
                "slope": res.slope,
                "medians": {str(k): v for k, v in res.medians.items()},
                "Ns": list(res.Ns),
                "trials": res.trials,
            }
            table = study_csv(res)
            csv_parts.append(table if not csv_parts else table.split("\n", 1)[1])
    except NonConvergenceError as e:
        raise _CliError(EXIT_NONCONVERGENCE, str(e)) from e
    except (SingularGramError, GridConvergenceError, DivergenceError) as e:
        raise _CliError(EXIT_NUMERICAL, str(e)) from e
    csv_text = "".join(csv_parts)
    config = {
        "command": "study",
        "estimator": args.estimator,
        "theta_file": args.theta_file,
        "Ns": Ns,
        "trials": args.trials,
        "seed": args.seed,
        "family": {"n": theta_star.n, "d": theta_star.d, "B": theta_star.B},
    }
    if args.format == "csv":
        if args.out:
            try:
                Path(args.out).write_text(csv_text)
            except OSError as e:
                raise _CliError(EXIT_IO, f"cannot write {args.out}: {e}") from e
        else:
            sys.stdout.write(csv_text)
        return EXIT_OK
    report = {"estimators": results, "notes": notes}
    _emit(args, config, report, t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyscore",
        description="Estimation and verification for exponential families of polynomial type.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("basis", help="list the monomial sufficient statistics")
    _family_flags(p, need_B=False)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("fit", help="fit a family member to a samples file")
    p.add_argument("--estimator", choices=["sm", "mle"], required=True)
    p.add_argument("--samples", type=str, required=True)
    _family_flags(p)
    _grid_flags(p)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("encode", help="compile a DIMACS 3-CNF into a family member")
    p.add_argument("--cnf", type=str, required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--mode", choices=["zeroth", "first", "sampling"], default=None)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", choices=["polybasis", "bounds", "hardness", "all"], required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--B", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cnf", type=str, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--scale", type=float, default=DEFAULT_HARDNESS_SCALE)
    p.add_argument("--corrupt", type=str, default=None)
    _grid_flags(p)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("study", help="convergence-rate study against sample size")
    p.add_argument("--estimator", choices=["sm", "mle", "both"], default="both")
    p.add_argument("--theta-file", type=str, required=True)
    p.add_argument("--Ns", type=str, required=True, help="comma list, strictly increasing")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_study)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except _CliError as e:
        sys.stderr.write(f"error: {e}\n")
        return e.code


def console_main() -> None:
    sys.exit(main())
