"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 bad parameters, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bounds
from .dca_engine import QuadraticDC, check_descent_direction, random_quadratic_dc, run_bdca
from .errors import BoundViolation, DCAPEPError, DimensionMismatch, ParameterError, SolverFailure
from .gram_builder import DEFAULT_RANK_TOL, reconstruct_certificate
from .pep_model import CurvatureClass, MethodConfig, build_pep
from .proof_certificates import (
    gd_pl_multipliers,
    one_iter_multipliers,
    run_gd_pl_suite,
    run_one_iter_suite,
    sample_gd_pl,
    sample_one_iter,
    sos_coefficients,
    verify_descent_chain,
)
from .sdp_backend import Status, default_tol, export_interchange, solve_pep

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3
CHAIN_TOL = 1e-9


def fmt(x: float) -> str:
    return f"{x:.17g}"


def _tol(args) -> float:
    if args.tol is not None:
        if not 0.0 < args.tol <= 1e-2:
            raise ParameterError(f"--tol must lie in (0, 1e-2], got {args.tol}")
        return args.tol
    return default_tol()


def parse_grid(text: str, integer: bool = False) -> list:
    """``start:step:stop`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if not text:
        return []
    conv = int if integer else float
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ParameterError(f"grid {text!r} must look like start:step:stop")
            start, step, stop = (float(p) for p in parts)
            if step <= 0:
                raise ParameterError(f"grid step must be > 0, got {step}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            vals = [start + i * step for i in range(max(count, 0))]
            return [conv(round(v)) if integer else round(v, 12) for v in vals]
        return [conv(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ParameterError(f"bad grid {text!r}: {exc}") from None


def _alpha(text: str) -> float:
    """Accepts fractions such as ``1/3``."""
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


# -- PEP solving ---------------------------------------------------------------

def _problem(mu1, L1, mu2, L2, N, alpha, delta, eta=None):
    return build_pep(CurvatureClass(mu1, L1), CurvatureClass(mu2, L2), MethodConfig(N, alpha), delta, eta)


def _solve_value(params: tuple) -> float:
    """Worker for sweeps: ``params`` is ``(problem args, tol)``."""
    pargs, tol = params
    _, _, res = solve_pep(_problem(*pargs), tol=tol)
    if res.status is not Status.OPTIMAL:
        raise SolverFailure(f"status {res.status.value} at {pargs}")
    return res.opt_value


def cmd_pep_solve(args) -> int:
    tol = _tol(args)
    problem = _problem(args.mu1, args.L1, args.mu2, args.L2, args.N, args.alpha, args.delta, args.pl_eta)
    basis, instance, res = solve_pep(problem, tol=tol)
    if args.export_sdpa:
        export_interchange(instance, args.export_sdpa)
    if res.status is not Status.OPTIMAL:
        print(f"status {res.status.value}")
        return EXIT_SOLVER
    print(f"OPT {fmt(res.opt_value)}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mu1", "L1", "mu2", "L2", "N", "alpha", "delta", "OPT_Value"])
            w.writerow([fmt(v) for v in (args.mu1, args.L1, args.mu2, args.L2)]
                       + [args.N, fmt(args.alpha), fmt(args.delta), fmt(res.opt_value)])
    if args.certificate is not None:
        cert = reconstruct_certificate(problem, basis, res, args.rank_tol)
        print(f"certificate rank {cert.dimension} max_interp_residual {fmt(cert.max_residual)}")
        if args.certificate != "-":
            dump = {
                "rank": cert.dimension,
                "max_residual": cert.max_residual,
                "triples": {
                    f"f{ell}": {str(u): {"point": t.point.tolist(), "grad": t.grad.tolist(), "value": t.value}
                                for u, t in triples.items()}
                    for ell, triples in ((1, cert.triples1), (2, cert.triples2))
                },
            }
            Path(args.certificate).write_text(json.dumps(dump, indent=1) + "\n")
    return EXIT_OK


def _write_csv_atomic(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def alpha_filename(alpha: float) -> str:
    return f"OPT_alpha{int(round(alpha * 100)):03d}.csv"


def cmd_sweep(args) -> int:
    tol = _tol(args)
    base = (args.mu1, args.L1, args.mu2, args.L2)
    if args.sweep == "alpha":
        grid = parse_grid(args.grid)
        if not grid:
            raise ParameterError("empty alpha grid")
        if args.N is None:
            raise ParameterError("--N is required for an alpha sweep")
        tasks = [((*base, args.N, a, args.delta, args.pl_eta), tol) for a in grid]
        jobs = {"alpha": (grid, tasks)}
    else:
        grid = parse_grid(args.grid, integer=True)
        if not grid:
            raise ParameterError("empty N grid")
        alphas = args.alpha or [0.0]
        jobs = {a: (grid, [((*base, n, a, args.delta, args.pl_eta), tol) for n in grid]) for a in alphas}
    # validate every grid point before solving anything
    for _, tasks in jobs.values():
        for pargs, _ in tasks:
            _problem(*pargs)

    flat = [t for _, tasks in jobs.values() for t in tasks]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            values = list(pool.map(_solve_value, flat))
    else:
        values = [_solve_value(t) for t in flat]

    pos = 0
    for key, (grid, tasks) in jobs.items():
        vals = values[pos:pos + len(tasks)]
        pos += len(tasks)
        rows = [[g if isinstance(g, int) else fmt(g), fmt(v)] for g, v in zip(grid, vals)]
        if args.sweep == "alpha":
            header, name = ["alpha", "OPT_Value"], None
        else:
            header, name = ["N", "OPT_Value"], alpha_filename(key)
        if args.out and (args.sweep == "alpha" or len(jobs) == 1):
            path = Path(args.out)
        else:
            path = Path(args.out_dir or ".") / (name or "OPT_alpha_sweep.csv")
        _write_csv_atomic(path, header, rows)
        print(f"wrote {path}")
        for r in rows:
            print(",".join(str(c) for c in r))
    return EXIT_OK


def cmd_bound(args) -> int:
    if args.which == "dca":
        b = bounds.dca_sublinear_bound(args.mu, args.L, args.N, args.alpha, args.delta)
        print(f"bound {fmt(b.value)}")
    elif args.which == "gd-pl":
        r = bounds.gd_pl_rate(args.kappa, args.alpha)
        print(f"beta {fmt(r.beta)}")
    else:
        a, rate, step = bounds.optimal_boost(args.kappa)
        print(f"alpha_star {fmt(a)}")
        print(f"rate {fmt(rate)}")
        print(f"step_times_L {fmt(step)}")
    return EXIT_OK


def _chain_suite(samples: int, seed: int, max_dim: int) -> tuple[float, float]:
    """Random in-class quadratic runs; returns (min chain slack, min descent slack)."""
    rng = np.random.default_rng(seed)
    mu, L = 0.5, 1.0
    min_chain = min_dd = math.inf
    for _ in range(samples):
        q = random_quadratic_dc(rng, int(rng.integers(1, max_dim + 1)), mu, L)
        kappa = mu / L
        alpha = float(rng.uniform(0.0, bounds.max_boost(kappa)))
        alpha = alpha if alpha > 0 else bounds.max_boost(kappa)
        inst = q.instance()
        tr = run_bdca(inst, 3.0 * rng.standard_normal(q.dim), 5, alpha)
        per_step, final = verify_descent_chain(tr, mu, L, alpha)
        min_chain = min(min_chain, min(per_step), final)
        min_dd = min(min_dd, check_descent_direction(tr, inst.grad_f, mu))
    return min_chain, min_dd


def cmd_verify(args) -> int:
    if args.samples < 1:
        raise ParameterError(f"--samples must be >= 1, got {args.samples}")
    if args.dims < 1:
        raise ParameterError(f"--dims must be >= 1, got {args.dims}")
    dims = range(1, args.dims + 1)
    which = ["one-iter", "gd-pl", "chain"] if args.which == "all" else [args.which]
    ok = True
    for name in which:
        if name == "one-iter":
            rep = run_one_iter_suite(args.samples, args.seed, dims)
            rng = np.random.default_rng(args.seed)
            lo_lam = lo_c = math.inf
            for _ in range(args.samples):
                s = sample_one_iter(rng, dims)
                lo_lam = min(lo_lam, *one_iter_multipliers(s.mu, s.L, s.alpha).as_tuple())
                lo_c = min(lo_c, *sos_coefficients(s.mu, s.L, s.alpha))
            good = rep.ok and lo_lam >= 0 and lo_c >= 0
            print(f"one-iter samples {rep.samples} max_residual {fmt(rep.max_residual)} "
                  f"max_residual_over_scale {fmt(rep.max_ratio)} min_multiplier {fmt(lo_lam)} "
                  f"min_sos_coefficient {fmt(lo_c)} {'PASS' if good else 'FAIL'}")
        elif name == "gd-pl":
            rep = run_gd_pl_suite(args.samples, args.seed, dims)
            rng = np.random.default_rng(args.seed)
            lo = math.inf
            for _ in range(args.samples):
                kw = sample_gd_pl(rng, dims)
                lo = min(lo, *gd_pl_multipliers(kw["eta"] / kw["L"], kw["alpha"]))
            # the PL multiplier is zero at the end of the range; allow rounding there
            good = rep.ok and lo >= -1e-12
            print(f"gd-pl samples {rep.samples} max_residual {fmt(rep.max_residual)} "
                  f"max_residual_over_scale {fmt(rep.max_ratio)} min_multiplier {fmt(lo)} "
                  f"{'PASS' if good else 'FAIL'}")
        else:
            min_chain, min_dd = _chain_suite(args.samples, args.seed, args.dims)
            good = min_chain >= -CHAIN_TOL and min_dd >= -CHAIN_TOL
            print(f"chain samples {args.samples} min_chain_slack {fmt(min_chain)} "
                  f"min_descent_slack {fmt(min_dd)} {'PASS' if good else 'FAIL'}")
        ok = ok and good
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_run(args) -> int:
    try:
        q = QuadraticDC.load(args.instance)
    except OSError as exc:
        raise ParameterError(f"cannot read {args.instance}: {exc}") from exc
    try:
        x1 = np.array([float(v) for v in args.x1.split(",")])
    except ValueError:
        raise ParameterError(f"--x1 must be comma-separated numbers, got {args.x1!r}") from None
    if x1.shape != (q.dim,):
        raise DimensionMismatch(f"--x1 has {x1.size} entries, instance dimension is {q.dim}")
    inst = q.instance()
    tr = run_bdca(inst, x1, args.N, args.alpha)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["k", "f", "grad_gap_sq"])
        for k, (f, r) in enumerate(zip(tr.f_values, tr.grad_gap_sq), start=1):
            w.writerow([k, fmt(f), fmt(r)])
    finally:
        if out is not sys.stdout:
            out.close()
    if args.check_bounds:
        if inst.f_star is None:
            raise ParameterError("--check-bounds needs an instance whose f is bounded below")
        delta = tr.f_values[0] - inst.f_star
        if delta <= 0:
            print("check-bounds trivial: start is optimal", file=sys.stderr)
            return EXIT_OK
        problem = build_pep(q.class1, q.class2, MethodConfig(args.N, args.alpha), 1.0)
        _, _, res = solve_pep(problem, tol=_tol(args))
        if res.status is not Status.OPTIMAL:
            raise SolverFailure(f"PEP status {res.status.value}")
        # the worst case scales linearly with the initial gap
        opt = delta * res.opt_value
        slack = 1e-6 * opt + 10 * res.tol * (1.0 + delta)
        verdict = tr.measure <= opt + slack
        print(f"measure {fmt(tr.measure)} pep_opt {fmt(opt)} {'PASS' if verdict else 'FAIL'}", file=sys.stderr)
        if not verdict:
            raise BoundViolation("trajectory measure exceeds the worst-case value")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _add_classes(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mu1", type=float, required=True)
    p.add_argument("--L1", type=float, required=True)
    p.add_argument("--mu2", type=float, required=True)
    p.add_argument("--L2", type=float, required=True)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--pl-eta", type=float, default=None)
    p.add_argument("--tol", type=float, default=None, help="solver tolerance (default $DCAPEP_TOL or 1e-8)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcapep", description="Worst-case analysis workbench for DCA and boosted DCA.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pep-solve", help="solve one worst-case problem")
    _add_classes(p)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--alpha", type=_alpha, default=0.0)
    p.add_argument("--out", help="write the parameters and OPT_Value as a one-row CSV")
    p.add_argument("--export-sdpa", metavar="PATH")
    p.add_argument("--certificate", nargs="?", const="-", metavar="PATH",
                   help="recover a worst-case instance; dump it as JSON when PATH is given")
    p.add_argument("--rank-tol", type=float, default=DEFAULT_RANK_TOL)
    p.set_defaults(func=cmd_pep_solve)

    p = sub.add_parser("sweep", help="solve a grid of problems and write CSV")
    _add_classes(p)
    p.add_argument("--sweep", choices=["alpha", "N"], required=True)
    p.add_argument("--grid", required=True, help="start:step:stop or comma list")
    p.add_argument("--N", type=int, help="iterations (alpha sweeps)")
    p.add_argument("--alpha", type=_alpha, nargs="*", help="boost values (N sweeps; one file each)")
    p.add_argument("--out", help="output CSV (alpha sweep, or N sweep with one alpha)")
    p.add_argument("--out-dir", help="directory for OPT_alphaXXX.csv files")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bound", help="evaluate closed-form bounds")
    bsub = p.add_subparsers(dest="which", required=True)
    b = bsub.add_parser("dca")
    b.add_argument("--mu", type=float, required=True)
    b.add_argument("--L", type=float, required=True)
    b.add_argument("--N", type=int, required=True)
    b.add_argument("--alpha", type=_alpha, default=0.0)
    b.add_argument("--delta", type=float, default=1.0)
    b = bsub.add_parser("gd-pl")
    b.add_argument("--kappa", type=float, required=True)
    b.add_argument("--alpha", type=_alpha, required=True)
    b = bsub.add_parser("optimal-boost")
    b.add_argument("--kappa", type=float, required=True)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("verify", help="check the proof identities on random samples")
    p.add_argument("--which", choices=["one-iter", "gd-pl", "chain", "all"], default="all")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--dims", type=int, default=8, help="largest sample dimension")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run", help="run boosted DCA on a quadratic instance file")
    p.add_argument("--instance", required=True)
    p.add_argument("--x1", required=True, help="comma-separated start point")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--alpha", type=_alpha, default=0.0)
    p.add_argument("--out")
    p.add_argument("--check-bounds", action="store_true")
    p.add_argument("--tol", type=float, default=None)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except BoundViolation as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ParameterError, DimensionMismatch, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DCAPEPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
