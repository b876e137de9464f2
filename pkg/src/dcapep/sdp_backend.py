"""Solving and serialising :class:`~dcapep.gram_builder.SDPInstance` objects.

The default backend is cvxpy driving Clarabel (an interior-point conic
solver).  The SDPA sparse writer/reader lets an instance be re-solved by any
other SDP code; :func:`solve_sdpa` does that in-process with a different
solver (CVXOPT by default) so cross-checks need no external tooling.

SDPA layout
-----------
An SDPA file describes ``max F0 . Y  s.t.  Fi . Y = ci,  Y >= 0`` over a
block-diagonal ``Y``.  We write one PSD block (the Gram matrix) and one
diagonal block holding, in order: the values ``F+`` and ``F-`` (free
variables split in two), ``t+`` and ``t-``, then one slack per inequality
row.  Comment lines (starting with a double quote) carry a layout header and
the constraint labels, one per constraint, in row order.
"""

from __future__ import annotations

import enum
import io
import os
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DCAPEPError, ParameterError, SolverFailure
from .gram_builder import EQ, LE, Row, SDPInstance
from .pep_model import ConstraintLabel

DEFAULT_TOL = 1e-8
TOL_ENV = "DCAPEP_TOL"


def default_tol() -> float:
    """Solver tolerance, overridable through the ``DCAPEP_TOL`` variable."""
    raw = os.environ.get(TOL_ENV)
    if not raw:
        return DEFAULT_TOL
    try:
        tol = float(raw)
    except ValueError:
        raise ParameterError(f"{TOL_ENV}={raw!r} is not a number") from None
    _check_tol(tol)
    return tol


def _check_tol(tol: float) -> None:
    if not 0.0 < tol <= 1e-2:
        raise ParameterError(f"solver tolerance must lie in (0, 1e-2], got {tol}")


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_TROUBLE = "NumericalTrouble"


@dataclass
class SolveResult:
    status: Status
    opt_value: float
    gram: np.ndarray
    values: np.ndarray
    epi: float
    duals: dict[ConstraintLabel, float]
    gap: float
    dual_value: float = float("nan")
    tol: float = DEFAULT_TOL
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


_CVXPY_STATUS = {
    "optimal": Status.OPTIMAL,
    "optimal_inaccurate": Status.NUMERICAL_TROUBLE,
    "infeasible": Status.INFEASIBLE,
    "infeasible_inaccurate": Status.INFEASIBLE,
    "unbounded": Status.UNBOUNDED,
    "unbounded_inaccurate": Status.UNBOUNDED,
}


def _solver_options(solver: str, tol: float) -> dict:
    if solver == "CLARABEL":
        return dict(
            tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=400,
            iterative_refinement_reltol=1e-16, iterative_refinement_abstol=1e-16,
            iterative_refinement_max_iter=50, iterative_refinement_stop_ratio=1.5,
        )
    if solver == "CVXOPT":
        return dict(abstol=tol, reltol=tol, feastol=tol, max_iters=400, kktsolver="ldl")
    if solver == "SCS":
        return dict(eps_abs=tol, eps_rel=tol, max_iters=200_000)
    return {}


def solve(instance: SDPInstance, tol: float | None = None, solver: str = "CLARABEL") -> SolveResult:
    """Maximise the epigraph scalar of ``instance``.

    Returns a result for optimal, infeasible and unbounded outcomes; raises
    :class:`SolverFailure` when the backend gives up, or when it only
    reaches reduced accuracy and the measured gap or residual exceeds ten
    times ``tol`` (gap relative to ``1 + |opt|``, residual relative to the
    largest primal entry).  Clarabel is retried with a couple of more
    conservative settings before giving up.
    """
    import cvxpy as cp

    tol = default_tol() if tol is None else float(tol)
    _check_tol(tol)
    n, v, m = instance.gram_dim, instance.value_dim, len(instance.rows)
    G = cp.Variable((n, n), PSD=True)
    t = cp.Variable()
    F = cp.Variable(v) if v else None

    A = instance.A.reshape(m, n * n)
    # rows with no coefficients (e.g. interpolation between merged points)
    # carry no information and would leave the slack cone without interior
    trivial = ~(np.any(A != 0, axis=1) | np.any(instance.B != 0, axis=1) | (instance.e != 0))
    broken = trivial & ((instance.rhs < 0) | ((instance.rhs != 0) & np.array([s == EQ for s in instance.senses])))
    if broken.any():
        nan = float("nan")
        return SolveResult(Status.INFEASIBLE, -np.inf, np.full((n, n), nan), np.full(v, nan), nan,
                           {}, nan, nan, tol, {"solver": solver, "raw_status": "presolve"})
    le = np.array([s == LE for s in instance.senses], dtype=bool) & ~trivial
    eq = np.array([s == EQ for s in instance.senses], dtype=bool) & ~trivial

    def lhs(mask):
        expr = A[mask] @ cp.vec(G, order="F") + instance.e[mask] * t
        if F is not None:
            expr = expr + instance.B[mask] @ F
        return expr

    cons = []
    le_con = eq_con = None
    if le.any():
        le_con = lhs(le) <= instance.rhs[le]
        cons.append(le_con)
    if eq.any():
        eq_con = lhs(eq) == instance.rhs[eq]
        cons.append(eq_con)
    prob = cp.Problem(cp.Maximize(t), cons)
    failure = None
    for attempt, extra in enumerate(_RETRY_OPTIONS.get(solver, ({},))):
        try:
            return _run(prob, instance, G, F, t, le_con, eq_con, le, eq, solver, tol, extra, attempt)
        except SolverFailure as exc:
            failure = exc
    raise failure


# Interior-point runs on these SDPs occasionally stall just short of 1e-8;
# shorter steps or skipping equilibration usually get there.
_RETRY_OPTIONS = {
    "CLARABEL": ({}, {"max_step_fraction": 0.95}, {"equilibrate_enable": False}),
}


def _run(prob, instance, G, F, t, le_con, eq_con, le, eq, solver, tol, extra, attempt) -> SolveResult:
    import cvxpy as cp

    n, v, m = instance.gram_dim, instance.value_dim, len(instance.rows)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prob.solve(solver=solver, **_solver_options(solver, tol), **extra)
    except cp.error.SolverError as exc:
        raise SolverFailure(f"{solver} failed: {exc}", {"solver": solver}) from exc

    status = _CVXPY_STATUS.get(prob.status, Status.NUMERICAL_TROUBLE)
    info = {"solver": solver, "raw_status": prob.status, "attempt": attempt}
    stats = getattr(prob, "solver_stats", None)
    if stats is not None:
        info["iterations"] = stats.num_iters
        info["solve_time"] = stats.solve_time
    if status in (Status.INFEASIBLE, Status.UNBOUNDED):
        nan = float("nan")
        opt = -np.inf if status is Status.INFEASIBLE else np.inf
        return SolveResult(status, opt, np.full((n, n), nan), np.full(v, nan), nan, {}, nan, nan, tol, info)

    gram = None if G.value is None else 0.5 * (G.value + G.value.T)
    if gram is None or t.value is None:
        raise SolverFailure(f"{solver} returned no primal point (status {prob.status})", info)
    values = np.asarray(F.value, float) if F is not None else np.zeros(0)
    epi = float(t.value)

    y = np.zeros(m)
    if le_con is not None:
        y[le] = np.asarray(le_con.dual_value, float).reshape(-1)
    if eq_con is not None:
        y[eq] = np.asarray(eq_con.dual_value, float).reshape(-1)
    dual_value = float(instance.rhs @ y)
    gap = abs(dual_value - epi)
    duals = {lab: float(val) for lab, val in zip(instance.labels, y)}
    result = SolveResult(status, epi, gram, values, epi, duals, gap, dual_value, tol, info)

    if status is Status.NUMERICAL_TROUBLE:
        # Clarabel reports "almost solved" when it stalls a little short of
        # the requested accuracy; keep such answers only if our own gap and
        # residual measurements are within an order of magnitude of tol.
        residual = check_solution(instance, result)
        scale = 1.0 + max(float(np.abs(gram).max(initial=0.0)), float(np.abs(values).max(initial=0.0)))
        info.update(gap=gap, opt_value=epi, residual=residual, scale=scale)
        if gap <= 10 * tol * (1.0 + abs(epi)) and residual <= 10 * tol * scale:
            result.status = Status.OPTIMAL
            info["inaccurate"] = True
        else:
            raise SolverFailure(f"{solver} ran into numerical trouble (status {prob.status})", info)
    return result


def check_solution(instance: SDPInstance, result: SolveResult) -> float:
    """Largest violation among the rows and the PSD cone at ``result``."""
    lhs = instance.row_values(result.gram, result.values, result.epi)
    diff = lhs - instance.rhs
    worst = 0.0
    for d, sense in zip(diff, instance.senses):
        worst = max(worst, abs(d) if sense == EQ else max(d, 0.0))
    if result.gram.size:
        w_min = float(np.linalg.eigvalsh(0.5 * (result.gram + result.gram.T))[0])
        worst = max(worst, -w_min)
    return float(worst)


def dual_slack_matrix(instance: SDPInstance, result: SolveResult) -> np.ndarray:
    """``sum_j y_j A_j``; dual feasibility requires it to be PSD."""
    y = np.array([result.duals.get(lab, 0.0) for lab in instance.labels])
    return np.einsum("k,kij->ij", y, instance.A)


# -- SDPA sparse format -------------------------------------------------------

_HEADER = "dcapep-sdpa"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def export_interchange(instance: SDPInstance, destination) -> None:
    """Write ``instance`` as an SDPA sparse (``.dat-s``) file.

    ``destination`` is a path or a writable text stream.
    """
    if isinstance(destination, (str, os.PathLike)):
        try:
            with open(destination, "w", encoding="utf-8") as fh:
                _write_sdpa(instance, fh)
        except OSError as exc:
            raise DCAPEPError(f"cannot write {destination}: {exc}") from exc
    else:
        _write_sdpa(instance, destination)


def _write_sdpa(instance: SDPInstance, fh) -> None:
    n, v, m = instance.gram_dim, instance.value_dim, len(instance.rows)
    le_rows = [i for i, s in enumerate(instance.senses) if s == LE]
    slack_of = {row: k for k, row in enumerate(le_rows)}
    diag = 2 * v + 2 + len(le_rows)
    t_pos = 2 * v + 1  # 1-based

    fh.write(f'"{_HEADER} gram_dim={n} value_dim={v} rows={m}\n')
    for lab in instance.labels:
        fh.write(f'"label {lab}\n')
    fh.write(f"{m}\n2\n{n} {-diag}\n")
    fh.write(" ".join(_fmt(c) for c in instance.rhs) + "\n")
    fh.write(f"0 2 {t_pos} {t_pos} 1\n")
    fh.write(f"0 2 {t_pos + 1} {t_pos + 1} -1\n")
    iu, ju = np.triu_indices(n)
    for i, row in enumerate(instance.rows):
        mat = i + 1
        for a, b in zip(iu, ju):
            val = row.gram[a, b]
            if val != 0.0:
                fh.write(f"{mat} 1 {a + 1} {b + 1} {_fmt(val)}\n")
        for j in range(v):
            val = row.values[j]
            if val != 0.0:
                fh.write(f"{mat} 2 {j + 1} {j + 1} {_fmt(val)}\n")
                fh.write(f"{mat} 2 {v + j + 1} {v + j + 1} {_fmt(-val)}\n")
        if row.epi != 0.0:
            fh.write(f"{mat} 2 {t_pos} {t_pos} {_fmt(row.epi)}\n")
            fh.write(f"{mat} 2 {t_pos + 1} {t_pos + 1} {_fmt(-row.epi)}\n")
        if i in slack_of:
            s = t_pos + 2 + slack_of[i]
            fh.write(f"{mat} 2 {s} {s} 1\n")


@dataclass
class SDPAProblem:
    """Dense in-memory copy of an SDPA file: ``max F[0].Y s.t. F[i].Y = c[i]``."""

    c: np.ndarray
    block_sizes: tuple[int, ...]
    F: list[list[np.ndarray]]
    comments: list[str] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.c)

    @property
    def labels(self) -> list[str]:
        return [c[len("label "):] for c in self.comments if c.startswith("label ")]

    @property
    def header(self) -> dict[str, int]:
        for c in self.comments:
            if c.startswith(_HEADER):
                return {k: int(v) for k, v in (tok.split("=") for tok in c.split()[1:])}
        return {}


def read_sdpa(source) -> SDPAProblem:
    """Parse an SDPA sparse file (path or text stream)."""
    if isinstance(source, (str, os.PathLike)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    comments = []
    tokens: list[str] = []
    for line in text.splitlines():
        s = line.strip()
        if not s:
            continue
        if s[0] in '"*':
            comments.append(s[1:])
            continue
        tokens.extend(t for t in re.split(r"[\s,{}()]+", s) if t)
    pos = 0

    def take(k):
        nonlocal pos
        out = tokens[pos:pos + k]
        pos += k
        if len(out) < k:
            raise DCAPEPError("truncated SDPA file")
        return out

    m = int(take(1)[0])
    nblocks = int(take(1)[0])
    sizes = tuple(int(float(x)) for x in take(nblocks))
    c = np.array([float(x) for x in take(m)])
    F = [[np.zeros((abs(s), abs(s))) for s in sizes] for _ in range(m + 1)]
    while pos < len(tokens):
        mat, blk, i, j, val = take(5)
        mat, blk, i, j, val = int(mat), int(blk) - 1, int(i) - 1, int(j) - 1, float(val)
        F[mat][blk][i, j] = val
        F[mat][blk][j, i] = val
    return SDPAProblem(c, sizes, F, comments)


def sdpa_to_instance(problem: SDPAProblem) -> SDPInstance:
    """Invert :func:`export_interchange` for files carrying our layout header."""
    head = problem.header
    if not head:
        raise DCAPEPError("SDPA file has no dcapep layout header")
    n, v = head["gram_dim"], head["value_dim"]
    t_idx = 2 * v
    labels = problem.labels
    rows = []
    for i in range(problem.m):
        gram, diag = problem.F[i + 1][0], np.diag(problem.F[i + 1][1])
        sense = LE if np.any(diag[t_idx + 2:] != 0.0) else EQ
        rows.append(Row(ConstraintLabel.parse(labels[i]), gram.copy(), diag[:v].copy(),
                        float(diag[t_idx]), float(problem.c[i]), sense))
    return SDPInstance(n, v, tuple(rows))


def solve_sdpa(problem: SDPAProblem, tol: float = 1e-7, solver: str = "CVXOPT") -> float:
    """Solve a generic SDPA problem with cvxpy and return its optimal value."""
    import cvxpy as cp

    blocks = []
    for s in problem.block_sizes:
        blocks.append(cp.Variable((s, s), PSD=True) if s > 0 else cp.Variable(-s, nonneg=True))

    def inner(mats):
        terms = []
        for Fb, Y, s in zip(mats, blocks, problem.block_sizes):
            if s > 0:
                if np.any(Fb):
                    terms.append(cp.sum(cp.multiply(Fb, Y)))
            else:
                d = np.diag(Fb)
                if np.any(d):
                    terms.append(d @ Y)
        return cp.sum(cp.hstack(terms)) if terms else cp.Constant(0.0)

    cons = [inner(problem.F[i + 1]) == problem.c[i] for i in range(problem.m)]
    prob = cp.Problem(cp.Maximize(inner(problem.F[0])), cons)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        prob.solve(solver=solver, **_solver_options(solver, tol))
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise SolverFailure(f"{solver} status {prob.status} on SDPA problem", {"solver": solver})
    return float(prob.value)


def export_to_string(instance: SDPInstance) -> str:
    buf = io.StringIO()
    _write_sdpa(instance, buf)
    return buf.getvalue()


def solve_pep(problem, tol: float | None = None, solver: str = "CLARABEL"):
    """Compile ``problem`` with the reduced basis and solve it.

    Returns ``(basis, instance, result)``.
    """
    from .gram_builder import compile_pep

    basis, instance = compile_pep(problem)
    return basis, instance, solve(instance, tol=tol, solver=solver)
