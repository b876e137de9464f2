"""Gram-matrix lifting of a :class:`~dcapep.pep_model.PEPProblem` into an SDP.

Every vector in the problem (points and subgradients) is written as a
coefficient row over an independent basis, so that inner products become
linear functions of the Gram matrix of that basis.  The equality links are
used to shrink the basis:

* ``x1 = 0`` (the problem only depends on point differences),
* ``g1(y^k)`` and ``g2(x^k)`` share one basis vector,
* ``x^{k+1} = (1 + alpha) y^k - alpha x^k`` is substituted away.

The resulting SDP maximises an epigraph scalar ``t`` over the Gram matrix
``G`` (PSD), the vector of function values ``F`` and ``t``, subject to rows
``<A, G> + b.F + e t  (<= or ==)  rhs``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import FactorizationError, InternalError, ParameterError
from .pep_model import (
    ConstraintKind,
    ConstraintLabel,
    DiscreteTriple,
    Measure,
    PEPProblem,
    PointLabel,
    X,
    interpolation_residual,
)

LE = "LE"
EQ = "EQ"

DEFAULT_RANK_TOL = 1e-7


def _sym(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix ``M`` with ``<M, G> = <a, b>`` for symmetric ``G``."""
    return 0.5 * (np.outer(a, b) + np.outer(b, a))


def shared_name(k: int) -> str:
    return f"g1(y{k})=g2(x{k})"


@dataclass(frozen=True)
class BasisMap:
    """Coefficient rows of every symbolic vector over the basis.

    ``expansion`` is keyed by ``"x3"``, ``"y1"``, ``"g1(x2)"``, ``"g2(y1)"``
    and so on; ``value_names`` lists the function values that are decision
    variables (``"f1(x1)"``-style).  ``value_alias`` maps a value name onto
    the variable that carries it when two points coincide.  With an exact
    ``f1`` there are no ``f1`` value variables; those values are Gram
    quadratics instead.
    """

    basis: tuple[str, ...]
    expansion: dict[str, np.ndarray]
    value_names: tuple[str, ...]
    N: int
    alpha: float
    f1_exact_L: float | None = None
    value_alias: dict[str, str] = field(default_factory=dict)

    @cached_property
    def value_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.value_names)}

    @property
    def size(self) -> int:
        return len(self.basis)

    def row(self, name: str) -> np.ndarray:
        try:
            return self.expansion[name]
        except KeyError:
            raise InternalError(f"vector {name!r} has no expansion over the basis") from None

    def point(self, u: PointLabel) -> np.ndarray:
        return self.row(str(u))

    def grad(self, ell: int, u: PointLabel) -> np.ndarray:
        return self.row(f"g{ell}({u})")

    def value(self, ell: int, u: PointLabel) -> tuple[np.ndarray, np.ndarray]:
        """``(gram_coeff, value_coeff)`` representing ``f_ell(u)``."""
        n, m = self.size, len(self.value_names)
        if ell == 1 and self.f1_exact_L is not None:
            p = self.point(u)
            return 0.5 * self.f1_exact_L * np.outer(p, p), np.zeros(m)
        name = f"f{ell}({u})"
        name = self.value_alias.get(name, name)
        if name not in self.value_index:
            raise InternalError(f"function value {name!r} is not a decision variable")
        vec = np.zeros(m)
        vec[self.value_index[name]] = 1.0
        return np.zeros((n, n)), vec


def assign_basis(problem: PEPProblem, gauge_fix: bool = False, merge_coincident: bool = False) -> BasisMap:
    """Pick the basis and expand every point and subgradient over it.

    With both flags off the basis has ``4N+2`` vectors: ``y^k``, ``g1(x^k)``,
    the shared ``g1(y^k) = g2(x^k)``, ``g2(y^k)`` and ``g2(x^{N+1})``.

    ``gauge_fix`` pins ``g2(x^1) = 0``.  Adding one linear function to both
    ``f1`` and ``f2`` changes neither the classes nor the iterates, so this
    is without loss of generality; without it every dual slack matrix has a
    common null vector and interior-point solvers lose several digits.

    ``merge_coincident`` applies at ``alpha = 0`` only, where ``x^{k+1}`` and
    ``y^k`` are the same point: their two interpolation rows then force equal
    subgradients and values, so those are identified outright.
    """
    N, alpha = problem.N, problem.alpha
    exact = problem.f1_exact
    merge = merge_coincident and alpha == 0.0
    names: list[str] = []
    if not exact:
        names += [f"y{k}" for k in range(1, N + 1)]
        names.append("g1(x1)")
        if not merge:
            names += [f"g1(x{k})" for k in range(2, N + 2)]
    names += [shared_name(k) for k in range(1, N + 1) if not (gauge_fix and k == 1)]
    if merge:
        names.append(f"g2(y{N})")
    else:
        names += [f"g2(y{k})" for k in range(1, N + 1)]
        names.append(f"g2(x{N + 1})")
    n = len(names)
    unit = {name: np.eye(n)[i] for i, name in enumerate(names)}
    if gauge_fix:
        unit[shared_name(1)] = np.zeros(n)

    exp: dict[str, np.ndarray] = {}
    L = problem.class1.L
    for k in range(1, N + 1):
        s = unit[shared_name(k)]
        exp[f"g1(y{k})"] = s
        exp[f"g2(x{k})"] = s
        # optimality of the subproblem: g1(y^k) = L y^k when f1 is (L/2)||.||^2
        exp[f"y{k}"] = s / L if exact else unit[f"y{k}"]
    if merge:
        for k in range(1, N):
            exp[f"g2(y{k})"] = unit[shared_name(k + 1)]
        exp[f"g2(y{N})"] = unit[f"g2(y{N})"]
        exp[f"g2(x{N + 1})"] = unit[f"g2(y{N})"]
    else:
        for k in range(1, N + 1):
            exp[f"g2(y{k})"] = unit[f"g2(y{k})"]
        exp[f"g2(x{N + 1})"] = unit[f"g2(x{N + 1})"]
    exp["x1"] = np.zeros(n)
    for k in range(1, N + 1):
        exp[f"x{k + 1}"] = (1.0 + alpha) * exp[f"y{k}"] - alpha * exp[f"x{k}"]
    for k in range(1, N + 2):
        if exact:
            exp[f"g1(x{k})"] = L * exp[f"x{k}"]
        elif merge and k > 1:
            exp[f"g1(x{k})"] = exp[f"g1(y{k - 1})"]
        else:
            exp[f"g1(x{k})"] = unit[f"g1(x{k})"]

    ells = (2,) if exact else (1, 2)
    alias = {}
    if merge:
        alias = {f"f{ell}(x{k + 1})": f"f{ell}(y{k})" for ell in ells for k in range(1, N + 1)}
    value_names = tuple(
        f"f{ell}({u})" for ell in ells for u in problem.points if f"f{ell}({u})" not in alias)
    return BasisMap(
        basis=tuple(names),
        expansion=exp,
        value_names=value_names,
        N=N,
        alpha=alpha,
        f1_exact_L=L if exact else None,
        value_alias=alias,
    )


@dataclass(frozen=True)
class Row:
    label: ConstraintLabel
    gram: np.ndarray
    values: np.ndarray
    epi: float
    rhs: float
    sense: str = LE


@dataclass(frozen=True)
class SDPInstance:
    """``max t`` subject to labelled affine rows in ``(G, F, t)`` and ``G >= 0``."""

    gram_dim: int
    value_dim: int
    rows: tuple[Row, ...]
    eliminated: tuple[ConstraintLabel, ...] = ()
    value_names: tuple[str, ...] = ()
    basis_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def labels(self) -> tuple[ConstraintLabel, ...]:
        return tuple(r.label for r in self.rows)

    @cached_property
    def A(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, self.gram_dim, self.gram_dim))
        return np.stack([r.gram for r in self.rows])

    @cached_property
    def B(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, self.value_dim))
        return np.stack([r.values for r in self.rows])

    @cached_property
    def e(self) -> np.ndarray:
        return np.array([r.epi for r in self.rows], dtype=float)

    @cached_property
    def rhs(self) -> np.ndarray:
        return np.array([r.rhs for r in self.rows], dtype=float)

    @cached_property
    def senses(self) -> tuple[str, ...]:
        return tuple(r.sense for r in self.rows)

    def row_values(self, gram: np.ndarray, values: np.ndarray, epi: float) -> np.ndarray:
        """Left-hand sides of all rows at the given point."""
        return (
            np.einsum("kij,ij->k", self.A, gram) + self.B @ np.asarray(values, float) + self.e * epi
        )


def _interp_row(problem: PEPProblem, basis: BasisMap, lab: ConstraintLabel) -> Row:
    cls = problem.class1 if lab.ell == 1 else problem.class2
    mu, L = cls.mu, cls.L
    xu, xv = basis.point(lab.u), basis.point(lab.v)
    gu, gv = basis.grad(lab.ell, lab.u), basis.grad(lab.ell, lab.v)
    dg, dx = gu - gv, xu - xv
    quad = np.outer(dg, dg) / L + mu * np.outer(dx, dx) - (2.0 * mu / L) * _sym(gv - gu, xv - xu)
    gram = quad / (2.0 * (1.0 - mu / L)) + _sym(gv, xu - xv)
    Gu, Fu = basis.value(lab.ell, lab.u)
    Gv, Fv = basis.value(lab.ell, lab.v)
    return Row(lab, gram - Gu + Gv, Fv - Fu, 0.0, 0.0)


def _objective_gap(basis: BasisMap, u: PointLabel) -> tuple[np.ndarray, np.ndarray]:
    """Representation of ``f1(u) - f2(u)`` (with ``f* = 0``)."""
    G1, F1 = basis.value(1, u)
    G2, F2 = basis.value(2, u)
    return G1 - G2, F1 - F2


def _grad_gap_sq(basis: BasisMap, u: PointLabel) -> np.ndarray:
    d = basis.grad(1, u) - basis.grad(2, u)
    return np.outer(d, d)


def emit_sdp(problem: PEPProblem, basis: BasisMap) -> SDPInstance:
    """Turn every constraint descriptor of ``problem`` into an SDP row."""
    if basis.N != problem.N or basis.alpha != problem.alpha:
        raise InternalError("basis was built for a different problem")
    rows: list[Row] = []
    eliminated: list[ConstraintLabel] = []
    for lab in problem.constraint_labels:
        kind = lab.kind
        if kind is ConstraintKind.INTERP:
            rows.append(_interp_row(problem, basis, lab))
        elif kind in (ConstraintKind.GRAD_LINK, ConstraintKind.STEP_LINK):
            eliminated.append(lab)
        elif kind is ConstraintKind.DESCENT_LB:
            Gf, Ff = _objective_gap(basis, lab.u)
            gram = _grad_gap_sq(basis, lab.u) / (2.0 * problem.descent_curvature) - Gf
            rows.append(Row(lab, gram, -Ff, 0.0, 0.0))
        elif kind is ConstraintKind.INIT_GAP:
            Gf, Ff = _objective_gap(basis, X(1))
            rows.append(Row(lab, Gf, Ff, 0.0, problem.delta))
        elif kind is ConstraintKind.PL:
            Gf, Ff = _objective_gap(basis, lab.u)
            gram = Gf - _grad_gap_sq(basis, lab.u) / (2.0 * problem.pl_modulus)
            rows.append(Row(lab, gram, Ff, 0.0, 0.0))
        elif kind is ConstraintKind.OBJ_EPI:
            if problem.measure is Measure.MIN_GRAD_DIFF_NORM_SQ:
                rows.append(Row(lab, -_grad_gap_sq(basis, X(lab.k)), np.zeros(len(basis.value_names)), 1.0, 0.0))
            else:
                Gf, Ff = _objective_gap(basis, X(lab.k))
                rows.append(Row(lab, -Gf, -Ff, 1.0, 0.0))
        else:  # pragma: no cover - enum is closed
            raise InternalError(f"unhandled constraint kind {kind}")
    return SDPInstance(
        gram_dim=basis.size,
        value_dim=len(basis.value_names),
        rows=tuple(rows),
        eliminated=tuple(eliminated),
        value_names=basis.value_names,
        basis_names=basis.basis,
        meta={
            "N": problem.N,
            "alpha": problem.alpha,
            "mu1": problem.class1.mu,
            "L1": problem.class1.L,
            "mu2": problem.class2.mu,
            "L2": problem.class2.L,
            "delta": problem.delta,
            "pl_modulus": problem.pl_modulus,
            "measure": problem.measure.value,
            "f1_exact": problem.f1_exact,
        },
    )


def compile_pep(problem: PEPProblem, gauge_fix: bool = True, merge_coincident: bool = True) -> tuple[BasisMap, SDPInstance]:
    """Basis plus SDP, reduced by default since that is what gets solved."""
    basis = assign_basis(problem, gauge_fix=gauge_fix, merge_coincident=merge_coincident)
    return basis, emit_sdp(problem, basis)


@dataclass(frozen=True)
class Certificate:
    """Concrete vectors and values recovered from an optimal Gram matrix."""

    dimension: int
    triples1: dict[PointLabel, DiscreteTriple]
    triples2: dict[PointLabel, DiscreteTriple]
    max_residual: float
    vectors: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def objective_values(self) -> dict[PointLabel, float]:
        return {u: self.triples1[u].value - self.triples2[u].value for u in self.triples1}


def gram_factor(gram: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Return ``V`` (r x n) with ``V.T @ V ~= gram``, r the numerical rank."""
    G = 0.5 * (np.asarray(gram, float) + np.asarray(gram, float).T)
    w, Q = np.linalg.eigh(G)
    wmax = max(float(w[-1]), 0.0) if w.size else 0.0
    if w.size and w[0] < -rank_tol * wmax and w[0] < -1e-12:
        raise FactorizationError(
            f"Gram matrix has eigenvalue {w[0]:.3e} below -rank_tol*max ({-rank_tol * wmax:.3e})")
    keep = w > rank_tol * wmax
    if wmax == 0.0:
        keep[:] = False
    return np.sqrt(w[keep])[:, None] * Q[:, keep].T


def reconstruct_certificate(problem: PEPProblem, basis: BasisMap, solve, rank_tol: float = DEFAULT_RANK_TOL) -> Certificate:
    """Factor the optimal Gram block and evaluate every expansion on the factor.

    ``solve`` is a :class:`~dcapep.sdp_backend.SolveResult` (anything with
    ``gram`` and ``values`` attributes works).
    """
    status = getattr(solve, "status", None)
    if status is not None and getattr(status, "value", status) != "Optimal":
        raise ParameterError(f"certificate needs an optimal solve, got status {status}")
    V = gram_factor(solve.gram, rank_tol)
    r = V.shape[0]
    if r == 0:
        V = np.zeros((1, basis.size))
    vectors = {name: V @ row for name, row in basis.expansion.items()}
    values = np.asarray(solve.values, float)

    def value(ell: int, u: PointLabel) -> float:
        Gc, Fc = basis.value(ell, u)
        return float(np.sum(Gc * solve.gram) + Fc @ values)

    triples = {}
    for ell in (1, 2):
        triples[ell] = {
            u: DiscreteTriple(vectors[str(u)], vectors[f"g{ell}({u})"], value(ell, u))
            for u in problem.points
        }
    worst = -np.inf
    ells = (2,) if problem.f1_exact else (1, 2)
    for ell in ells:
        cls = problem.class1 if ell == 1 else problem.class2
        for u in problem.points:
            for v in problem.points:
                if u != v:
                    worst = max(worst, interpolation_residual(triples[ell][u], triples[ell][v], cls))
    return Certificate(r, triples[1], triples[2], float(worst), vectors)
