"""Declarative description of the worst-case problem for (boosted) DCA.

A :class:`PEPProblem` fixes the two curvature classes, the method (number of
iterations and boost length), the initial gap and the optional PL modulus.
Its :meth:`PEPProblem.constraint_labels` enumerates every constraint row
(interpolation, gradient/step links, descent-lemma lower bounds, initial gap,
PL rows and the epigraph rows of the inner minimum) without committing to a
numeric representation; :mod:`dcapep.gram_builder` turns them into an SDP.

The optimal value ``f*`` is normalised to zero throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, ParameterError


@dataclass(frozen=True)
class CurvatureClass:
    """Functions with minimum curvature ``mu`` and maximum curvature ``L``."""

    mu: float
    L: float

    def __post_init__(self):
        mu, L = float(self.mu), float(self.L)
        if not (math.isfinite(mu) and math.isfinite(L)):
            raise ParameterError(f"curvature parameters must be finite, got mu={mu}, L={L}")
        if mu < 0:
            raise ParameterError(f"minimum curvature must be >= 0, got mu={mu}")
        if not mu < L:
            raise ParameterError(f"need mu < L strictly, got mu={mu}, L={L}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "L", L)

    @property
    def kappa(self) -> float:
        return self.mu / self.L


@dataclass(frozen=True)
class MethodConfig:
    N: int
    alpha: float = 0.0

    def __post_init__(self):
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N < 1:
            raise ParameterError(f"N must be a positive integer, got {self.N!r}")
        alpha = float(self.alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True, order=True)
class PointLabel:
    """``x^k`` (k = 1..N+1) or ``y^k`` (k = 1..N)."""

    kind: str
    k: int

    def __post_init__(self):
        if self.kind not in ("x", "y"):
            raise ParameterError(f"point kind must be 'x' or 'y', got {self.kind!r}")
        if self.k < 1:
            raise ParameterError(f"point index must be >= 1, got {self.k}")

    def __str__(self) -> str:
        return f"{self.kind}{self.k}"

    @classmethod
    def parse(cls, text: str) -> "PointLabel":
        return cls(text[0], int(text[1:]))


def X(k: int) -> PointLabel:
    return PointLabel("x", k)


def Y(k: int) -> PointLabel:
    return PointLabel("y", k)


def point_set(N: int) -> tuple[PointLabel, ...]:
    """The ordered label set ``S = (x1..x_{N+1}, y1..yN)``."""
    return tuple(X(k) for k in range(1, N + 2)) + tuple(Y(k) for k in range(1, N + 1))


class ConstraintKind(str, enum.Enum):
    INTERP = "Interp"
    GRAD_LINK = "GradLink"
    STEP_LINK = "StepLink"
    DESCENT_LB = "DescentLB"
    INIT_GAP = "InitGap"
    PL = "PL"
    OBJ_EPI = "ObjEpi"


_KIND_ORDER = {kind: i for i, kind in enumerate(ConstraintKind)}


@dataclass(frozen=True)
class ConstraintLabel:
    """Name of one constraint row.

    Only the fields relevant to ``kind`` are set: ``ell``/``u``/``v`` for
    interpolation rows, ``u`` for DescentLB and PL, ``k`` for the links and
    epigraph rows.
    """

    kind: ConstraintKind
    ell: int | None = None
    u: PointLabel | None = None
    v: PointLabel | None = None
    k: int | None = None

    def __post_init__(self):
        kind = ConstraintKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ConstraintKind.INTERP:
            if self.ell not in (1, 2) or self.u is None or self.v is None:
                raise ParameterError("Interp needs ell in {1,2} and two points")
            if self.u == self.v:
                raise ParameterError("Interp requires u != v")
        elif kind in (ConstraintKind.DESCENT_LB, ConstraintKind.PL):
            if self.u is None:
                raise ParameterError(f"{kind.value} needs a point")
        elif kind in (ConstraintKind.GRAD_LINK, ConstraintKind.STEP_LINK, ConstraintKind.OBJ_EPI):
            if self.k is None or self.k < 1:
                raise ParameterError(f"{kind.value} needs an index k >= 1")

    def __str__(self) -> str:
        kind = self.kind
        if kind is ConstraintKind.INTERP:
            return f"Interp({self.ell},{self.u},{self.v})"
        if kind in (ConstraintKind.DESCENT_LB, ConstraintKind.PL):
            return f"{kind.value}({self.u})"
        if kind is ConstraintKind.INIT_GAP:
            return "InitGap"
        return f"{kind.value}({self.k})"

    def sort_key(self):
        def pkey(p):
            return (0, "", 0) if p is None else (1, p.kind, p.k)

        return (_KIND_ORDER[self.kind], self.ell or 0, pkey(self.u), pkey(self.v), self.k or 0)

    def __lt__(self, other: "ConstraintLabel") -> bool:
        return self.sort_key() < other.sort_key()

    @classmethod
    def parse(cls, text: str) -> "ConstraintLabel":
        text = text.strip()
        if text == "InitGap":
            return cls(ConstraintKind.INIT_GAP)
        name, _, rest = text.partition("(")
        args = rest.rstrip(")").split(",")
        kind = ConstraintKind(name)
        if kind is ConstraintKind.INTERP:
            return cls(kind, ell=int(args[0]), u=PointLabel.parse(args[1]), v=PointLabel.parse(args[2]))
        if kind in (ConstraintKind.DESCENT_LB, ConstraintKind.PL):
            return cls(kind, u=PointLabel.parse(args[0]))
        return cls(kind, k=int(args[0]))


class Measure(str, enum.Enum):
    MIN_GRAD_DIFF_NORM_SQ = "MinGradDiffNormSq"
    # f(x^{N+1}) - f*; used by the gradient-descent reduction
    FINAL_GAP = "FinalGap"


@dataclass(frozen=True)
class PEPProblem:
    """Fully parameterised worst-case problem.

    When ``f1_exact`` is set, ``f1`` is not a member of ``class1`` but the
    fixed quadratic ``(class1.L / 2) * ||x||^2`` (the gradient-descent
    reduction); in that case no interpolation rows are emitted for ``f1``.
    """

    class1: CurvatureClass
    class2: CurvatureClass
    method: MethodConfig
    delta: float = 1.0
    pl_modulus: float | None = None
    measure: Measure = Measure.MIN_GRAD_DIFF_NORM_SQ
    f1_exact: bool = False

    @property
    def N(self) -> int:
        return self.method.N

    @property
    def alpha(self) -> float:
        return self.method.alpha

    @property
    def points(self) -> tuple[PointLabel, ...]:
        return point_set(self.N)

    @property
    def descent_curvature(self) -> float:
        """``L1 - mu2``, the curvature constant of the descent lemma."""
        return self.class1.L - self.class2.mu

    @cached_property
    def constraint_labels(self) -> tuple[ConstraintLabel, ...]:
        S = self.points
        N = self.N
        labels: list[ConstraintLabel] = []
        classes = (2,) if self.f1_exact else (1, 2)
        for ell in classes:
            for u in S:
                for v in S:
                    if u != v:
                        labels.append(ConstraintLabel(ConstraintKind.INTERP, ell=ell, u=u, v=v))
        labels += [ConstraintLabel(ConstraintKind.GRAD_LINK, k=k) for k in range(1, N + 1)]
        labels += [ConstraintLabel(ConstraintKind.STEP_LINK, k=k) for k in range(1, N + 1)]
        labels += [ConstraintLabel(ConstraintKind.DESCENT_LB, u=u) for u in S]
        labels.append(ConstraintLabel(ConstraintKind.INIT_GAP))
        if self.pl_modulus is not None:
            labels += [ConstraintLabel(ConstraintKind.PL, u=u) for u in S]
        if self.measure is Measure.MIN_GRAD_DIFF_NORM_SQ:
            labels += [ConstraintLabel(ConstraintKind.OBJ_EPI, k=k) for k in range(1, N + 2)]
        else:
            labels.append(ConstraintLabel(ConstraintKind.OBJ_EPI, k=N + 1))
        return tuple(labels)

    def count(self, kind: ConstraintKind) -> int:
        return sum(1 for lab in self.constraint_labels if lab.kind is ConstraintKind(kind))


def build_pep(
    class1: CurvatureClass,
    class2: CurvatureClass,
    method: MethodConfig,
    delta: float = 1.0,
    pl_modulus: float | None = None,
    measure: Measure = Measure.MIN_GRAD_DIFF_NORM_SQ,
    f1_exact: bool = False,
) -> PEPProblem:
    """Validate the parameters and assemble a :class:`PEPProblem`."""
    if not isinstance(class1, CurvatureClass) or not isinstance(class2, CurvatureClass):
        raise ParameterError("class1 and class2 must be CurvatureClass instances")
    if not isinstance(method, MethodConfig):
        raise ParameterError("method must be a MethodConfig")
    delta = float(delta)
    if not (math.isfinite(delta) and delta > 0):
        raise ParameterError(f"delta must be > 0, got {delta}")
    if pl_modulus is not None:
        pl_modulus = float(pl_modulus)
        if not (math.isfinite(pl_modulus) and pl_modulus > 0):
            raise ParameterError(f"PL modulus must be > 0, got {pl_modulus}")
    if class1.L <= class2.mu:
        raise ParameterError(
            f"descent lemma needs L1 > mu2, got L1={class1.L}, mu2={class2.mu}")
    return PEPProblem(class1, class2, method, delta, pl_modulus, Measure(measure), bool(f1_exact))


def build_gd_pl_pep(L: float, eta: float, alpha: float, N: int = 1, delta: float = 1.0) -> PEPProblem:
    """Worst case of ``f(x^{N+1}) - f*`` for gradient descent with step ``(1+alpha)/L``.

    Written as boosted DCA on ``f1 = (L/2)||x||^2``, ``f2 in F_{0,2L}``, with
    PL rows of modulus ``eta``.  With ``delta = 1`` the optimal value is the
    worst contraction ratio of the objective gap.
    """
    return build_pep(
        CurvatureClass(0.0, L),
        CurvatureClass(0.0, 2.0 * L),
        MethodConfig(N, alpha),
        delta=delta,
        pl_modulus=eta,
        measure=Measure.FINAL_GAP,
        f1_exact=True,
    )


@dataclass(frozen=True)
class DiscreteTriple:
    point: np.ndarray
    grad: np.ndarray
    value: float

    def __post_init__(self):
        point = np.atleast_1d(np.asarray(self.point, dtype=float))
        grad = np.atleast_1d(np.asarray(self.grad, dtype=float))
        if point.shape != grad.shape:
            raise DimensionMismatch(f"point shape {point.shape} != grad shape {grad.shape}")
        object.__setattr__(self, "point", point)
        object.__setattr__(self, "grad", grad)
        object.__setattr__(self, "value", float(self.value))


def interpolation_residual(i: DiscreteTriple, j: DiscreteTriple, cls: CurvatureClass) -> float:
    """Residual of the ``F_{mu,L}`` interpolation inequality for the pair ``(i, j)``.

    Non-positive exactly when the two triples can be sampled from one member
    of the class (pairwise).
    """
    if i.point.shape != j.point.shape:
        raise DimensionMismatch(f"triples have shapes {i.point.shape} and {j.point.shape}")
    mu, L = cls.mu, cls.L
    dg = i.grad - j.grad
    dx = i.point - j.point
    quad = (dg @ dg) / L + mu * (dx @ dx) - (2.0 * mu / L) * ((j.grad - i.grad) @ (j.point - i.point))
    return float(quad / (2.0 * (1.0 - mu / L)) - i.value + j.value + j.grad @ (i.point - j.point))


def descent_upper_bound(f_value: float, grad_diff_norm_sq: float, L1: float, mu2: float) -> float:
    """Upper bound on ``f*`` from a single (value, subgradient-difference) sample."""
    if not L1 > mu2:
        raise ParameterError(f"descent lemma needs L1 > mu2, got L1={L1}, mu2={mu2}")
    return f_value - grad_diff_norm_sq / (2.0 * (L1 - mu2))


def pl_residual(f_value: float, grad_diff_norm_sq: float, eta: float) -> float:
    """``f - ||grad||^2 / (2 eta)`` with ``f* = 0``; non-positive when PL holds."""
    if not eta > 0:
        raise ParameterError(f"PL modulus must be > 0, got {eta}")
    return f_value - grad_diff_norm_sq / (2.0 * eta)
