"""DCA and boosted DCA on concrete difference-of-convex instances.

An instance is a bundle of oracles for ``f = f1 - f2``: values, subgradients
and an exact solver of the linearised subproblem ``argmin f1(x) - <g, x>``.
Runs always perform exactly ``N`` iterations so they line up with the
fixed-horizon worst-case problems.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .bounds import gd_pl_rate
from .errors import BoundViolation, DCAPEPError, DimensionMismatch, ParameterError, SubproblemFailure
from .pep_model import CurvatureClass

Vector = np.ndarray
FERMAT_TOL = 1e-8
FILE_FORMAT = "dcapep-quadratic-dc"


@dataclass(frozen=True)
class DCInstance:
    dim: int | None
    f1_value: Callable[[Vector], float]
    f2_value: Callable[[Vector], float]
    f1_subgrad: Callable[[Vector], Vector]
    f2_subgrad: Callable[[Vector], Vector]
    solve_linearized: Callable[[Vector], Vector]
    class1: CurvatureClass
    class2: CurvatureClass
    f_star: float | None = None  # inf f, when known

    def f(self, x: Vector) -> float:
        return float(self.f1_value(x) - self.f2_value(x))

    def grad_f(self, x: Vector) -> Vector:
        return np.asarray(self.f1_subgrad(x), float) - np.asarray(self.f2_subgrad(x), float)


def _eig_range(A: np.ndarray) -> tuple[float, float]:
    w = np.linalg.eigvalsh(A)
    return float(w[0]), float(w[-1])


@dataclass(frozen=True)
class QuadraticDC:
    """``f_l(x) = x'A_l x / 2 + b_l'x + c_l`` with declared curvature classes."""

    A1: np.ndarray
    A2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c1: float
    c2: float
    class1: CurvatureClass
    class2: CurvatureClass

    def __post_init__(self):
        A1 = np.atleast_2d(np.asarray(self.A1, float))
        A2 = np.atleast_2d(np.asarray(self.A2, float))
        n = A1.shape[0]
        b1 = np.zeros(n) if self.b1 is None else np.atleast_1d(np.asarray(self.b1, float))
        b2 = np.zeros(n) if self.b2 is None else np.atleast_1d(np.asarray(self.b2, float))
        if A1.shape != (n, n) or A2.shape != (n, n) or b1.shape != (n,) or b2.shape != (n,):
            raise DimensionMismatch(
                f"inconsistent shapes A1 {A1.shape}, A2 {A2.shape}, b1 {b1.shape}, b2 {b2.shape}")
        for name, A in (("A1", A1), ("A2", A2)):
            if not np.allclose(A, A.T, rtol=0, atol=1e-12 * (1 + np.abs(A).max())):
                raise ParameterError(f"{name} is not symmetric")
        A1, A2 = 0.5 * (A1 + A1.T), 0.5 * (A2 + A2.T)
        for name, A, cls in (("A1", A1, self.class1), ("A2", A2, self.class2)):
            lo, hi = _eig_range(A)
            slack = 1e-10 * (1.0 + cls.L)
            if lo < cls.mu - slack or hi > cls.L + slack:
                raise ParameterError(
                    f"{name} has eigenvalues in [{lo:.6g}, {hi:.6g}], outside the declared [{cls.mu}, {cls.L}]")
        if _eig_range(A1)[0] <= 0.0:
            raise ParameterError("A1 must be positive definite so the subproblem has a unique solution")
        object.__setattr__(self, "A1", A1)
        object.__setattr__(self, "A2", A2)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "b2", b2)
        object.__setattr__(self, "c1", float(self.c1))
        object.__setattr__(self, "c2", float(self.c2))

    @property
    def dim(self) -> int:
        return self.A1.shape[0]

    def f_star(self) -> float:
        """``inf f``; ``-inf`` when ``f`` is unbounded below."""
        H, b = self.A1 - self.A2, self.b1 - self.b2
        lo = _eig_range(H)[0]
        if lo < -1e-12 * (1.0 + np.abs(H).max()):
            return -math.inf
        x, *_ = np.linalg.lstsq(H, -b, rcond=None)
        if np.linalg.norm(H @ x + b) > 1e-9 * (1.0 + np.linalg.norm(b)):
            return -math.inf
        return float(0.5 * b @ x + self.c1 - self.c2)

    def minimizer(self) -> Vector:
        H, b = self.A1 - self.A2, self.b1 - self.b2
        x, *_ = np.linalg.lstsq(H, -b, rcond=None)
        return x

    def instance(self) -> DCInstance:
        A1, A2, b1, b2, c1, c2 = self.A1, self.A2, self.b1, self.b2, self.c1, self.c2
        chol = np.linalg.cholesky(A1)

        def solve(g):
            rhs = np.asarray(g, float) - b1
            return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))

        fs = self.f_star()
        return DCInstance(
            dim=self.dim,
            f1_value=lambda x: float(0.5 * x @ A1 @ x + b1 @ x + c1),
            f2_value=lambda x: float(0.5 * x @ A2 @ x + b2 @ x + c2),
            f1_subgrad=lambda x: A1 @ x + b1,
            f2_subgrad=lambda x: A2 @ x + b2,
            solve_linearized=solve,
            class1=self.class1,
            class2=self.class2,
            f_star=fs if math.isfinite(fs) else None,
        )

    # -- instance files -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FILE_FORMAT,
            "dim": self.dim,
            "A1": self.A1.tolist(),
            "A2": self.A2.tolist(),
            "b1": self.b1.tolist(),
            "b2": self.b2.tolist(),
            "c1": self.c1,
            "c2": self.c2,
            "class1": {"mu": self.class1.mu, "L": self.class1.L},
            "class2": {"mu": self.class2.mu, "L": self.class2.L},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuadraticDC":
        if d.get("format") != FILE_FORMAT:
            raise ParameterError(f"not a {FILE_FORMAT} document (format={d.get('format')!r})")
        try:
            n = int(d["dim"])
            q = cls(
                np.asarray(d["A1"], float), np.asarray(d["A2"], float),
                np.asarray(d.get("b1", [0.0] * n), float), np.asarray(d.get("b2", [0.0] * n), float),
                float(d.get("c1", 0.0)), float(d.get("c2", 0.0)),
                CurvatureClass(**d["class1"]), CurvatureClass(**d["class2"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DCAPEPError):
                raise
            raise ParameterError(f"malformed instance: {exc}") from exc
        if q.dim != n:
            raise DimensionMismatch(f"declared dim {n} but matrices are {q.dim}x{q.dim}")
        return q

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "QuadraticDC":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ParameterError(f"{path}: expected a JSON object")
        return cls.from_dict(d)


@dataclass
class TrajectoryReport:
    """Iterates of one run.  Row ``k`` of ``x`` is ``x^{k+1}`` (zero-based)."""

    x: np.ndarray  # (N+1, d)
    y: np.ndarray  # (N, d)
    g1: np.ndarray  # g1(x^k), (N+1, d)
    g2: np.ndarray  # g2(x^k), (N+1, d)
    f_values: np.ndarray  # f(x^k), (N+1,)
    class1: CurvatureClass
    class2: CurvatureClass
    alpha: float
    N: int
    extra: dict = field(default_factory=dict)

    @property
    def grad_gap_sq(self) -> np.ndarray:
        d = self.g1 - self.g2
        return np.einsum("ij,ij->i", d, d)

    @property
    def measure(self) -> float:
        return float(self.grad_gap_sq.min())

    @property
    def directions(self) -> np.ndarray:
        return self.y - self.x[:-1]


def run_bdca(instance: DCInstance, x1, N: int, alpha: float, fermat_tol: float = FERMAT_TOL) -> TrajectoryReport:
    if isinstance(N, bool) or int(N) != N or N < 1:
        raise ParameterError(f"N must be a positive integer, got {N!r}")
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    x = np.atleast_1d(np.asarray(x1, float)).copy()
    if instance.dim is not None and x.shape != (instance.dim,):
        raise DimensionMismatch(f"start point has shape {x.shape}, instance dimension is {instance.dim}")
    xs, ys, g1s, g2s, fs = [], [], [], [], []
    for _ in range(int(N)):
        g2 = np.asarray(instance.f2_subgrad(x), float)
        y = np.asarray(instance.solve_linearized(g2), float)
        err = float(np.linalg.norm(np.asarray(instance.f1_subgrad(y), float) - g2))
        if not err <= fermat_tol * (1.0 + float(np.linalg.norm(g2))):
            raise SubproblemFailure(f"subproblem solution violates g1(y) = g by {err:.3e}")
        xs.append(x)
        ys.append(y)
        g1s.append(np.asarray(instance.f1_subgrad(x), float))
        g2s.append(g2)
        fs.append(instance.f(x))
        x = y + alpha * (y - x)
    xs.append(x)
    g1s.append(np.asarray(instance.f1_subgrad(x), float))
    g2s.append(np.asarray(instance.f2_subgrad(x), float))
    fs.append(instance.f(x))
    return TrajectoryReport(np.array(xs), np.array(ys), np.array(g1s), np.array(g2s), np.array(fs),
                            instance.class1, instance.class2, alpha, int(N))


def run_dca(instance: DCInstance, x1, N: int, fermat_tol: float = FERMAT_TOL) -> TrajectoryReport:
    return run_bdca(instance, x1, N, 0.0, fermat_tol)


@dataclass(frozen=True)
class SmoothOracle:
    value: Callable[[Vector], float]
    grad: Callable[[Vector], Vector]
    f_star: float | None = None


def quadratic_oracle(H, b=None, c: float = 0.0) -> SmoothOracle:
    """``x'Hx/2 + b'x + c`` (``f_star`` filled in when ``H`` is PSD and it is attained)."""
    H = np.atleast_2d(np.asarray(H, float))
    b = np.zeros(H.shape[0]) if b is None else np.atleast_1d(np.asarray(b, float))
    fs = None
    if np.linalg.eigvalsh(H)[0] >= -1e-12:
        x, *_ = np.linalg.lstsq(H, -b, rcond=None)
        if np.linalg.norm(H @ x + b) <= 1e-9 * (1.0 + np.linalg.norm(b)):
            fs = float(0.5 * b @ x + c)
    return SmoothOracle(lambda x: float(0.5 * x @ H @ x + b @ x + c), lambda x: H @ x + b, fs)


def gd_as_dca(smooth_f: SmoothOracle, L: float, dim: int | None = None) -> DCInstance:
    """Write ``f`` as ``(L/2)||x||^2 - ((L/2)||x||^2 - f)``.

    Boosted DCA on this split is gradient descent with step ``(1 + alpha) / L``.
    """
    L = float(L)
    if not L > 0:
        raise ParameterError(f"L must be > 0, got {L}")
    sq = lambda x: float(np.asarray(x, float) @ np.asarray(x, float))
    return DCInstance(
        dim=dim,
        f1_value=lambda x: 0.5 * L * sq(x),
        f2_value=lambda x: 0.5 * L * sq(x) - float(smooth_f.value(x)),
        f1_subgrad=lambda x: L * np.asarray(x, float),
        f2_subgrad=lambda x: L * np.asarray(x, float) - np.asarray(smooth_f.grad(x), float),
        solve_linearized=lambda g: np.asarray(g, float) / L,
        class1=CurvatureClass(0.0, L),
        class2=CurvatureClass(0.0, 2.0 * L),
        f_star=smooth_f.f_star,
    )


def check_descent_direction(trajectory: TrajectoryReport, grad_f: Callable[[Vector], Vector], mu: float) -> float:
    """``min_k -mu ||d^k||^2 - <grad f(y^k), d^k>``; non-negative along a valid run."""
    worst = math.inf
    for y, d in zip(trajectory.y, trajectory.directions):
        worst = min(worst, float(-mu * (d @ d) - np.asarray(grad_f(y), float) @ d))
    return worst


def pl_ratio_check(instance: DCInstance, eta: float, x1, alpha: float, f_star: float | None = None,
                   tol: float = 1e-9) -> float:
    """``(f(x^2) - f*) / (f(x^1) - f*)`` after one boosted step, checked against ``beta``.

    ``instance`` must come from :func:`gd_as_dca`; PL membership with
    modulus ``eta`` is the caller's claim and is not verified.
    """
    f_star = instance.f_star if f_star is None else f_star
    if f_star is None:
        raise ParameterError("f* is unknown; pass f_star explicitly")
    L = instance.class1.L
    rate = gd_pl_rate(eta / L, alpha)
    gap1 = instance.f(np.atleast_1d(np.asarray(x1, float))) - f_star
    if gap1 <= 0.0:
        return 0.0
    run = run_bdca(instance, x1, 1, alpha)
    ratio = float((run.f_values[1] - f_star) / gap1)
    if ratio > rate.beta + tol:
        raise BoundViolation(f"one-step ratio {ratio:.12g} exceeds beta={rate.beta:.12g}")
    return ratio


def bisection_linearized_solver(f1_grad: Callable[[float], float], tol: float = 1e-14,
                                max_iter: int = 400) -> Callable[[Vector], Vector]:
    """Subproblem solver for scalar ``f1`` with strictly increasing derivative.

    Returns ``g -> y`` with ``f1'(y) = g`` found by bracketing and bisection.
    """

    def solve(g):
        g = float(np.asarray(g, float).reshape(-1)[0])
        lo, hi = -1.0, 1.0
        for _ in range(200):
            if f1_grad(lo) <= g:
                break
            lo *= 2.0
        else:
            raise SubproblemFailure(f"cannot bracket f1'(y) = {g} from below")
        for _ in range(200):
            if f1_grad(hi) >= g:
                break
            hi *= 2.0
        else:
            raise SubproblemFailure(f"cannot bracket f1'(y) = {g} from above")
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi) or hi - lo <= tol * (1.0 + abs(mid)):
                break
            if f1_grad(mid) < g:
                lo = mid
            else:
                hi = mid
        return np.array([0.5 * (lo + hi)])

    return solve


def random_quadratic_dc(rng: np.random.Generator, dim: int, mu: float = 0.5, L: float = 1.0,
                        linear: bool = True) -> QuadraticDC:
    """Random pair in ``F_{mu,L}`` sharing an eigenbasis, with ``f`` bounded below.

    Each eigenvalue of ``A1`` exceeds the matching one of ``A2``, so
    ``A1 - A2`` is positive definite and ``f*`` is attained.
    """
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    pairs = np.sort(rng.uniform(mu, L, size=(dim, 2)), axis=1)
    lam2, lam1 = pairs[:, 0], pairs[:, 1]
    A1 = (Q * lam1) @ Q.T
    A2 = (Q * lam2) @ Q.T
    b1 = rng.standard_normal(dim) if linear else np.zeros(dim)
    b2 = rng.standard_normal(dim) if linear else np.zeros(dim)
    cls = CurvatureClass(mu, L)
    return QuadraticDC(A1, A2, b1, b2, 0.0, 0.0, cls, cls)
