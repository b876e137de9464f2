"""Numerical checks of the convergence proofs.

Both proofs are weighted sums of interpolation (and PL) residuals that add up
to an explicit expression.  The identities hold for arbitrary vectors and
values, so they can be checked on random samples; a residual far above
rounding level means the proof (or this transcription of it) is wrong.

Tolerances use ``scale = 1 + max |term|`` over the terms being summed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import beta as _beta, gd_pl_alpha_max
from .errors import ClassMismatch, DegenerateError, ParameterError
from .pep_model import CurvatureClass, DiscreteTriple, interpolation_residual

IDENTITY_RTOL = 1e-8


@dataclass(frozen=True)
class MultiplierTable:
    """Weights of the five interpolation rows used for one iteration."""

    lam_1_xk_yk: float
    lam_1_yk_xk: float
    lam_1_xk1_yk: float
    lam_1_yk_xk1: float
    lam_2_xk1_xk: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.lam_1_xk_yk, self.lam_1_yk_xk, self.lam_1_xk1_yk, self.lam_1_yk_xk1, self.lam_2_xk1_xk)


@dataclass(frozen=True)
class OneIterSample:
    """Free variables of one boosted DCA iteration.

    ``shared`` plays both ``g1(y^k)`` and ``g2(x^k)``; ``x_k1`` is derived
    from ``x_k`` and ``y_k``.
    """

    x_k: np.ndarray
    y_k: np.ndarray
    g1_xk: np.ndarray
    g1_xk1: np.ndarray
    g2_yk: np.ndarray
    g2_xk1: np.ndarray
    shared: np.ndarray
    f1_xk: float
    f1_yk: float
    f1_xk1: float
    f2_xk: float
    f2_xk1: float
    mu: float
    L: float
    alpha: float

    def __post_init__(self):
        dims = {np.asarray(getattr(self, n)).shape for n in
                ("x_k", "y_k", "g1_xk", "g1_xk1", "g2_yk", "g2_xk1", "shared")}
        if len(dims) != 1:
            raise ParameterError(f"sample vectors have different shapes: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return int(np.asarray(self.x_k).size)

    @property
    def x_k1(self) -> np.ndarray:
        return self.y_k + self.alpha * (self.y_k - self.x_k)


@dataclass(frozen=True)
class IdentityCheck:
    residual: float
    scale: float

    @property
    def ok(self) -> bool:
        return self.residual <= IDENTITY_RTOL * self.scale


def _check_params(mu: float, L: float, alpha: float) -> None:
    if not 0.0 <= mu < L:
        raise ParameterError(f"need 0 <= mu < L, got mu={mu}, L={L}")
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")


def one_iter_multipliers(mu: float, L: float, alpha: float) -> MultiplierTable:
    _check_params(mu, L, alpha)
    r = 2.0 * alpha * mu / L
    return MultiplierTable(1.0 + r, r, 1.0 / alpha - 1.0, 1.0 / alpha, 1.0)


def sos_coefficients(mu: float, L: float, alpha: float) -> tuple[float, float, float]:
    """Weights ``(c1, c2, c3)`` of the three squared norms closing the aggregation."""
    _check_params(mu, L, alpha)
    d1 = 2.0 * alpha * L * (L - mu) * (alpha * mu + 2.0 * (1.0 - alpha) * L)
    d2 = 2.0 * (L - mu) * (2.0 * L * (alpha - 1.0) - alpha * mu)
    if d1 == 0.0 or d2 == 0.0:
        raise DegenerateError(f"vanishing denominator at mu={mu}, L={L}, alpha={alpha}")
    c1 = 1.0 / d1
    c2 = (alpha * L - 2.0 * mu) / d2
    c3 = mu * (L + 2.0 * alpha * L + 2.0 * alpha * mu) / (2.0 * L * L * (L - mu))
    return c1, c2, c3


def _sq(v: np.ndarray) -> float:
    return float(v @ v)


def one_iteration_terms(s: OneIterSample, with_sos: bool = True) -> tuple[float, float, float]:
    """``(lhs, rhs, scale)`` for the aggregated single-iteration identity.

    ``lhs`` is the multiplier-weighted sum of the five interpolation
    residuals and ``rhs`` the closed form it equals.
    """
    mu, L, a = s.mu, s.L, s.alpha
    cls = CurvatureClass(mu, L)
    xk, yk, xk1 = s.x_k, s.y_k, s.x_k1
    t_xk = DiscreteTriple(xk, s.g1_xk, s.f1_xk)
    t_yk = DiscreteTriple(yk, s.shared, s.f1_yk)
    t_xk1 = DiscreteTriple(xk1, s.g1_xk1, s.f1_xk1)
    u_xk1 = DiscreteTriple(xk1, s.g2_xk1, s.f2_xk1)
    u_xk = DiscreteTriple(xk, s.shared, s.f2_xk)
    Q = (
        interpolation_residual(t_xk, t_yk, cls),
        interpolation_residual(t_yk, t_xk, cls),
        interpolation_residual(t_xk1, t_yk, cls),
        interpolation_residual(t_yk, t_xk1, cls),
        interpolation_residual(u_xk1, u_xk, cls),
    )
    lam = one_iter_multipliers(mu, L, a).as_tuple()
    weighted = [l * q for l, q in zip(lam, Q)]
    lhs = float(sum(weighted))

    dxy = xk - yk
    terms = [
        s.f1_xk1, -s.f2_xk1, -s.f1_xk, s.f2_xk,
        _sq(s.g1_xk1 - s.g2_xk1) / (2.0 * L),
        (0.5 + a * mu / L) / L * _sq(s.g1_xk - s.shared),
    ]
    if with_sos:
        c1, c2, c3 = sos_coefficients(mu, L, a)
        v1 = ((a * mu - 2.0 * (a - 1.0) * L) * s.g1_xk1 + L * (a - 2.0) * s.shared
              + a * (L - mu) * s.g2_xk1 + a * L * (-a * mu + mu + L) * dxy)
        v2 = -s.shared + s.g2_xk1 + (L + a * mu) * dxy
        v3 = s.g1_xk - s.shared - L * dxy
        terms += [c1 * _sq(v1), c2 * _sq(v2), c3 * _sq(v3)]
    rhs = float(sum(terms))
    scale = 1.0 + max(abs(x) for x in weighted + terms)
    return lhs, rhs, scale


def check_one_iteration(sample: OneIterSample) -> IdentityCheck:
    lhs, rhs, scale = one_iteration_terms(sample)
    return IdentityCheck(abs(lhs - rhs), scale)


def verify_one_iteration_identity(sample: OneIterSample) -> float:
    """``|sum lambda Q - rhs|``; zero up to rounding for every sample."""
    return check_one_iteration(sample).residual


def gd_pl_lines(alpha: float, L: float, eta: float, g2_x1, g2_y1, g2_x2,
                f2_x1: float, f2_y1: float, f2_x2: float) -> list[float]:
    """The six weighted lines of the one-step PL identity, with ``f* = 0``.

    Points are implied: ``x1 = 0``, ``y1 = g2(x1) / L`` (optimality of the
    DCA subproblem for ``f1 = (L/2)||x||^2``) and ``x2 = (1 + alpha) y1``.
    """
    if not 0.0 < eta <= L:
        raise ParameterError(f"PL modulus must lie in (0, L], got eta={eta}, L={L}")
    g1, gy, g2 = (np.atleast_1d(np.asarray(v, float)) for v in (g2_x1, g2_y1, g2_x2))
    k, a = eta / L, alpha
    b = _beta(k, a)
    x2 = (1.0 + a) / L * g1
    y1 = g1 / L
    return [
        (0.5 * L * _sq(x2) - f2_x2) - b * (-f2_x1),
        a * (f2_x1 - f2_y1 + gy @ y1 - _sq(g1 - gy) / (4.0 * L)),
        ((2.0 - k) / (k + 2.0) * a + 2.0 / (k + 2.0))
        * (f2_y1 - f2_x1 - g1 @ y1 - _sq(g1 - gy) / (4.0 * L)),
        f2_x2 - f2_y1 - gy @ (x2 - y1) - _sq(g2 - gy) / (4.0 * L),
        gd_pl_pl_multiplier(k, a) * (_sq(g1) / (2.0 * eta) + f2_x1),
        k * (2.0 * a + 1.0) / (k + 2.0) * (_sq(g1 - gy) / (2.0 * eta) - 0.5 * L * _sq(y1) + f2_y1),
    ]


def gd_pl_pl_multiplier(kappa: float, alpha: float) -> float:
    """Weight of the PL row at ``x1``; non-negative up to the admissible boost."""
    return -kappa * alpha**2 - 2.0 * kappa**2 / (kappa + 2.0) * alpha + 2.0 * kappa / (kappa + 2.0)


def gd_pl_multipliers(kappa: float, alpha: float) -> tuple[float, float, float, float, float]:
    """Weights of the five lines after the first, in display order."""
    return (
        alpha,
        (2.0 - kappa) / (kappa + 2.0) * alpha + 2.0 / (kappa + 2.0),
        1.0,
        gd_pl_pl_multiplier(kappa, alpha),
        kappa * (2.0 * alpha + 1.0) / (kappa + 2.0),
    )


def check_gd_pl(alpha, L, eta, g2_x1, g2_y1, g2_x2, f2_x1, f2_y1, f2_x2) -> IdentityCheck:
    lines = gd_pl_lines(alpha, L, eta, g2_x1, g2_y1, g2_x2, f2_x1, f2_y1, f2_x2)
    g2_x2 = np.atleast_1d(np.asarray(g2_x2, float))
    target = -_sq(g2_x2 - np.atleast_1d(np.asarray(g2_y1, float))) / (4.0 * L)
    scale = 1.0 + max(abs(x) for x in lines + [target])
    return IdentityCheck(abs(float(sum(lines)) - target), scale)


def verify_gd_pl_identity(alpha, L, eta, g2_x1, g2_y1, g2_x2, f2_x1, f2_y1, f2_x2) -> float:
    return check_gd_pl(alpha, L, eta, g2_x1, g2_y1, g2_x2, f2_x1, f2_y1, f2_x2).residual


def verify_descent_chain(trajectory, mu: float, L: float, alpha: float) -> tuple[list[float], float]:
    """Slacks of the single-iteration inequality along a run, and of the target inequality.

    ``trajectory`` is a :class:`~dcapep.dca_engine.TrajectoryReport` whose
    components both belong to ``F_{mu,L}``.  The target slack equals ``L``
    times the sum of the per-step slacks (the chain telescopes).
    """
    declared = (trajectory.class1, trajectory.class2)
    # a narrower declared class is still inside F_{mu,L}
    if any(c.mu < mu or c.L > L for c in declared):
        raise ClassMismatch(
            f"trajectory classes {declared} are not contained in F_(mu={mu}, L={L})")
    if trajectory.alpha != alpha:
        raise ClassMismatch(f"trajectory boost {trajectory.alpha} differs from alpha={alpha}")
    f = trajectory.f_values
    r = trajectory.grad_gap_sq
    w = (0.5 + alpha * mu / L) / L
    per_step = [float(f[k] - f[k + 1] - r[k + 1] / (2.0 * L) - w * r[k]) for k in range(trajectory.N)]

    N = trajectory.N
    lhs = (0.5 + alpha * mu / L) * r[0] + sum((1.0 + alpha * mu / L) * r[i] for i in range(1, N))
    lhs += (1.0 - 0.5 * mu / L) / (1.0 - mu / L) * r[N]
    rhs = L * (f[0] - f[N] + r[N] / (2.0 * (L - mu)))
    return per_step, float(rhs - lhs)


def extract_dual_multipliers(result, threshold: float = 1e-9) -> dict:
    """Non-negligible duals of ``result`` keyed by label, in label order."""
    duals = {lab: val for lab, val in result.duals.items() if abs(val) > threshold}
    return dict(sorted(duals.items(), key=lambda kv: kv[0].sort_key()))


# -- random samples -----------------------------------------------------------

def sample_one_iter(rng: np.random.Generator, dims=range(1, 9)) -> OneIterSample:
    """Standard normal data, log-uniform ``L`` in [0.1, 10], uniform kappa and alpha."""
    d = int(rng.choice(list(dims)))
    L = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
    kappa = float(rng.uniform(0.0, 1.0))
    while kappa == 0.0:
        kappa = float(rng.uniform(0.0, 1.0))
    hi = min(1.0, 2.0 * kappa)
    alpha = float(hi - rng.uniform(0.0, hi))  # (0, hi]
    vec = lambda: rng.standard_normal(d)
    return OneIterSample(vec(), vec(), vec(), vec(), vec(), vec(), vec(),
                         *map(float, rng.standard_normal(5)), mu=kappa * L, L=L, alpha=alpha)


def sample_gd_pl(rng: np.random.Generator, dims=range(1, 9)) -> dict:
    """Keyword arguments for :func:`verify_gd_pl_identity`."""
    d = int(rng.choice(list(dims)))
    L = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
    kappa = float(1.0 - rng.uniform(0.0, 1.0))  # (0, 1]
    alpha = float(rng.uniform(0.0, gd_pl_alpha_max(kappa)))
    g = rng.standard_normal((3, d))
    f = rng.standard_normal(3)
    return dict(alpha=alpha, L=L, eta=kappa * L, g2_x1=g[0], g2_y1=g[1], g2_x2=g[2],
                f2_x1=float(f[0]), f2_y1=float(f[1]), f2_x2=float(f[2]))


@dataclass(frozen=True)
class SuiteReport:
    name: str
    samples: int
    max_residual: float
    max_ratio: float  # max residual / scale; must stay below IDENTITY_RTOL

    @property
    def ok(self) -> bool:
        return self.max_ratio <= IDENTITY_RTOL


def run_one_iter_suite(samples: int, seed: int, dims=range(1, 9)) -> SuiteReport:
    rng = np.random.default_rng(seed)
    worst = ratio = 0.0
    for _ in range(samples):
        chk = check_one_iteration(sample_one_iter(rng, dims))
        worst, ratio = max(worst, chk.residual), max(ratio, chk.residual / chk.scale)
    return SuiteReport("one-iter", samples, worst, ratio)


def run_gd_pl_suite(samples: int, seed: int, dims=range(1, 9)) -> SuiteReport:
    rng = np.random.default_rng(seed)
    worst = ratio = 0.0
    for _ in range(samples):
        chk = check_gd_pl(**sample_gd_pl(rng, dims))
        worst, ratio = max(worst, chk.residual), max(ratio, chk.residual / chk.scale)
    return SuiteReport("gd-pl", samples, worst, ratio)
