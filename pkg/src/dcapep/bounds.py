"""Closed-form convergence bounds for DCA, boosted DCA and the gradient-descent reduction."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ParameterError


@dataclass(frozen=True)
class SublinearBound:
    """Bound on ``min_k ||g1(x^k) - g2(x^k)||^2`` after ``N`` boosted DCA steps."""

    kappa: float
    alpha: float
    N: int
    L: float
    delta: float
    value: float


@dataclass(frozen=True)
class LinearRate:
    """One-step contraction factor of ``f - f*`` for gradient descent under PL."""

    kappa: float
    alpha: float
    beta: float


def max_boost(kappa: float) -> float:
    """Largest boost covered by the sublinear bound: ``min(1, 2 kappa)``."""
    return min(1.0, 2.0 * kappa)


def dca_sublinear_bound(mu: float, L: float, N: int, alpha: float, delta: float) -> SublinearBound:
    """``L delta / ((1 + kappa alpha) N + 1 / (2 (1 - kappa)))`` with ``kappa = mu / L``."""
    mu, L, alpha, delta = float(mu), float(L), float(alpha), float(delta)
    if not (math.isfinite(L) and 0.0 <= mu < L):
        raise ParameterError(f"need 0 <= mu < L < inf, got mu={mu}, L={L}")
    if isinstance(N, bool) or int(N) != N or N < 1:
        raise ParameterError(f"N must be a positive integer, got {N!r}")
    if not delta > 0:
        raise ParameterError(f"delta must be > 0, got {delta}")
    kappa = mu / L
    if not 0.0 <= alpha <= max_boost(kappa):
        raise ParameterError(f"alpha={alpha} outside [0, min(1, 2*kappa)] = [0, {max_boost(kappa)}]")
    value = L * delta / ((1.0 + kappa * alpha) * N + 1.0 / (2.0 * (1.0 - kappa)))
    return SublinearBound(kappa, alpha, int(N), L, delta, value)


def _check_kappa(kappa: float) -> float:
    kappa = float(kappa)
    if not 0.0 < kappa <= 1.0:
        raise ParameterError(f"kappa must lie in (0, 1], got {kappa}")
    return kappa


def gd_pl_alpha_max(kappa: float) -> float:
    """Root of the multiplier ``-k a^2 - (2k^2/(k+2)) a + 2k/(k+2)``."""
    kappa = _check_kappa(kappa)
    return (math.sqrt(kappa * kappa + 2.0 * kappa + 4.0) - kappa) / (2.0 + kappa)


def beta(kappa: float, alpha: float) -> float:
    """The rate parabola, without range checks."""
    return (kappa * alpha * alpha - kappa * (2.0 - 2.0 * kappa) / (kappa + 2.0) * alpha
            + (2.0 - 2.0 * kappa) / (2.0 + kappa))


def gd_pl_rate(kappa: float, alpha: float) -> LinearRate:
    kappa = _check_kappa(kappa)
    alpha = float(alpha)
    hi = gd_pl_alpha_max(kappa)
    if not 0.0 <= alpha <= hi:
        raise ParameterError(f"alpha={alpha} outside the admissible range [0, {hi:.6g}] for kappa={kappa}")
    b = beta(kappa, alpha)
    if not b < 1.0:
        raise ParameterError(f"rate {b} is not a contraction")  # cannot happen on the admissible range
    return LinearRate(kappa, alpha, b)


def optimal_boost(kappa: float) -> tuple[float, float, float]:
    """``(alpha*, rate, step * L)`` minimising the rate parabola."""
    kappa = _check_kappa(kappa)
    alpha_star = (1.0 - kappa) / (2.0 + kappa)
    rate = (4.0 - kappa**3 - 3.0 * kappa) / (2.0 + kappa) ** 2
    return alpha_star, rate, 3.0 / (2.0 + kappa)


def prior_step_length(kappa: float, L: float) -> float:
    """Best previously known step length for gradient descent under PL."""
    return min(3.0 / (2.0 * L), 2.0 / ((1.0 + math.sqrt(kappa)) * L))
