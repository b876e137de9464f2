import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcapep.bounds import dca_sublinear_bound, gd_pl_rate, optimal_boost
from dcapep.dca_engine import (
    DCInstance,
    QuadraticDC,
    SmoothOracle,
    bisection_linearized_solver,
    check_descent_direction,
    gd_as_dca,
    pl_ratio_check,
    quadratic_oracle,
    random_quadratic_dc,
    run_bdca,
    run_dca,
)
from dcapep.errors import BoundViolation, DimensionMismatch, ParameterError, SubproblemFailure
from dcapep.pep_model import CurvatureClass, DiscreteTriple, MethodConfig, build_pep, interpolation_residual
from dcapep.sdp_backend import solve_pep

C02 = CurvatureClass(0.0, 2.0)


def halving():
    """f1 = x^2, f2 = x^2 / 2."""
    return QuadraticDC(np.array([[2.0]]), np.array([[1.0]]), None, None, 0.0, 0.0, C02, C02)


def test_dca_halving_oracle():
    tr = run_dca(halving().instance(), [1.0], 2)
    np.testing.assert_allclose(tr.x[:, 0], [1.0, 0.5, 0.25], rtol=1e-15)
    np.testing.assert_allclose(tr.f_values, [0.5, 0.125, 0.03125], rtol=1e-14)


def test_bdca_lands_on_minimizer():
    tr = run_bdca(halving().instance(), [1.0], 1, 1.0)
    assert tr.y[0, 0] == pytest.approx(0.5)
    assert tr.x[1, 0] == pytest.approx(0.0, abs=1e-15)


def test_fixed_point_start():
    q = random_quadratic_dc(np.random.default_rng(0), 3)
    tr = run_dca(q.instance(), q.minimizer(), 3)
    np.testing.assert_allclose(tr.x, np.tile(q.minimizer(), (4, 1)), atol=1e-12)


def test_alpha_zero_matches_dca_exactly():
    q = random_quadratic_dc(np.random.default_rng(1), 4)
    x1 = np.arange(4.0)
    a, b = run_dca(q.instance(), x1, 5), run_bdca(q.instance(), x1, 5, 0.0)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.f_values, b.f_values)


def test_run_validation():
    inst = halving().instance()
    with pytest.raises(ParameterError):
        run_bdca(inst, [1.0], 0, 0.0)
    with pytest.raises(ParameterError):
        run_bdca(inst, [1.0], 1, 1.5)
    with pytest.raises(DimensionMismatch):
        run_bdca(inst, [1.0, 2.0], 1, 0.0)


def test_bad_subproblem_solver_detected():
    base = halving().instance()
    lying = DCInstance(1, base.f1_value, base.f2_value, base.f1_subgrad, base.f2_subgrad,
                       lambda g: np.asarray(g) * 0.9, C02, C02)
    with pytest.raises(SubproblemFailure):
        run_dca(lying, [1.0], 1)


def test_quadratic_validation():
    with pytest.raises(ParameterError):  # eigenvalue 3 outside [0, 2]
        QuadraticDC(np.diag([3.0]), np.diag([1.0]), None, None, 0, 0, C02, C02)
    with pytest.raises(ParameterError):  # A1 singular
        QuadraticDC(np.diag([0.0, 1.0]), np.diag([0.0, 0.0]), None, None, 0, 0, C02, C02)
    with pytest.raises(ParameterError):
        QuadraticDC(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2), None, None, 0, 0, C02, C02)
    with pytest.raises(DimensionMismatch):
        QuadraticDC(np.eye(2), np.eye(3), None, None, 0, 0, C02, C02)


def test_f_star():
    assert halving().f_star() == 0.0
    q = QuadraticDC(np.eye(1), np.eye(1), np.array([1.0]), None, 0, 0, C02, C02)
    assert q.f_star() == -np.inf  # f(x) = x
    q = QuadraticDC(np.eye(1) * 2, np.eye(1), np.array([1.0]), None, 3.0, 0, C02, C02)
    assert q.f_star() == pytest.approx(2.5)  # x^2/2 + x + 3


def test_instance_file_round_trip(tmp_path):
    q = random_quadratic_dc(np.random.default_rng(2), 3)
    path = tmp_path / "q.json"
    q.save(path)
    r = QuadraticDC.load(path)
    np.testing.assert_array_equal(r.A1, q.A1)
    np.testing.assert_array_equal(r.b2, q.b2)
    assert r.class1 == q.class1
    d = json.loads(path.read_text())
    d["A1"][0][0] = 50.0
    path.write_text(json.dumps(d))
    with pytest.raises(ParameterError):
        QuadraticDC.load(path)
    path.write_text("{not json")
    with pytest.raises(ParameterError):
        QuadraticDC.load(path)
    d = q.to_dict()
    d["dim"] = 4
    with pytest.raises(DimensionMismatch):
        QuadraticDC.from_dict(d)


def test_random_generator_in_class():
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = random_quadratic_dc(rng, 4, 0.5, 1.0)
        for A in (q.A1, q.A2):
            w = np.linalg.eigvalsh(A)
            assert 0.5 - 1e-12 <= w[0] and w[-1] <= 1.0 + 1e-12
        assert np.isfinite(q.f_star())


# -- run-level properties ---------------------------------------------------------------

@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95), st.floats(0, 1))
def test_run_properties(seed, kappa, t):
    rng = np.random.default_rng(seed)
    alpha = t * min(1.0, 2 * kappa)
    q = random_quadratic_dc(rng, int(rng.integers(1, 5)), kappa, 1.0)
    inst = q.instance()
    tr = run_bdca(inst, 3 * rng.standard_normal(q.dim), 5, alpha)
    scale = 1 + np.abs(tr.f_values).max()
    assert np.all(np.diff(tr.f_values) <= 1e-12 * scale)
    assert check_descent_direction(tr, inst.grad_f, kappa) >= -1e-9 * scale
    np.testing.assert_allclose(tr.x[1:], tr.y + alpha * (tr.y - tr.x[:-1]), atol=1e-12 * scale)
    # consecutive samples are interpolable in the declared classes
    f1, f2 = inst.f1_value, inst.f2_value
    for k in range(tr.N):
        for fv, g, cls in ((f1, tr.g1, q.class1), (f2, tr.g2, q.class2)):
            a = DiscreteTriple(tr.x[k], g[k], fv(tr.x[k]))
            b = DiscreteTriple(tr.x[k + 1], g[k + 1], fv(tr.x[k + 1]))
            assert interpolation_residual(a, b, cls) <= 1e-9 * scale
            assert interpolation_residual(b, a, cls) <= 1e-9 * scale


def test_misdeclared_instance_is_caught():
    """Lying about the class shows up as an interpolation violation along the run."""
    true = random_quadratic_dc(np.random.default_rng(4), 3, 0.5, 1.0)
    inst = true.instance()
    tr = run_dca(inst, np.ones(3) * 4, 3)
    claim = CurvatureClass(0.0, 0.4)
    worst = max(interpolation_residual(DiscreteTriple(tr.x[k], tr.g1[k], inst.f1_value(tr.x[k])),
                                       DiscreteTriple(tr.x[k + 1], tr.g1[k + 1], inst.f1_value(tr.x[k + 1])), claim)
                for k in range(3))
    assert worst > 1e-6


def test_measure_below_dca_bound():
    rng = np.random.default_rng(5)
    for _ in range(20):
        q = random_quadratic_dc(rng, 3, 0.5, 1.0)
        inst = q.instance()
        tr = run_dca(inst, 3 * rng.standard_normal(3), 4)
        delta = tr.f_values[0] - inst.f_star
        assert tr.measure <= dca_sublinear_bound(0.5, 1.0, 4, 0.0, delta).value * (1 + 1e-12)


def test_measure_below_pep_value():
    c = CurvatureClass(0.25, 1.0)
    opt = solve_pep(build_pep(c, c, MethodConfig(3, 0.5)))[2].opt_value
    rng = np.random.default_rng(6)
    for _ in range(100):
        q = random_quadratic_dc(rng, int(rng.integers(1, 5)), 0.25, 1.0)
        inst = q.instance()
        tr = run_bdca(inst, 3 * rng.standard_normal(q.dim), 3, 0.5)
        assert tr.measure <= (tr.f_values[0] - inst.f_star) * opt * (1 + 1e-6)


def test_descent_direction_mu_zero_and_fixed_point():
    q = random_quadratic_dc(np.random.default_rng(7), 2, 0.5, 1.0)
    inst = q.instance()
    assert check_descent_direction(run_dca(inst, q.minimizer(), 2), inst.grad_f, 0.5) == pytest.approx(0, abs=1e-12)
    tr = run_dca(inst, np.ones(2), 3)
    assert check_descent_direction(tr, inst.grad_f, 0.0) >= check_descent_direction(tr, inst.grad_f, 0.5)


# -- gradient descent reduction -----------------------------------------------------------

def test_gd_equivalence():
    rng = np.random.default_rng(8)
    H = np.diag([0.3, -0.7, 1.0])
    f = quadratic_oracle(H, rng.standard_normal(3))
    for alpha in (0.0, 0.4, 1.0):
        inst = gd_as_dca(f, 1.0, dim=3)
        tr = run_bdca(inst, rng.standard_normal(3), 4, alpha)
        for k in range(4):
            np.testing.assert_allclose(tr.x[k + 1], tr.x[k] - (1 + alpha) * f.grad(tr.x[k]), atol=1e-12)


def test_gd_canonical_quadratic():
    inst = gd_as_dca(quadratic_oracle(np.eye(2)), 1.0)
    tr = run_dca(inst, np.array([3.0, -1.0]), 1)
    np.testing.assert_allclose(tr.x[1], 0.0, atol=1e-15)
    tr = run_bdca(gd_as_dca(quadratic_oracle(np.eye(1) * 0.25), 1.0), [1.0], 1, 1.0)
    assert tr.x[1, 0] == pytest.approx(1 - 2 * 0.25)  # step 2/L


def test_pl_ratio_oracles():
    assert pl_ratio_check(gd_as_dca(quadratic_oracle(np.eye(1)), 1.0), 1.0, [0.0], 0.0) == 0.0
    assert pl_ratio_check(gd_as_dca(quadratic_oracle(np.eye(2)), 1.0), 1.0, [1.0, 2.0], 0.0) == 0.0
    r = pl_ratio_check(gd_as_dca(quadratic_oracle(np.eye(1) * 0.5), 1.0), 0.5, [1.0], 0.2)
    assert r == pytest.approx(0.16, rel=1e-14)
    assert r <= gd_pl_rate(0.5, 0.2).beta


@pytest.mark.parametrize("kappa", [0.1, 0.25, 0.5, 0.75, 1.0])
def test_pl_ratio_at_optimal_boost(kappa):
    a_star, rate, _ = optimal_boost(kappa)
    r = pl_ratio_check(gd_as_dca(quadratic_oracle(np.eye(1) * kappa), 1.0), kappa, [2.0], a_star)
    assert r == pytest.approx((1 - (1 + a_star) * kappa) ** 2, abs=1e-14)
    assert r <= rate + 1e-12


def test_pl_ratio_flags_violation():
    # claim eta = 1 on a function whose one-step contraction is far worse
    f = quadratic_oracle(np.eye(1) * 0.1)
    with pytest.raises(BoundViolation):
        pl_ratio_check(gd_as_dca(f, 1.0), 1.0, [1.0], 0.0)
    with pytest.raises(ParameterError):
        pl_ratio_check(gd_as_dca(SmoothOracle(lambda x: 0.0, lambda x: 0 * x), 1.0), 0.5, [1.0], 0.0)


# -- scalar fallback solver --------------------------------------------------------------

def test_bisection_solver():
    # f1(x) = x^4/4 + x^2/2 (strictly convex, not quadratic)
    d1 = lambda x: x**3 + x
    solve = bisection_linearized_solver(d1)
    for g in (-30.0, -0.5, 0.0, 2.0, 1e3):
        y = solve(np.array([g]))
        assert d1(y[0]) == pytest.approx(g, abs=1e-9 * (1 + abs(g)))
    c = CurvatureClass(0.0, 50.0)
    inst = DCInstance(1, lambda x: float(x[0] ** 4 / 4 + x[0] ** 2 / 2), lambda x: float(x[0] ** 2),
                      lambda x: np.array([d1(x[0])]), lambda x: 2 * x, solve, c, c)
    tr = run_dca(inst, [2.0], 6)
    assert np.all(np.diff(tr.f_values) <= 1e-12)
    assert tr.x[-1, 0] == pytest.approx(1.0, abs=1e-2)  # critical point x^3 + x = 2x
