import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcapep.errors import FactorizationError, InternalError
from dcapep.gram_builder import (
    BasisMap,
    EQ,
    LE,
    assign_basis,
    compile_pep,
    emit_sdp,
    gram_factor,
    reconstruct_certificate,
    shared_name,
)
from dcapep.pep_model import (
    ConstraintKind,
    CurvatureClass,
    DiscreteTriple,
    MethodConfig,
    X,
    Y,
    build_pep,
    interpolation_residual,
)
from dcapep.sdp_backend import Status, SolveResult, solve, solve_pep


def pep(N, alpha=0.0, mu1=0.0, L1=1.0, mu2=0.0, L2=1.0, delta=1.0, eta=None):
    return build_pep(CurvatureClass(mu1, L1), CurvatureClass(mu2, L2), MethodConfig(N, alpha), delta, eta)


# -- basis -----------------------------------------------------------------------

@pytest.mark.parametrize("N,size", [(1, 6), (12, 50)])
def test_basis_size(N, size):
    assert assign_basis(pep(N, 0.3)).size == size


def test_basis_order():
    b = assign_basis(pep(2, 0.5))
    assert b.basis == ("y1", "y2", "g1(x1)", "g1(x2)", "g1(x3)", shared_name(1), shared_name(2),
                       "g2(y1)", "g2(y2)", "g2(x3)")


@given(st.integers(1, 6), st.floats(0, 1), st.booleans(), st.booleans())
def test_basis_invariants(N, alpha, gauge, merge):
    p = pep(N, alpha)
    b = assign_basis(p, gauge_fix=gauge, merge_coincident=merge)
    assert not b.point(X(1)).any()
    for k in range(1, N + 1):
        np.testing.assert_array_equal(b.grad(1, Y(k)), b.grad(2, X(k)))
        np.testing.assert_allclose(b.point(X(k + 1)), (1 + alpha) * b.point(Y(k)) - alpha * b.point(X(k)),
                                   atol=1e-15)
    expected = 4 * N + 2 - (1 if gauge else 0)
    if merge and alpha == 0:
        expected -= 2 * N
    assert b.size == expected


def test_reduced_basis_is_default_for_compile():
    b, inst = compile_pep(pep(3, 0.5))
    assert b.size == 4 * 3 + 1 and inst.gram_dim == b.size
    assert not b.grad(2, X(1)).any()


def test_missing_expansion_raises():
    b = assign_basis(pep(1, 0.5))
    broken = BasisMap(b.basis, {k: v for k, v in b.expansion.items() if k != "g2(y1)"}, b.value_names, 1, 0.5)
    with pytest.raises(InternalError):
        emit_sdp(pep(1, 0.5), broken)


# -- emitted rows ---------------------------------------------------------------------

def test_emit_counts_N1():
    p = pep(1)
    inst = emit_sdp(p, assign_basis(p))
    assert len(inst.rows) == 18 and inst.gram_dim == 6 and inst.value_dim == 6
    assert [str(l) for l in inst.eliminated] == ["GradLink(1)", "StepLink(1)"]
    p = pep(1, eta=0.5)
    assert len(emit_sdp(p, assign_basis(p)).rows) == 21


def test_row_structure():
    p = pep(2, 0.5, delta=2.5)
    inst = emit_sdp(p, assign_basis(p))
    for row in inst.rows:
        np.testing.assert_array_equal(row.gram, row.gram.T)
        assert row.sense in (LE, EQ)
    gap = next(r for r in inst.rows if r.label.kind is ConstraintKind.INIT_GAP)
    assert not gap.gram.any() and gap.rhs == 2.5 and gap.epi == 0
    coeffs = dict(zip(inst.value_names, gap.values))
    assert coeffs.pop("f1(x1)") == 1 and coeffs.pop("f2(x1)") == -1 and not any(coeffs.values())
    b = assign_basis(p)
    for r in inst.rows:
        if r.label.kind is ConstraintKind.OBJ_EPI:
            d = b.grad(1, X(r.label.k)) - b.grad(2, X(r.label.k))
            assert r.epi == 1 and r.rhs == 0 and r.sense == LE
            np.testing.assert_array_equal(r.gram, -np.outer(d, d))


@settings(max_examples=40)
@given(st.integers(1, 4), st.floats(0, 1), st.floats(0, 0.9), st.floats(0, 0.9), st.booleans(),
       st.integers(0, 2**32 - 1))
def test_rows_match_direct_evaluation(N, alpha, k1, k2, reduced, seed):
    """Each SDP row, evaluated at a random Gram factor, equals the residual computed on vectors."""
    rng = np.random.default_rng(seed)
    p = pep(N, alpha, mu1=k1 * 2, L1=2, mu2=k2, L2=1, eta=0.7)
    b = assign_basis(p, gauge_fix=reduced, merge_coincident=reduced)
    inst = emit_sdp(p, b)
    V = rng.standard_normal((3, b.size))
    G = V.T @ V
    F = rng.standard_normal(inst.value_dim)
    t = float(rng.standard_normal())
    lhs = inst.row_values(G, F, t)
    vec = lambda name: V @ b.row(name)

    def val(ell, u):
        Gc, Fc = b.value(ell, u)
        return float(np.sum(Gc * G) + Fc @ F)

    for row, got in zip(inst.rows, lhs):
        lab = row.label
        if lab.kind is ConstraintKind.INTERP:
            cls = p.class1 if lab.ell == 1 else p.class2
            ti = DiscreteTriple(vec(str(lab.u)), vec(f"g{lab.ell}({lab.u})"), val(lab.ell, lab.u))
            tj = DiscreteTriple(vec(str(lab.v)), vec(f"g{lab.ell}({lab.v})"), val(lab.ell, lab.v))
            want = interpolation_residual(ti, tj, cls)
        else:
            u = lab.u if lab.u is not None else X(lab.k or 1)
            d = vec(f"g1({u})") - vec(f"g2({u})")
            fgap = val(1, u) - val(2, u)
            want = {
                ConstraintKind.DESCENT_LB: d @ d / (2 * p.descent_curvature) - fgap,
                ConstraintKind.INIT_GAP: fgap,
                ConstraintKind.PL: fgap - d @ d / (2 * 0.7),
                ConstraintKind.OBJ_EPI: t - d @ d,
            }[lab.kind]
        assert got == pytest.approx(want, abs=1e-9 * (1 + abs(want) + np.abs(G).max()))


# -- certificates -----------------------------------------------------------------------

def test_gram_factor_rank_and_errors():
    V = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 1.0]])
    W = gram_factor(V.T @ V)
    assert W.shape == (2, 3)
    np.testing.assert_allclose(W.T @ W, V.T @ V, atol=1e-12)
    assert gram_factor(np.zeros((3, 3))).shape == (0, 3)
    with pytest.raises(FactorizationError):
        gram_factor(np.diag([1.0, -0.1]))


def test_certificate_on_zero_gram():
    p = pep(1, 0.5)
    b = assign_basis(p)
    res = SolveResult(Status.OPTIMAL, 0.0, np.zeros((b.size, b.size)), np.arange(len(b.value_names), dtype=float),
                      0.0, {}, 0.0)
    cert = reconstruct_certificate(p, b, res)
    assert cert.dimension == 0
    assert all(not t.point.any() and not t.grad.any() for t in cert.triples1.values())
    assert cert.triples1[X(1)].value == b.value_names.index("f1(x1)")


def test_certificate_at_optimum():
    p = pep(1, 0.0)
    b, inst, res = solve_pep(p)
    cert = reconstruct_certificate(p, b, res)
    assert cert.max_residual <= 1e-6
    assert cert.dimension <= inst.gram_dim
    for k in (1,):
        np.testing.assert_array_equal(cert.triples1[Y(k)].grad, cert.triples2[X(k)].grad)
    # worst case attains the measure at every iterate
    gaps = [np.sum((cert.triples1[X(k)].grad - cert.triples2[X(k)].grad) ** 2) for k in (1, 2)]
    assert min(gaps) == pytest.approx(res.opt_value, rel=1e-5)


def test_full_and_reduced_bases_agree():
    p = pep(2, 0.5, mu1=0.25, mu2=0.25)
    full = solve(emit_sdp(p, assign_basis(p))).opt_value
    _, _, red = solve_pep(p)
    assert full == pytest.approx(red.opt_value, rel=1e-5)


# -- numeric invariants ------------------------------------------------------------------

def opt(*args, **kw):
    return solve_pep(pep(*args, **kw))[2].opt_value


@pytest.mark.parametrize("c", [0.5, 3.0])
def test_homogeneity_in_delta(c):
    base = opt(2, 0.5, mu1=0.25, mu2=0.25)
    assert opt(2, 0.5, mu1=0.25, mu2=0.25, delta=c) == pytest.approx(c * base, rel=1e-5)


@pytest.mark.parametrize("s", [0.5, 2.0])
def test_parameter_scaling(s):
    base = opt(2, 0.25, mu1=0.5, L1=1.0, mu2=0.25, L2=2.0)
    scaled = opt(2, 0.25, mu1=0.5 * s, L1=s, mu2=0.25 * s, L2=2 * s, delta=s)
    assert scaled == pytest.approx(s * s * base, rel=1e-4)


def test_monotone_in_N():
    vals = [opt(N, 0.5, mu1=0.5, mu2=0.5) for N in range(1, 5)]
    assert all(b <= a + 1e-7 for a, b in zip(vals, vals[1:]))
