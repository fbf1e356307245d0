import numpy as np
import pytest

from nonlocal_rd import reactions as R


def broken():
    return R.polynomial(1, [(0, -1.0, (0,))], name="broken")


def test_builtin_metadata_valid():
    for factory in R.BUILTINS.values():
        s = factory()
        assert s.eval(0.0, np.ones((s.m, 4))).shape == (s.m, 4)


def test_invalid_intsum_matrix():
    with pytest.raises(ValueError):
        R.ReactionSystem("x", 2, lambda t, u: u, intsum_matrix=((1.0, 1.0), (0.0, 1.0)))
    with pytest.raises(ValueError):
        R.ReactionSystem("x", 2, lambda t, u: u, intsum_matrix=((2.0, 0.0), (0.0, 1.0)))
    with pytest.raises(ValueError):
        R.ReactionSystem("x", 2, lambda t, u: u, qbal_weights=(1.0, -1.0))


def test_gray_scott_faces():
    gs = R.gray_scott(0.25, 0.080)
    u = np.array([[0.0, 0.0], [0.3, 5.0]])
    np.testing.assert_allclose(gs.eval(0, u)[0], 0.25)
    u = np.array([[0.7, 3.0], [0.0, 0.0]])
    np.testing.assert_array_equal(gs.eval(0, u)[1], 0.0)
    np.testing.assert_array_equal(gs.eval(0, np.array([1.0, 0.0])), [0.0, 0.0])


def test_all_builtins_pass_audit():
    for factory in R.BUILTINS.values():
        for rep in R.audit(factory()):
            assert rep.passed, rep.summary()


def test_broken_field_fails_qp_with_reproducible_witness():
    s = broken()
    a = R.check_quasi_positivity(s)
    b = R.check_quasi_positivity(s)
    assert not a.passed
    assert a.witness_u == b.witness_u and a.estimate == b.estimate
    assert s.eval(a.witness_t, np.array(a.witness_u))[0] == a.estimate == -1.0


def test_qbal_estimates():
    assert R.check_qbal(R.reversible_chem()).estimate <= 1e-12
    assert R.check_qbal(R.rumor()).estimate <= 1e-12
    gs = R.check_qbal(R.gray_scott())
    assert gs.passed and 0.2 < gs.estimate <= 0.25 + 1e-12


def test_qbal_requires_weights():
    with pytest.raises(ValueError):
        R.check_qbal(R.ReactionSystem("bare", 2, lambda t, u: u))


def test_balance_identity_pointwise():
    rng = np.random.default_rng(3)
    for s in (R.reversible_chem(), R.rumor()):
        u = rng.uniform(0, 1e3, size=(s.m, 10_000))
        f = s.eval(0.0, u)
        lhs = np.abs(np.asarray(s.qbal_weights) @ f)
        assert np.all(lhs <= 1e-9 * (1 + np.abs(f).sum(axis=0)))


def test_intsum():
    rc = R.check_intsum(R.reversible_chem(k1=1.0, k2=0.5))
    assert rc.passed and rc.details["L_k"][0] <= 2 * 0.5 + 1e-12
    rumor = R.check_intsum(R.rumor())
    assert rumor.passed and max(rumor.details["L_k"]) <= 1e-12
    gs = R.gray_scott()
    gs_rows = R.ReactionSystem("gs_rows", 2, gs.func, intsum_matrix=((1.0, 0.0), (1.0, 1.0)), intsum_bound=0.25)
    assert R.check_intsum(gs_rows).passed


def test_intsum_periodic():
    assert R.check_intsum_periodic(R.gray_scott()).passed
    assert R.check_intsum_periodic(R.damped_source(1.0, 0.5, 3)).passed
    bad = R.ReactionSystem("bad", 1, lambda t, u: np.ones_like(u),
                           periodic_damping=R.PeriodicDamping(0.0, 5.0, 0.1, 1.0))
    rep = R.check_intsum_periodic(bad)
    assert not rep.passed and rep.witness_u is not None


def test_periodic_b():
    pd = R.PeriodicDamping(1.0, 2.0, 0.25, 1.0)
    np.testing.assert_array_equal(pd.b([0.0, 0.2, 0.3, 1.1, 1.5]), [0, 0, 2, 0, 2])


def test_poly_degree():
    assert R.estimate_poly_degree(R.gray_scott()) == 3
    assert R.estimate_poly_degree(R.rumor()) == 2
    assert R.estimate_poly_degree(R.reversible_chem()) == 2
    assert R.estimate_poly_degree(R.linear_decay(1.0, 1)) == 1
    for s in R.BUILTINS.values():
        sys_ = s()
        assert R.estimate_poly_degree(sys_) == sys_.poly_degree


def test_poly_degree_rejects_exponential():
    s = R.ReactionSystem("exp", 1, lambda t, u: np.exp(u))
    with pytest.raises(R.PolynomialFitError):
        R.estimate_poly_degree(s)


def test_custom_polynomial():
    s = R.polynomial(2, [(0, 2.0, (1, 1)), (1, -1.0, (0, 2))])
    np.testing.assert_allclose(s.eval(0.0, np.array([2.0, 3.0])), [12.0, -9.0])
    assert s.poly_degree == 2
    with pytest.raises(ValueError):
        R.polynomial(2, [(2, 1.0, (0, 0))])


def test_eval_purity():
    s = R.rumor()
    u = np.random.default_rng(1).random((5, 50))
    assert np.array_equal(s.eval(0.0, u), s.eval(0.0, u))


def test_report_summary_mentions_witness():
    rep = R.check_quasi_positivity(broken())
    assert "FAIL" in rep.summary() and "witness" in rep.summary()
    assert rep.note == R.SAMPLER_NOTE
