import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from risuav import convex_core as cc


def quad():
    x = cp.Variable()
    return cc.ConvexProgram(cp.Problem(cp.Minimize(cp.square(x)), [x >= 1])), x


def lograte():
    x = cp.Variable()
    return cc.ConvexProgram(cp.Problem(cp.Maximize(cp.log(1 + x) / np.log(2) - x), [x >= 0])), x


def sdp2(C=np.array([[0.0, 1.0], [1.0, 0.0]])):
    X = cp.Variable((2, 2), symmetric=True)
    prob = cp.Problem(cp.Maximize(cp.trace(C @ X)), [X >> 0, cp.diag(X) == 1])
    return cc.ConvexProgram(prob, kind="sdp", sdp_variable=X, sdp_gradient=lambda _: C), X


def test_quadratic_example():
    p, x = quad()
    rep = cc.solve(p)
    assert rep.status == cc.OPTIMAL
    assert rep.values[x] == pytest.approx(1.0, abs=1e-6)
    assert rep.objective == pytest.approx(1.0, abs=1e-6)
    assert rep.kkt_residual <= cc.NLP_TOL


def test_log_rate_example():
    p, x = lograte()
    rep = cc.solve(p)
    assert rep.status == cc.OPTIMAL
    assert rep.values[x] == pytest.approx(1 / np.log(2) - 1, abs=1e-6)
    assert 1 / np.log(2) - 1 == pytest.approx(0.4427, abs=1e-4)


def test_sdp_example():
    p, X = sdp2()
    rep = cc.solve(p)
    assert rep.status == cc.OPTIMAL
    assert rep.objective == pytest.approx(2.0, abs=1e-6)
    assert np.allclose(rep.values[X], np.ones((2, 2)), atol=1e-4)
    assert rep.kkt_residual <= cc.SDP_TOL


def test_kkt_residual_points():
    p, x = quad()
    assert cc.kkt_residual(p, {x: 1.0}) <= 1e-12
    assert cc.kkt_residual(p, {x: 2.0}) > cc.NLP_TOL
    q, y = lograte()
    assert cc.kkt_residual(q, {y: 1 / np.log(2) - 1}) <= 1e-12
    assert cc.kkt_residual(q, {y: 0.1}) > cc.NLP_TOL


def test_sdp_residual_detects_suboptimal():
    p, X = sdp2()
    assert cc.kkt_residual(p, {X: np.eye(2)}) > cc.SDP_TOL
    assert cc.kkt_residual(p, {X: np.ones((2, 2))}) <= 1e-12


def test_infeasible_reported():
    x = cp.Variable()
    rep = cc.solve(cc.ConvexProgram(cp.Problem(cp.Minimize(x), [x >= 1, x <= 0])))
    assert rep.status == cc.INFEASIBLE
    assert not rep.ok


def test_validate_rejects_nonconvex():
    x = cp.Variable()
    with pytest.raises(ValueError):
        cc.ConvexProgram(cp.Problem(cp.Maximize(cp.square(x)), [x <= 1])).validate()
    with pytest.raises(ValueError):
        cc.ConvexProgram(cp.Problem(cp.Minimize(x), []), kind="qp").validate()


def test_deterministic_reports():
    a, b = cc.solve(lograte()[0]), cc.solve(lograte()[0])
    assert a.status == b.status and a.objective == b.objective


@given(c=st.lists(st.floats(0.1, 5.0), min_size=3, max_size=3), lo=st.floats(0.0, 2.0))
def test_local_optimality_probe(c, lo):
    # separable concave rate program with a budget, perturbed along feasible directions
    x = cp.Variable(3)
    w = np.asarray(c)
    prob = cp.Problem(cp.Maximize(cp.sum(cp.log(1 + cp.multiply(w, x))) - 0.3 * cp.sum(x)),
                      [x >= lo, cp.sum(x) <= lo * 3 + 4])
    p = cc.ConvexProgram(prob)
    rep = cc.solve(p)
    assert rep.status == cc.OPTIMAL
    x0 = rep.values[x]
    f = lambda v: float(np.sum(np.log1p(w * v)) - 0.3 * np.sum(v))
    f0 = f(x0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = rng.standard_normal(3)
        y = x0 + 1e-3 * d / np.linalg.norm(d)
        if np.all(y >= lo) and y.sum() <= lo * 3 + 4:
            assert f(y) <= f0 + 1e-6
