import numpy as np
import pytest

from bdsdelab.coefficients import CoefficientSet
from bdsdelab.errors import ValidationError
from bdsdelab.feynman_kac import (FKProblem, evaluate_field, evaluate_u_deterministic, evaluate_u_stochastic,
                                  make_drivers)
from bdsdelab.reflected import interval_domain
from bdsdelab.regression import RegressionConfig

DOM = interval_domain(0.0, 1.0)
MC = RegressionConfig(2, 500, degree=2)


def problem(n_steps=20, **kw):
    kw.setdefault("sigma", [["0.5"]])
    return FKProblem(CoefficientSet.build(**kw), DOM, T=1.0, n_steps=n_steps)


def test_constant_terminal():
    v, s = evaluate_u_deterministic((0.0, 0.4), problem(ell="1.5"), MC, seed=1)
    assert abs(v - 1.5) <= 1e-10


def test_linear_generator_decay():
    pr = problem(n_steps=100, ell="1", f="-0.6*y")
    for t in (0.0, 0.5):
        v, _ = evaluate_u_deterministic((t, 0.5), pr, MC, seed=2)
        assert v == pytest.approx(np.exp(-0.6 * (1 - t)), rel=5e-3)


@pytest.mark.parametrize("route", ["direct", "transform"])
def test_constant_g_gives_backward_increment(route):
    pr = problem(m=1, g=["0.8"])
    drv = make_drivers(pr, MC, 3)
    Bv = drv.B.values()[..., 0]
    for t, k in ((0.0, 0), (0.25, 5)):
        v, _ = evaluate_u_stochastic((t, 0.3), pr, MC, route=route, drivers=drv)
        np.testing.assert_allclose(v, 0.8 * (Bv[:, -1] - Bv[:, k]), atol=1e-10)


def test_terminal_row_is_ell():
    pr = problem(ell="x^2 + 1", m=1, g=["0.1*x"])
    est = evaluate_field([(1.0, 0.3), (1.0, 0.9)], pr, MC, seed=4)
    np.testing.assert_allclose(est.values, [1.09, 1.81], rtol=1e-12)
    assert np.all(est.stderrs == 0)
    with pytest.raises(ValidationError):
        evaluate_field([(1.0, 1.5)], pr, MC)


def test_routes_agree_when_g_vanishes():
    pr = problem(ell="x", f="-0.2*y", h="0.3", m=1, g=["0"])
    drv = make_drivers(pr, MC, 5)
    a, _ = evaluate_u_stochastic((0.0, 0.2), pr, MC, route="direct", drivers=drv)
    b, _ = evaluate_u_stochastic((0.0, 0.2), pr, MC, route="transform", drivers=drv)
    assert np.abs(a - b).max() <= 1e-12


def test_unknown_route_and_deterministic_guard():
    with pytest.raises(ValidationError):
        evaluate_u_stochastic((0.0, 0.5), problem(), MC, route="sideways")
    with pytest.raises(ValidationError):
        evaluate_u_deterministic((0.0, 0.5), problem(m=1, g=["x"]), MC)


@pytest.mark.parametrize("pair", [("x", "x + 0.1"), ("x^2", "x"), ("0", "sin(3*x)^2")])
def test_terminal_monotonicity(pair):
    lo, hi = pair
    pts = [(0.0, 0.2), (0.0, 0.7)]
    kw = dict(f="-0.3*y + 0.1*z", h="0.2 - 0.1*y", m=1, g=["0.2*cos(x)"])
    u1 = evaluate_field(pts, problem(ell=lo, **kw), MC, seed=6)
    u2 = evaluate_field(pts, problem(ell=hi, **kw), MC, seed=6)
    assert np.all(u1.per_path <= u2.per_path + 3 * np.hypot(u1.per_path_stderr, u2.per_path_stderr))


def test_field_is_continuous_in_x():
    pr = problem(ell="x^2*(3 - 2*x)", f="-0.2*y")
    est = evaluate_field([(0.0, 0.48), (0.0, 0.5), (0.0, 0.52)], pr, MC, seed=7)
    gaps = np.abs(np.diff(est.values))
    assert np.all(gaps <= 0.05 + 3 * est.stderrs.max())
    assert est.header() == ["t", "x1", "u", "stderr", "n_outer", "n_inner", "n_steps"]
    assert len(est.rows()) == 3
