import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from bdsdelab.coefficients import CoefficientSet
from bdsdelab.errors import JumpLeavesDomain, ValidationError
from bdsdelab.paths import LevySpec, TimeGrid, gen_brownian, gen_jump_measure
from bdsdelab.reflected import (DomainSpec, interval_domain, project_to_boundary, simulate_euler,
                                simulate_reflected)
from bdsdelab.rng import RngStream

BM = CoefficientSet.build(sigma=[["1"]])


def test_no_dynamics_stays_put():
    g = TimeGrid(1.0, 20)
    W = gen_brownian(g, 1, RngStream(0, "W"), 7)
    st_ = simulate_reflected((0.0, [0.3]), CoefficientSet.build(), interval_domain(0, 1), W)
    assert np.all(st_.X == 0.3)
    assert np.all(st_.A_local.values() == 0)


def test_interval_invariance_over_many_paths():
    g = TimeGrid(1.0, 200)
    dom = interval_domain(0.0, 1.0)
    W = gen_brownian(g, 1, RngStream(2, "W"), 1000)
    st_ = simulate_reflected((0.0, [0.5]), BM, dom, W)
    assert np.mean(dom.value(st_.X) < -dom.boundary_tol) == 0.0
    assert st_.contact.any()


def test_reflected_bm_law():
    g = TimeGrid(1.0, 400)
    W = gen_brownian(g, 1, RngStream(1, "W"), 4000)
    XT = simulate_reflected((0.0, [0.5]), BM, DomainSpec("tanh(x)"), W).X[:, -1, 0]
    cdf = lambda y: stats.norm.cdf(y - 0.5) - stats.norm.cdf(-y - 0.5)
    assert stats.kstest(XT, cdf).statistic <= 0.03


def test_projection_examples():
    xp, d = project_to_boundary(np.array([-0.2]), DomainSpec("x"))
    assert xp[0] == pytest.approx(0.0, abs=1e-12) and d == pytest.approx(0.2, abs=1e-12)
    disk = DomainSpec("1 - sqrt(x1^2 + x2^2 + 1e-12)", 2)
    xp, d = project_to_boundary(np.array([1.1, 0.0]), disk)
    np.testing.assert_allclose(xp, [1.0, 0.0], atol=1e-6)
    assert d == pytest.approx(0.1, abs=1e-6)
    with pytest.raises(ValidationError):
        project_to_boundary(np.array([0.0]), DomainSpec("x"))


def test_projection_lands_on_boundary_along_normal():
    dom = DomainSpec("1 - sqrt(x1^2 + 4*x2^2 + 1e-12)", 2)
    rng = np.random.default_rng(0)
    ang = rng.uniform(0, 2 * np.pi, 200)
    r = rng.uniform(1.001, 1.1, 200)
    pts = np.stack([r * np.cos(ang), 0.5 * r * np.sin(ang)], axis=-1)
    xp, d = project_to_boundary(pts, dom)
    assert np.max(np.abs(dom.value(xp))) <= 1e-10
    n = dom.grad(xp)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    np.testing.assert_allclose(xp, pts + d[:, None] * n, atol=1e-8)


def test_local_time_only_grows_on_the_boundary():
    g = TimeGrid(1.0, 100)
    dom = interval_domain(0.0, 1.0)
    W = gen_brownian(g, 1, RngStream(4, "W"), 300)
    st_ = simulate_reflected((0.0, [0.2]), CoefficientSet.build(sigma=[["1.5"]], b=["0.3"]), dom, W)
    dA = st_.A_local.increments()
    inside = dom.value(st_.X[:, 1:]) > dom.boundary_tol
    assert np.sum(dA[inside]) == 0.0
    assert np.all(dA >= 0)


def test_interior_matches_plain_euler_bit_for_bit():
    g = TimeGrid(0.01, 10)
    lev = LevySpec((0.01,), (1.0,))
    cs = CoefficientSet.build(sigma=[["0.2"]], b=["x"], gamma=["e*x"], levy=lev)
    W = gen_brownian(g, 1, RngStream(3, "W"), 200)
    N = gen_jump_measure(g, lev, RngStream(3, "N"), 200)
    a = simulate_reflected((0.0, [0.5]), cs, interval_domain(0, 1), W, N)
    b = simulate_euler((0.0, [0.5]), cs, W, N)
    assert not a.contact.any()
    assert np.array_equal(a.X, b.X)


def test_jump_outside_domain_is_an_error():
    g = TimeGrid(1.0, 10)
    lev = LevySpec((1.0,), (20.0,))
    cs = CoefficientSet.build(gamma=["e"], levy=lev)
    W = gen_brownian(g, 1, RngStream(0, "W"), 20)
    N = gen_jump_measure(g, lev, RngStream(0, "N"), 20)
    with pytest.raises(JumpLeavesDomain):
        simulate_reflected((0.0, [0.5]), cs, interval_domain(0, 1), W, N)


def test_start_outside_domain_rejected():
    W = gen_brownian(TimeGrid(1.0, 4), 1, RngStream(0, "W"), 2)
    with pytest.raises(ValidationError):
        simulate_reflected((0.0, [1.5]), BM, interval_domain(0, 1), W)


def test_restricted_start_time_uses_grid_tail():
    g = TimeGrid(1.0, 10)
    W = gen_brownian(g, 1, RngStream(0, "W"), 4)
    st_ = simulate_reflected((0.6, [0.5]), BM, interval_domain(0, 1), W)
    assert st_.X.shape == (4, 5, 1)
    np.testing.assert_allclose(st_.grid.times, g.times[6:])


def test_unit_gradient_check():
    assert DomainSpec("x*(2 - x)/2", 1, bbox=((-1.0, 3.0),)).check() <= 1e-6
    with pytest.warns(UserWarning):
        DomainSpec("2*x*(1 - x)", 1, bbox=((-1.0, 2.0),)).check()


def test_flow_regularity_ratio_stays_bounded():
    g = TimeGrid(0.5, 100)
    dom = interval_domain(0.0, 1.0)
    W = gen_brownian(g, 1, RngStream(11, "W"), 2000)
    cs = CoefficientSet.build(sigma=[["0.5 + 0.2*x"]], b=["0.3 - x"])
    base = simulate_reflected((0.0, [0.4]), cs, dom, W).X[..., 0]
    ratios = []
    for d in (0.1, 0.05, 0.025):
        other = simulate_reflected((0.0, [0.4 + d]), cs, dom, W).X[..., 0]
        ratios.append(np.mean(np.max(np.abs(other - base), axis=1) ** 4) / d ** 4)
    assert max(ratios) <= 20.0
    assert ratios[-1] <= 2.0 * ratios[0]


@given(st.floats(0.01, 0.99), st.floats(0.1, 3.0), st.integers(0, 10 ** 6))
def test_domain_invariance_property(x0, sig, seed):
    g = TimeGrid(1.0, 30)
    dom = interval_domain(0.0, 1.0)
    W = gen_brownian(g, 1, RngStream(seed, "W"), 40)
    st_ = simulate_reflected((0.0, [x0]), CoefficientSet.build(sigma=[[repr(sig)]]), dom, W)
    assert np.all(dom.value(st_.X) >= -dom.boundary_tol)
    assert np.all(np.diff(st_.A_local.values(), axis=-1) >= 0)
