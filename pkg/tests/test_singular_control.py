from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdsdelab.errors import ValidationError
from bdsdelab.paths import IncreasingProcessPath, LevySpec, TimeGrid, gen_bundle
from bdsdelab.regression import RegressionConfig
from bdsdelab.singular_control import (ControlCandidate, ControlProblem, adjoint, adjoint_residual, cost,
                                       desk_problem, hamiltonian, lattice_search, necessary_check,
                                       solve_state, sufficient_check, variational_gamma)

GRID = TimeGrid(1.0, 10)
SMALL = RegressionConfig(1, 16)


def drivers(O=1, I=16, m=0, levy=None, seed=0, grid=GRID):
    return gen_bundle(grid, O, I, 1, m, levy, seed)


def no_control():
    return ControlCandidate(IncreasingProcessPath.zero(GRID), "zero")


def desk_optimum():
    return ControlCandidate.single_jump(GRID, 5, 0.5, "opt")


def test_trivial_costs():
    drv = drivers()
    J, _ = cost(no_control(), ControlProblem.build(F=0.7), drv, SMALL)
    assert J == pytest.approx(0.7, abs=1e-12)
    J, _ = cost(no_control(), ControlProblem.build(G=1), drv, SMALL)
    assert J == pytest.approx(1.0, abs=1e-12)
    J, _ = cost(ControlCandidate.single_jump(GRID, 3, 1.0), ControlProblem.build(H=1), drv, SMALL)
    assert J == pytest.approx(1.0, abs=1e-12)


def test_hamiltonian_examples():
    pb = ControlProblem.build(f="x + y", F="x", H=0.6, h=1)
    dt_part, dA_part = hamiltonian(0.0, 1.0, 2.0, 0.0, 2.0, 0.0, pb)
    assert dt_part == pytest.approx(-5.0)
    assert hamiltonian(0.0, 1.0, 2.0, 0.0, 0.0, 0.0, pb)[1] == pytest.approx(0.6)
    pb = ControlProblem.build(m=1, g=["2*x"], F=0)
    assert hamiltonian(0.0, 1.5, 0.0, 0.0, 0.0, 1.0, pb)[0] == pytest.approx(-3.0)


def test_problem_validation():
    with pytest.raises(ValidationError):
        ControlProblem.build(G="x + t")
    with pytest.raises(ValidationError):
        ControlProblem.build(m=1, g=[])
    with pytest.raises(ValidationError):
        ControlProblem.build(unknown=1)
    with pytest.raises(ValidationError):
        ControlCandidate.single_jump(GRID, 0, 1.0)


def test_gamma_examples():
    pb = ControlProblem.build(f="0.5*x")
    drv = drivers()
    traj = solve_state(pb, no_control(), drv, SMALL)
    gam = variational_gamma(pb, traj, drv)
    np.testing.assert_allclose(gam(0, 10), np.exp(0.5), rtol=1e-6)
    np.testing.assert_allclose(gam(0.2, 0.6), np.exp(0.2), rtol=1e-6)


def test_gamma_martingale():
    pb = ControlProblem.build(f="y")
    drv = drivers(O=1, I=20_000, seed=1)
    traj = solve_state(pb, no_control(), drv, RegressionConfig(1, 20_000))
    G = variational_gamma(pb, traj, drv)(0, 10).ravel()
    assert abs(G.mean() - 1) <= 4 * G.std(ddof=1) / np.sqrt(G.size)


def test_adjoint_examples():
    drv = drivers()
    pb = ControlProblem.build(f="0.3*x", G="x")
    traj = solve_state(pb, no_control(), drv, SMALL)
    adj = adjoint(pb, traj, drv)
    gam = adj.gamma
    want = -np.stack([gam(0, k) for k in range(11)], axis=-1)
    np.testing.assert_allclose(adj.p, want, rtol=1e-9)
    pb = ControlProblem.build(F="x")
    adj = adjoint(pb, solve_state(pb, no_control(), drv, SMALL), drv)
    np.testing.assert_allclose(adj.p[0, 0], -GRID.times, atol=1e-12)


def test_adjoint_residual_is_noise():
    levy = LevySpec((1.0,), (0.5,))
    pb = ControlProblem.build(f="0.2*sin(x) + 0.3*y - 0.1*z", g=["0.2*cos(x)"], m=1, levy=levy, F="0.1*x^2",
                              G="x^2", xi="0.5*w", H=0.2)
    grid = TimeGrid(1.0, 20)
    drv = drivers(O=8, I=500, m=1, levy=levy, seed=3, grid=grid)
    reg = RegressionConfig(8, 500, degree=2)
    traj = solve_state(pb, ControlCandidate.single_jump(grid, 10, 0.5), drv, reg)
    mean, se = adjoint_residual(adjoint(pb, traj, drv), drv)
    assert abs(mean) <= 4 * se + 1e-12


def test_necessary_examples():
    drv = drivers()
    ok = necessary_check(no_control(), ControlProblem.build(H=1, h=0), drv, SMALL)
    assert ok.passed and ok.residual == 0
    bad = necessary_check(no_control(), ControlProblem.build(H=-1, h=0), drv, SMALL)
    assert not bad.passed and bad.residual == pytest.approx(1.0)
    assert bad.header() == ["t", "p", "U", "V", "dAc", "dAjump"]
    assert len(bad.rows()) == 11
    assert bad.summary().startswith("necessary FAIL")


REPORT = necessary_check(ControlCandidate.single_jump(GRID, 3, 0.4), desk_problem(), drivers(), SMALL)


@settings(max_examples=40)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_verdict_is_monotone_in_tol(a, b):
    lo, hi = sorted((a, b))
    r_lo, r_hi = replace(REPORT, tol=lo), replace(REPORT, tol=hi)
    assert r_lo.passed == (REPORT.residual <= lo)
    if r_lo.passed:
        assert r_hi.passed


def test_desk_lattice_matches_closed_form():
    drv = drivers()
    sizes = np.arange(1, 21) / 20
    res = lattice_search(desk_problem(), drv, SMALL, sizes=sizes)
    t = GRID.times[res.indices][:, None]
    brute = sizes ** 2 + sizes * (2 * (t - 0.5) ** 2 - 1)
    np.testing.assert_allclose(res.table, brute, atol=1e-10)
    assert res.best.label == "lattice@5x0.5"
    assert res.J == pytest.approx(-0.25, abs=1e-10)


def test_desk_optimum_passes_both_checks():
    drv = drivers()
    nec = necessary_check(desk_optimum(), desk_problem(), drv, SMALL)
    suf = sufficient_check(desk_optimum(), desk_problem(), drv, SMALL, n_probe=16)
    assert nec.passed and suf.passed


def test_concave_terminal_cost_fails_convexity():
    pb = ControlProblem.build(G="-x^2", h=1, H="2*(t - 0.5)^2 - 1")
    rep = sufficient_check(desk_optimum(), pb, drivers(), SMALL, n_probe=16)
    assert not rep.G_convex and rep.verdict == "SUFFICIENT-FAIL"


def test_affine_problem_passes_convexity():
    pb = ControlProblem.build(f="0.5*x - 0.2*y", F="0.3*x", G="x", h=1, H=2)
    rep = sufficient_check(no_control(), pb, drivers(), SMALL, n_probe=16)
    assert rep.hamiltonian_convex and rep.G_convex


def test_shifted_optimum_fails_comparison():
    shifted = ControlCandidate(desk_optimum().A.shifted(2), "shift+2")
    rep = sufficient_check(shifted, desk_problem(), drivers(), SMALL, n_probe=16)
    assert not rep.smpcon and rep.failing_probe
