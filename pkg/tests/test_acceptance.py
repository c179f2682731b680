"""Acceptance criteria at their stated tolerances; each test records one PASS/FAIL line."""

from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from bdsdelab.cli import COMMANDS, run
from bdsdelab.coefficients import CoefficientSet
from bdsdelab.csvio import read_csv
from bdsdelab.doss_sussmann import FlowPair, epsilon, eta
from bdsdelab.dsl import parse
from bdsdelab.feynman_kac import FKProblem, evaluate_field, evaluate_u_stochastic, make_drivers
from bdsdelab.gbdsde import LinearCoeffs, check_comparison, solve_linear, solve_picard
from bdsdelab.paths import IncreasingProcessPath, LevySpec, TimeGrid, binomial_bundle, gen_brownian, gen_bundle
from bdsdelab.reflected import DomainSpec, interval_domain, simulate_reflected
from bdsdelab.regression import RegressionConfig
from bdsdelab.rng import RngStream

from conftest import ACCEPTANCE

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def record(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {title} ({detail})"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def cli_csv(tmp_path, sub, cfg, *extra):
    out = tmp_path / sub
    assert run([sub, "--config", str(cfg), "--out", str(out), "--threads", "1", *extra]) == 0
    return read_csv(out / f"{sub.replace('-', '_')}.csv")


def column(header, rows, name, cast=float):
    i = header.index(name)
    return np.array([cast(r[i]) for r in rows])


# 1 ----------------------------------------------------------------------------

def test_criterion_1_linear_closed_form_vs_picard():
    rng = np.random.default_rng(1)
    levy = LevySpec((1.0, -0.5), (0.5, 0.3))
    grid = TimeGrid(1.0, 64)
    reg = RegressionConfig(64, 2000, degree=2)
    A = IncreasingProcessPath.from_spec(grid, 0.5, [(0.5, 0.3)])
    worst = 0.0
    for s in range(5):
        c = rng.uniform(-0.3, 0.3, size=10)
        b = gen_bundle(grid, 64, 2000, d=1, m=1, levy=levy, seed=100 + s)
        WT = b.W.values()[:, -1, 0]
        NT = b.N.counts.sum(axis=(1, 2))
        xi = 1 + c[8] * WT + 0.5 * c[9] * WT ** 2 + 0.2 * NT
        lin = LinearCoeffs(alpha=c[0], beta=c[1], gamma_j=(c[2], c[3]), delta=c[4], phi_drift=c[5],
                           varphi=c[6], h=c[7], xi=xi)
        (yl, sl) = solve_linear(lin, A, b, reg).mean_y0()
        (yp, sp) = solve_picard(lin.to_coefficients(d=1, m=1, levy=levy), xi, A, b, reg, tol=1e-8).mean_y0()
        worst = max(worst, abs(yl - yp) / np.hypot(sl, sp))
    record(1, "linear closed form vs Picard, 5 random sets", worst <= 3, f"worst {worst:.2f} combined stderr")


# 2 ----------------------------------------------------------------------------

def tree_value(N, T=1.0):
    dt = T / N
    sq = np.sqrt(dt)
    Y = np.sin(sq * (2 * np.arange(N + 1) - N))
    for _ in range(N):
        up, dn = Y[1:], Y[:-1]
        Y = (0.5 * (up + dn) + (up - dn) / (2 * sq) * dt) / (1 - dt)
    return Y[0]


def test_criterion_2_binomial_tree():
    worst = 0.0
    for N in range(2, 11):
        g = TimeGrid(1.0, N)
        b = binomial_bundle(g)
        xi = np.sin(b.W.values()[:, -1, 0])
        reg = RegressionConfig(n_inner=2 ** N, degree=N, ridge=0.0, basis="onehot")
        sol = solve_picard(CoefficientSet.build(f="y + z"), xi, IncreasingProcessPath.zero(g), b, reg,
                           tol=1e-14, max_iter=200)
        worst = max(worst, abs(sol.y0[0] - tree_value(N)))
    record(2, "binomial tree N=2..10", worst <= 1e-10, f"worst error {worst:.2e}")


# 3 ----------------------------------------------------------------------------

def test_criterion_3_ito_identity(tmp_path):
    header, rows, _ = cli_csv(tmp_path, "ito-check", CONFIGS / "ito_cases.toml")
    res = column(header, rows, "residual")
    cases = sorted(set(column(header, rows, "case", str)))
    ok = len(cases) == 6 and res.max() <= 4
    record(3, "Ito identity on shipped cases", ok, f"{len(cases)} cases, worst residual {res.max():.2f}")


# 4 ----------------------------------------------------------------------------

def test_criterion_4_reflection():
    cs = CoefficientSet.build(sigma=[["1"]])
    worst_phi = np.inf
    for dom in (interval_domain(0.0, 1.0), DomainSpec("tanh(x)")):
        W = gen_brownian(TimeGrid(1.0, 200), 1, RngStream(2, "W"), 1000)
        st = simulate_reflected((0.0, [0.5]), cs, dom, W)
        worst_phi = min(worst_phi, float(dom.value(st.X).min()))
    W = gen_brownian(TimeGrid(1.0, 1000), 1, RngStream(1, "W"), 10_000)
    XT = simulate_reflected((0.0, [0.5]), cs, DomainSpec("tanh(x)"), W).X[:, -1, 0]
    cdf = lambda y: stats.norm.cdf(y - 0.5) - stats.norm.cdf(-y - 0.5)
    ks = stats.kstest(XT, cdf).statistic
    ok = worst_phi >= -1e-8 and ks <= 0.03
    record(4, "reflection invariance and reflected-law KS", ok, f"min phi {worst_phi:.2e}, KS {ks:.4f}")


# 5 ----------------------------------------------------------------------------

def test_criterion_5_feynman_kac_vs_fd(tmp_path):
    h_fk, r_fk, _ = cli_csv(tmp_path, "feynman-kac", CONFIGS / "heat.toml")
    h_fd, r_fd, _ = cli_csv(tmp_path, "oracle-pde", CONFIGS / "heat.toml")
    x, u, se = (column(h_fk, r_fk, k) for k in ("x1", "u", "stderr"))
    oracle = np.interp(x, column(h_fd, r_fd, "x"), column(h_fd, r_fd, "u"))
    rel = np.abs(u - oracle) / np.abs(oracle)
    allowed = np.maximum(0.05, 4 * se / np.abs(oracle))
    record(5, "Feynman-Kac vs finite differences, heat with zero flux", bool(np.all(rel <= allowed)),
           f"{len(x)} points, worst relative error {rel.max():.4f}")


# 6 ----------------------------------------------------------------------------

def test_criterion_6_doss_sussmann_routes():
    rng = np.random.default_rng(6)
    dom = interval_domain(0.0, 1.0)
    mc = RegressionConfig(4, 2000, degree=3)
    worst_id, worst_z = 0.0, 0.0
    for i in range(3):
        a, k, c = rng.uniform(0.1, 0.3), rng.uniform(1.0, 3.0), rng.uniform(-0.1, 0.1)
        gexpr = f"{a:.4f}*sin({k:.4f}*x) + {c:.4f}"
        cs = CoefficientSet.build(sigma=[["0.8"]], b=["0.2"], m=1, g=[gexpr], f="-0.5*y + 0.2*z",
                                  h="0.1 - 0.2*y", ell="x*x*(3 - 2*x)")
        pr = FKProblem(cs, dom, T=1.0, n_steps=100)
        drv = make_drivers(pr, mc, 50 + i)
        flow = FlowPair.build([parse(gexpr)], drv.B, (np.linspace(-0.05, 1.05, 45),))
        xs, ys = rng.uniform(0, 1, 50), rng.normal(0, 2, 50)
        for o in range(mc.n_outer):
            for t in (0.0, 0.5):
                worst_id = max(worst_id, float(np.abs(epsilon(t, xs, eta(t, xs, ys, flow, o), flow, o) - ys).max()))
        for pt in ((0.0, 0.2), (0.3, 0.5), (0.6, 0.9)):
            va, sa = evaluate_u_stochastic(pt, pr, mc, route="direct", drivers=drv)
            vb, sb = evaluate_u_stochastic(pt, pr, mc, route="transform", drivers=drv)
            ma, mb = va.mean(), vb.mean()
            se = np.hypot(np.sqrt(np.sum(sa ** 2)), np.sqrt(np.sum(sb ** 2))) / len(va)
            worst_z = max(worst_z, abs(ma - mb) / se)
    ok = worst_id <= 1e-12 and worst_z <= 4
    record(6, "Doss-Sussmann identity and route agreement", ok,
           f"identity error {worst_id:.1e}, worst route gap {worst_z:.2f} combined stderr")


# 7 ----------------------------------------------------------------------------

def test_criterion_7_comparison():
    g = TimeGrid(1.0, 12)
    lev = LevySpec((1.0,), (0.5,))
    b = gen_bundle(g, 4, 1000, 1, 1, lev, seed=9)
    x = b.W.values()[:, -1, 0]
    A = IncreasingProcessPath.from_spec(g, 0.5, [(0.5, 0.2)])
    reg = RegressionConfig(4, 1000, degree=2)
    kw = dict(m=1, g=["0.1*cos(y)"], levy=lev, f="-y + 0.5*j")

    def frac(xi1, xi2, h1=0.0, h2=0.0):
        s1 = solve_picard(CoefficientSet.build(h=h1, **kw), xi1, A, b, reg)
        s2 = solve_picard(CoefficientSet.build(h=h2, **kw), xi2, A, b, reg)
        return check_comparison(s1, s2, 3 * np.hypot(s1.stderr, s2.stderr)[:, None, :]).violation_fraction

    main = frac(np.minimum(x, 1.0), np.ones_like(x), 0.0, 1.0)
    # terminal monotonicity of the field: raising ell never lowers u beyond 3 combined stderr
    dom = interval_domain(0.0, 1.0)
    mc = RegressionConfig(2, 1000, degree=2)
    pts = [(0.0, 0.2), (0.0, 0.5), (0.3, 0.8)]
    pairs = [("x", "x + 0.1"), ("x^2", "x"), ("0", "sin(3*x)^2")]
    worst = -np.inf
    for lo, hi in pairs:
        est = []
        for ell in (lo, hi):
            cs = CoefficientSet.build(sigma=[["0.5"]], f="-0.3*y + 0.1*z", h="0.2 - 0.1*y", ell=ell)
            est.append(evaluate_field(pts, FKProblem(cs, dom, T=1.0, n_steps=20), mc, seed=6))
        gap = (est[0].values - est[1].values) / (3 * np.hypot(est[0].stderrs, est[1].stderrs))
        worst = max(worst, float(gap.max()))
    ok = main <= 0.01 and worst <= 1.0
    record(7, "comparison and terminal monotonicity", ok,
           f"violation fraction {main:.4f}, worst monotonicity gap {worst:.2f} of allowance")


# 8 ----------------------------------------------------------------------------

def test_criterion_8_desk_problem(tmp_path):
    _, _, trailer = cli_csv(tmp_path, "control-check", CONFIGS / "control_desk.toml")
    verdicts = [t[len("verdict: "):] for t in trailer if t.startswith("verdict: ")]
    opt_nec, opt_suf, others = verdicts[0], verdicts[1], verdicts[2:]
    tol = 1e-3

    def residual(line):
        return float(line.rsplit("residual=", 1)[1])

    failing = [v for v in others if v.startswith("necessary FAIL") and residual(v) >= 10 * tol]
    ok = opt_nec.startswith("necessary PASS") and opt_suf.startswith("sufficient SUFFICIENT-PASS") \
        and len(failing) >= 3
    record(8, "desk problem optimum and perturbations", ok,
           f"optimum residual {residual(opt_nec):.1e}, {len(failing)} perturbations fail")


# 9 ----------------------------------------------------------------------------

SMALL_FK = """seed = 4
[grid]
T = 0.1
n_steps = 20
[mc]
n_outer = 2
n_inner = 200
[coefficients]
sigma = [["1"]]
m = 1
g = ["0.1*cos(x)"]
ell = "x^2*(3 - 2*x)"
[domain]
interval = [0.0, 1.0]
[fk]
points = [[0.0, 0.3], [0.05, 0.7]]
"""

SHIPPED = {
    "paths-selftest": "selftest.toml", "solve-linear": "linear.toml", "solve-gbdsde": "gbdsde.toml",
    "reflect": "reflect.toml", "oracle-pde": "heat.toml", "control-check": "control_desk.toml",
    "ito-check": "ito_cases.toml",
}


def test_criterion_9_cli_determinism(tmp_path):
    (tmp_path / "fk.toml").write_text(SMALL_FK)
    configs = {k: CONFIGS / v for k, v in SHIPPED.items()}
    configs["feynman-kac"] = tmp_path / "fk.toml"
    assert set(configs) == set(COMMANDS)
    bad = []
    for sub, cfg in configs.items():
        outputs = []
        for i, threads in enumerate((1, 1, 4)):
            out = tmp_path / f"{sub}-{i}"
            assert run([sub, "--config", str(cfg), "--out", str(out), "--threads", str(threads)]) == 0
            outputs.append(sorted((p.name, p.read_bytes()) for p in out.iterdir()))
        if not outputs[0] == outputs[1] == outputs[2]:
            bad.append(sub)
    record(9, "CLI byte identity across reruns and threads 1, 4", not bad,
           f"{len(configs)} subcommands" + (f", differing: {bad}" if bad else ""))
