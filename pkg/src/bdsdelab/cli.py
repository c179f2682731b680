"""Command-line experiment runner.

``bdsdelab <subcommand> --config FILE [--seed N] [--threads N] [--out DIR]``

Each subcommand writes one CSV and ``manifest.json`` into the output
directory.  Precedence for seed, threads and output directory: command-line
flag, then the environment (``BDSDELAB_SEED``, ``BDSDELAB_THREADS``,
``BDSDELAB_OUT``), then the config file (seed only).  Exit status is 0 on
success, 2 on invalid input and 3 when a numerical procedure fails.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import config as C
from .coefficients import bindings, eval_shaped
from .singular_control import (ControlCandidate, ControlProblem, lattice_search, necessary_check,
                      sufficient_check)
from .csvio import write_csv
from .dsl import evaluate, parse
from .errors import ConfigError, NumericalError, ValidationError
from .feynman_kac import FKProblem, evaluate_field
from .gbdsde import LinearCoeffs, default_state, ito_identity_check, solve_linear, solve_picard
from .paths import (IncreasingProcessPath, LevySpec, forward_ito_integral, gen_brownian, gen_bundle,
                    gen_jump_measure)
from .pde_oracle import FDGrid, solve_ipde
from .reflected import simulate_reflected
from .rng import RngStream

ENV_PREFIX = "BDSDELAB_"
DEFAULT_LEVY = LevySpec((1.0, 2.0), (1.0, 3.0))


# subcommands ----------------------------------------------------------------------

def _selftest(cfg, seed, threads):
    grid = C.grid_of(cfg)
    P = (cfg.get("selftest") or {"n_paths": 100_000})["n_paths"]
    T = grid.T
    W = gen_brownian(grid, 1, RngStream(seed, "selftest-W"), P, threads)
    WT = W.values()[:, -1, 0]
    rows = []

    def add(name, value, expected, tol):
        rows.append([name, value, expected, tol, abs(value - expected) <= tol])

    add("brownian_mean", float(WT.mean()), 0.0, 4 * np.sqrt(T / P))
    add("brownian_var_ratio", float(WT.var(ddof=1) / T), 1.0, 0.05)
    levy = C.levy_of(cfg) or DEFAULT_LEVY
    N = gen_jump_measure(grid, levy, RngStream(seed, "selftest-N"), P, threads)
    count = N.counts.sum(axis=(1, 2))
    lamT = levy.total * T
    add("poisson_mean", float(count.mean()), lamT, 3 * np.sqrt(2 * lamT / P))
    freq = np.bincount(N.event_atom, minlength=levy.n_atoms) / max(len(N.event_atom), 1)
    for i in range(levy.n_atoms):
        add(f"mark_frequency_{i + 1}", float(freq[i]), float(levy.w[i] / levy.total), 0.02)
    vals = W.values()[..., 0]
    ito = forward_ito_integral(vals, W)[:, -1]
    D = ito + T / 2 - WT ** 2 / 2
    add("ito_w_dw", float(D.mean()), 0.0, 4 * float(D.std(ddof=1)) / np.sqrt(P))
    iso = ito ** 2 - np.sum(vals[:, :-1] ** 2, axis=1) * grid.dt
    add("isometry_w", float(iso.mean()), 0.0, 4 * float(iso.std(ddof=1)) / np.sqrt(P))
    return "paths_selftest.csv", ["check", "value", "expected", "tolerance", "pass"], rows, []


def _bundle(cfg, grid, d, m, seed, threads):
    reg = C.reg_of(cfg)
    return reg, gen_bundle(grid, reg.n_outer, reg.n_inner, d, m, C.levy_of(cfg), seed, threads)


def _arr(v):
    return np.asarray(v, dtype=float)


def _solve_linear(cfg, seed, threads):
    grid = C.grid_of(cfg)
    lc = cfg["linear"]
    reg, drv = _bundle(cfg, grid, lc["d"], lc["m"], seed, threads)
    lin = LinearCoeffs(*(_arr(lc[k]) for k in ("alpha", "beta", "gamma_j", "delta", "phi_drift", "varphi",
                                                "h", "xi")))
    sol = solve_linear(lin, C.A_of(cfg, grid), drv, reg)
    rows = [[o, grid.times[k], sol.Y[o, :, k].mean(), sol.stderr[o, k]]
            for o in range(drv.n_outer) for k in range(grid.n_cells + 1)]
    return "solve_linear.csv", ["outer", "t", "Y", "stderr"], rows, []


def _solve_gbdsde(cfg, seed, threads):
    grid = C.grid_of(cfg)
    cs = C.coeffs_of(cfg)
    reg, drv = _bundle(cfg, grid, cs.d, cs.m, seed, threads)
    WT = default_state(drv)[:, :, -1]
    xi = eval_shaped(cs.ell, bindings(grid.T, WT), WT.shape[:2])
    sv = cfg.get("solver") or C._table({}, C.SCHEMA["solver"], "solver")
    sol = solve_picard(cs, xi, C.A_of(cfg, grid), drv, reg, sv["tol"], sv["max_iter"], threads=threads)
    d, K = sol.Z.shape[-1], sol.J.shape[-1]
    header = ["outer", "t", "Y", "stderr", *[f"Z{i + 1}" for i in range(d)], *[f"J{i + 1}" for i in range(K)]]
    rows = []
    for o in range(drv.n_outer):
        for k in range(grid.n_cells + 1):
            se = sol.y0_stderr[o] if k == 0 else sol.stderr[o, k]
            rows.append([o, grid.times[k], sol.Y[o, :, k].mean(), se,
                         *sol.Z[o, :, k].mean(axis=0), *sol.J[o, :, k].mean(axis=0)])
    return "solve_gbdsde.csv", header, rows, [f"picard iterations: {sol.iterations}"]


def _reflect(cfg, seed, threads):
    grid = C.grid_of(cfg)
    cs = C.coeffs_of(cfg)
    dom = C.domain_of(cfg)
    rc = cfg["reflect"]
    x0 = np.atleast_1d(_arr(rc["x0"]))
    W = gen_brownian(grid, cs.d, RngStream(seed, "W"), rc["n_paths"], threads)
    N = gen_jump_measure(grid, cs.levy, RngStream(seed, "N"), rc["n_paths"], threads) if cs.levy else None
    st = simulate_reflected((rc["t0"], x0), cs, dom, W, N, threads)
    A = st.A_local.values()
    n = cs.n
    header = ["path", "t", *[f"x{i + 1}" for i in range(n)], "A", "contact"]
    rows = [[p, st.grid.times[k], *st.X[p, k], A[p, k], bool(st.contact[p, k])]
            for p in range(st.n_paths) for k in range(st.grid.n_cells + 1)]
    return "reflect.csv", header, rows, []


def _feynman_kac(cfg, seed, threads):
    cs = C.coeffs_of(cfg)
    g, fk = cfg["grid"], cfg["fk"]
    sv = cfg.get("solver") or C._table({}, C.SCHEMA["solver"], "solver")
    pb = FKProblem(cs, C.domain_of(cfg), g["T"], g["n_steps"], sv["tol"], sv["max_iter"], fk["lattice_points"])
    for p in fk["points"]:
        if len(p) != cs.n + 1:
            raise ConfigError(f"fk.points entries need {cs.n + 1} numbers (t then x)")
    points = [(p[0], np.array(p[1:])) for p in fk["points"]]
    est = evaluate_field(points, pb, C.reg_of(cfg), fk["route"], seed, threads)
    return "feynman_kac.csv", est.header(), est.rows(), []


def _sigma_max(cs, a, b, T) -> float:
    x = np.linspace(a, b, 201)[:, None]
    best = 0.0
    for t in np.linspace(0.0, T, 101):
        env = bindings(t, x)
        s2 = sum(eval_shaped(e, env, (201,)) ** 2 for e in cs.sigma[0])
        best = max(best, float(np.max(s2)))
    return float(np.sqrt(best))


def _oracle_pde(cfg, seed, threads):
    cs = C.coeffs_of(cfg)
    dom = cfg["domain"]
    if dom["interval"] is None or isinstance(dom["interval"], float):
        raise ConfigError("oracle-pde needs domain.interval = [a, b]")
    a, b = dom["interval"]
    pc = cfg["pde"]
    T = cfg["grid"]["T"]
    grid = FDGrid.stable(a, b, pc["n_x"], T, _sigma_max(cs, a, b, T), pc["c"], pc["min_steps"])
    sol = solve_ipde(cs, grid, pc["jumps"])
    times = pc["output_times"]
    times = [times] if isinstance(times, float) else times
    rows = []
    for t in times:
        u = sol.at(t, grid.x)
        rows += [[t, x, v] for x, v in zip(grid.x, u)]
    return "oracle_pde.csv", ["t", "x", "u"], rows, [f"n_x={grid.n_x} n_t={grid.n_t}"]


def _control_check(cfg, seed, threads):
    grid = C.grid_of(cfg)
    cc = cfg["control"]
    levy = C.levy_of(cfg)
    pb = ControlProblem.build(d=cc["d"], m=cc["m"], levy=levy,
                              **{k: cc[k] for k in ("f", "g", "h", "F", "G", "H", "xi")})
    reg, drv = _bundle(cfg, grid, cc["d"], cc["m"], seed, threads)
    trailer = []
    if cc["candidate"] == "lattice":
        sizes = cc["sizes"]
        sizes = None if sizes is None else np.atleast_1d(_arr(sizes))
        res = lattice_search(pb, drv, reg, sizes, threads=threads)
        cand = res.best
        trailer.append(f"lattice optimum: {cand.label} J={res.J:.17g}")
    elif cc["candidate"] == "given":
        cand = ControlCandidate(C.A_of(cfg, grid), "given")
    else:
        raise ConfigError("control.candidate must be 'lattice' or 'given'")
    rep = necessary_check(cand, pb, drv, reg, cc["tol"], threads)
    suf = sufficient_check(cand, pb, drv, reg, cc["tol"], cc["n_probe"], seed, threads=threads)
    trailer += [f"verdict: {rep.summary()} residual={rep.residual:.6g}", f"verdict: {suf.summary()}"]
    others = [ControlCandidate(cand.A.scaled(s), f"scaled{s:g}") for s in cc["perturb_scales"]]
    others += [ControlCandidate(cand.A.shifted(k), f"shift{k:+d}") for k in cc["perturb_shifts"]]
    for oc in others:
        r = necessary_check(oc, pb, drv, reg, cc["tol"], threads)
        trailer.append(f"verdict: {r.summary()} residual={r.residual:.6g}")
    return "control_check.csv", rep.header(), rep.rows(), trailer


def _ito_check(cfg, seed, threads):
    grid = C.grid_of(cfg)
    ic = cfg["ito"]
    levy = C.levy_of(cfg)
    drv = gen_bundle(grid, ic["n_outer"], ic["n_inner"], ic["d"], ic["m"], levy, seed, threads)
    O, I, L = drv.n_outer, drv.n_inner, grid.n_cells + 1
    P = O * I
    env: dict = {"t": np.broadcast_to(grid.times, (P, L))}
    Wv = default_state(drv).reshape(P, L, ic["d"])
    for i in range(ic["d"]):
        env[f"w{i + 1}"] = Wv[..., i]
    env["w"] = Wv[..., 0]
    cnt = np.zeros((P, L))
    np.cumsum(drv.counts.sum(axis=-1).reshape(P, grid.n_cells), axis=1, out=cnt[:, 1:])
    env["n"] = cnt
    if ic["m"]:
        Bv = drv.B.values()
        rest = np.repeat(Bv[:, -1:, :] - Bv, I, axis=0)
        for i in range(ic["m"]):
            env[f"bb{i + 1}"] = rest[..., i]
        env["bb"] = rest[..., 0]
    names = sorted(env)
    rows = []
    for case in ic["case"]:
        comp = {}
        for key in ("beta", "gamma", "delta", "theta", "lam"):
            e = parse(str(case[key]), names)
            comp[key] = np.broadcast_to(np.asarray(evaluate(e, env), dtype=float), (P, L))
        A = IncreasingProcessPath.from_spec(grid, case["A_density"], [tuple(p) for p in case["A_jumps"]])
        rep = ito_identity_check(drv, A, case["a0"], comp["beta"], comp["gamma"] if ic["m"] else 0.0,
                                 comp["delta"], comp["theta"] if levy else 0.0, comp["lam"])
        for k, lhs, rhs, res in zip(rep.indices, rep.lhs, rep.rhs, rep.residuals):
            rows.append([case["name"], grid.times[k], lhs, rhs, res])
    return "ito_check.csv", ["case", "t", "lhs", "rhs", "residual"], rows, []


COMMANDS = {
    "paths-selftest": _selftest,
    "solve-linear": _solve_linear,
    "solve-gbdsde": _solve_gbdsde,
    "reflect": _reflect,
    "feynman-kac": _feynman_kac,
    "oracle-pde": _oracle_pde,
    "control-check": _control_check,
    "ito-check": _ito_check,
}


# driver ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bdsdelab", description="Backward doubly stochastic equation laboratory.")
    ap.add_argument("subcommand", choices=list(COMMANDS))
    ap.add_argument("--config", required=True, help="TOML experiment file")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--threads", type=int, help="worker threads (default: available CPUs)")
    ap.add_argument("--out", help="output directory (default: current directory)")
    return ap


def _env_int(name: str) -> int | None:
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_PREFIX + name} must be an integer, got {raw!r}") from None


def manifest(subcommand: str, seed: int, config_hash: str, outputs: list[str]) -> str:
    """Manifest text: inputs and versions only, so it is identical across reruns."""
    doc = {
        "subcommand": subcommand,
        "seed": seed,
        "config_sha256": config_hash,
        "outputs": outputs,
        "versions": {"bdsdelab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def run(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg, digest = C.load(args.config)
        C.require(cfg, args.subcommand)
        env_seed, env_threads = _env_int("SEED"), _env_int("THREADS")
        seed = args.seed if args.seed is not None else env_seed if env_seed is not None else cfg[""]["seed"]
        if seed < 0:
            raise ConfigError("seed must be nonnegative")
        threads = args.threads or env_threads or os.cpu_count() or 1
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        out = Path(args.out or os.environ.get(ENV_PREFIX + "OUT") or ".")
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            name, header, rows, trailer = COMMANDS[args.subcommand](cfg, seed, threads)
        write_csv(out / name, header, rows, trailer)
        (out / "manifest.json").write_text(manifest(args.subcommand, seed, digest, [name]), encoding="utf-8")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(run())
