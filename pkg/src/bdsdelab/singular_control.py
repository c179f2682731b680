"""Singular control of a backward doubly stochastic system with jumps.

The controlled state solves

    X(t) = xi + int_t^T f(s, X, Y, Z) ds + int_t^T g(s, X) <-dB(s) - int_t^T Y dW
           - int_t^T int Z N~(ds, de) + int_t^T h(s) dA(s)

and the cost is ``J(A) = E[int_0^T F(t, X) dt + G(X(0)) + int_0^T H(t) dA(t)]``.

Control expressions use their own variable names: ``x`` the state, ``y``
(``y1..yd``) the ``dW`` integrand, ``z1..zK`` the jump integrand per atom and
``z = sum_i w_i z_i``.  The terminal value ``xi`` may use ``t`` and ``w``
(``w1..wd``), the forward Brownian motion at ``T``.  Internally the state
equation is handed to :func:`gbdsde.solve_picard` after renaming
``x -> y``, ``y -> z``, ``z -> j``.

Stieltjes sums read continuous parts at the left end of a cell and jumps of
``A`` at the right end, where they sit on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coefficients import CoefficientSet
from .dsl import Expr, constant, evaluate, num_grad, parse
from .errors import DerivativeAtKink, NumericalError, ValidationError
from .gbdsde import LinearCoeffs, SolutionTriple, default_state, log_gamma_process, solve_picard
from .paths import IncreasingProcessPath, LevySpec, PathBundle, TimeGrid
from .regression import RegressionConfig
from .rng import RngStream

VERDICTS = ("PASS", "FAIL")


def _names(base: str, count: int, scalar_alias: bool) -> list[str]:
    out = [f"{base}{i + 1}" for i in range(count)]
    if scalar_alias and count == 1:
        out.append(base)
    return out


@dataclass(frozen=True)
class ControlProblem:
    """Coefficients of the controlled system and its cost."""

    f: Expr = constant(0.0)
    g: tuple[Expr, ...] = ()
    h: Expr = constant(1.0)
    F: Expr = constant(0.0)
    G: Expr = constant(0.0)
    H: Expr = constant(0.0)
    xi: Expr = constant(0.0)
    d: int = 1
    m: int = 0
    levy: LevySpec | None = None

    def __post_init__(self):
        if self.d < 1 or self.m < 0:
            raise ValidationError("need d >= 1 and m >= 0")
        if len(self.g) != self.m:
            raise ValidationError("g needs m components")
        allowed = {
            "f": self.state_vars, "h": ["t"], "F": ["t", "x"], "G": ["x"], "H": ["t"],
            "xi": ["t", *_names("w", self.d, True)],
        }
        for key, names in allowed.items():
            extra = getattr(self, key).free_vars - set(names)
            if extra:
                raise ValidationError(f"{key} may only use {sorted(names)}, found {sorted(extra)}")
        for e in self.g:
            extra = e.free_vars - {"t", "x"}
            if extra:
                raise ValidationError(f"g may only use t and x, found {sorted(extra)}")

    @property
    def K(self) -> int:
        return 0 if self.levy is None else self.levy.n_atoms

    @property
    def state_vars(self) -> list[str]:
        out = ["t", "x", *_names("y", self.d, True)]
        if self.K:
            out += ["z", *[f"z{i + 1}" for i in range(self.K)]]
        return out

    @classmethod
    def build(cls, d: int = 1, m: int = 0, levy: LevySpec | None = None, **kw) -> "ControlProblem":
        """Parse string or numeric coefficients against the control variable names."""
        K = 0 if levy is None else levy.n_atoms
        fv = ["t", "x", *_names("y", d, True)] + (["z", *[f"z{i + 1}" for i in range(K)]] if K else [])
        scopes = {"f": fv, "h": ["t"], "F": ["t", "x"], "G": ["x"], "H": ["t"],
                  "xi": ["t", *_names("w", d, True)]}

        def conv(v, names):
            if isinstance(v, Expr):
                return v
            if isinstance(v, (int, float)):
                return constant(v)
            return parse(str(v), names)

        out = {}
        for key, v in kw.items():
            if key == "g":
                out[key] = tuple(conv(e, ["t", "x"]) for e in v)
            elif key in scopes:
                out[key] = conv(v, scopes[key])
            else:
                raise ValidationError(f"unknown control coefficient {key!r}")
        return cls(d=d, m=m, levy=levy, **out)

    def solver_coeffs(self) -> CoefficientSet:
        """Coefficient set in the solver's naming (state ``y``, integrands ``z`` and ``j``)."""
        ren = {"x": "y", "y": "z", "z": "j"}
        for i in range(self.d):
            ren[f"y{i + 1}"] = f"z{i + 1}"
        for i in range(self.K):
            ren[f"z{i + 1}"] = f"j{i + 1}"
        return CoefficientSet(
            n=self.d, d=self.d, m=self.m, f=self.f.rename(ren),
            g=tuple(e.rename({"x": "y"}) for e in self.g), h=self.h, levy=self.levy,
            a_has_jumps=True,
        )


@dataclass(frozen=True)
class ControlCandidate:
    """A candidate singular control."""

    A: IncreasingProcessPath
    label: str = ""

    @classmethod
    def single_jump(cls, grid: TimeGrid, index: int, size: float, label: str = "") -> "ControlCandidate":
        """Jump of ``size`` at grid time ``t_index`` (``1 <= index <= n``)."""
        if not 1 <= index <= grid.n_cells:
            raise ValidationError("jump index must lie in 1..n_steps")
        jumps = np.zeros(grid.n_cells)
        jumps[index - 1] = size
        return cls(IncreasingProcessPath(grid, np.zeros(grid.n_cells), jumps), label)


# state and cost ---------------------------------------------------------------

@dataclass
class Trajectory:
    """Solved controlled state: ``X`` shape ``(O, I, L)``, ``Y`` ``(O, I, L, d)``, ``Z`` ``(O, I, L, K)``."""

    grid: TimeGrid
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    solution: SolutionTriple
    w: np.ndarray

    def env(self) -> dict:
        """Control-named variable table, every entry shaped ``(O, I, L)``."""
        shape = self.X.shape
        env: dict = {"t": np.broadcast_to(self.grid.times, shape), "x": self.X}
        d = self.Y.shape[-1]
        for i in range(d):
            env[f"y{i + 1}"] = self.Y[..., i]
        if d == 1:
            env["y"] = self.Y[..., 0]
        K = self.Z.shape[-1]
        if K:
            for i in range(K):
                env[f"z{i + 1}"] = self.Z[..., i]
            env["z"] = self.Z @ self.w
        return env


def _terminal(problem: ControlProblem, drivers: PathBundle) -> np.ndarray:
    WT = default_state(drivers)[:, :, -1]
    env: dict = {"t": drivers.grid.times[-1]}
    for i in range(problem.d):
        env[f"w{i + 1}"] = WT[..., i]
    if problem.d == 1:
        env["w"] = WT[..., 0]
    return np.broadcast_to(np.asarray(evaluate(problem.xi, env), dtype=float), WT.shape[:2])


def solve_state(problem: ControlProblem, cand: ControlCandidate, drivers: PathBundle, reg: RegressionConfig,
                tol: float = 1e-10, max_iter: int = 100, threads: int = 1) -> Trajectory:
    """Controlled state for ``cand`` via the Picard solver."""
    if drivers.d != problem.d or drivers.m != problem.m or drivers.n_atoms != problem.K:
        raise ValidationError("driver dimensions do not match the control problem")
    sol = solve_picard(problem.solver_coeffs(), _terminal(problem, drivers), cand.A, drivers, reg,
                       tol=tol, max_iter=max_iter, threads=threads)
    w = drivers.levy.w if drivers.levy is not None else np.zeros(0)
    return Trajectory(drivers.grid, sol.Y, sol.Z, sol.J, sol, w)


def _per_time(expr: Expr, grid: TimeGrid) -> np.ndarray:
    return np.broadcast_to(np.asarray(evaluate(expr, {"t": grid.times}), dtype=float), grid.times.shape)


def _path_cells(A: IncreasingProcessPath, shape: tuple[int, ...]):
    """Continuous increments and jumps of ``A`` broadcast to ``shape + (n,)``."""
    n = A.grid.n_cells
    P = int(np.prod(shape))

    def norm(a):
        a = np.asarray(a)
        if a.ndim == 2 and a.shape[0] == P and len(shape) == 2:
            a = a.reshape(shape + (n,))
        return np.broadcast_to(a, shape + (n,))

    return norm(A.continuous_increments()), norm(A.jumps)


def _stieltjes(u: np.ndarray, A: IncreasingProcessPath, shape: tuple[int, ...]) -> np.ndarray:
    """``sum_k u_k dA^c_k + u_{k+1} dA^jump_k`` per path; ``u`` has time as its last axis."""
    cont, jump = _path_cells(A, shape)
    return np.sum(u[..., :-1] * cont + u[..., 1:] * jump, axis=-1)


def _mass(A: IncreasingProcessPath) -> float:
    return float(np.mean(A.total_mass))


def cost(cand: ControlCandidate, problem: ControlProblem, drivers: PathBundle, reg: RegressionConfig,
         traj: Trajectory | None = None, threads: int = 1) -> tuple[float, float]:
    """Monte Carlo estimate of ``J(A)`` and its standard error."""
    traj = traj or solve_state(problem, cand, drivers, reg, threads=threads)
    grid = traj.grid
    env = traj.env()
    shape = traj.X.shape[:2]
    Fv = np.broadcast_to(np.asarray(evaluate(problem.F, env), dtype=float), traj.X.shape)
    X0 = traj.X[..., 0]
    Gv = np.broadcast_to(np.asarray(evaluate(problem.G, {"x": X0}), dtype=float), shape)
    per = np.sum(Fv[..., :-1], axis=-1) * grid.dt + Gv
    per = per + _stieltjes(_per_time(problem.H, grid), cand.A, shape)
    if not np.all(np.isfinite(per)):
        raise NumericalError("cost integrands are not finite; the candidate is not admissible")
    J = float(per.mean())
    var = float(per.var(ddof=1)) / per.size if per.size > 1 else 0.0
    if "x" in problem.G.free_vars:
        Gx = _grad(problem.G, "x", {"x": X0})
        var += float(np.mean(Gx[:, 0] ** 2 * traj.solution.y0_stderr ** 2)) / shape[0]
    return J, float(np.sqrt(var))


# Hamiltonian, Gamma, adjoint ---------------------------------------------------

def hamiltonian(t, x, y, z_atoms, p, q, problem: ControlProblem, w=None) -> tuple[np.ndarray, np.ndarray]:
    """``(F - f p - g . q, H - p h)`` at the given arguments.

    ``y`` carries ``d`` trailing components, ``z_atoms`` ``K`` and ``q`` ``m``
    (scalars are accepted when the dimension is one or zero).
    """
    env: dict = {"t": t, "x": x}
    y = np.asarray(y, dtype=float)
    y = y[..., None] if problem.d == 1 and (y.ndim == 0 or y.shape[-1] != 1) else y
    for i in range(problem.d):
        env[f"y{i + 1}"] = y[..., i]
    if problem.d == 1:
        env["y"] = y[..., 0]
    if problem.K:
        za = np.asarray(z_atoms, dtype=float)
        za = np.full(problem.K, float(za)) if za.ndim == 0 else za
        wts = problem.levy.w if w is None else np.asarray(w, dtype=float)
        for i in range(problem.K):
            env[f"z{i + 1}"] = za[..., i]
        env["z"] = za @ wts
    fv = evaluate(problem.f, env)
    dt_part = evaluate(problem.F, {"t": t, "x": x}) - fv * np.asarray(p, dtype=float)
    if problem.m:
        q = np.asarray(q, dtype=float)
        q = q[..., None] if problem.m == 1 and (q.ndim == 0 or q.shape[-1] != 1) else q
        genv = {"t": t, "x": x}
        for i, e in enumerate(problem.g):
            dt_part = dt_part - evaluate(e, genv) * q[..., i]
    dA_part = evaluate(problem.H, {"t": t}) - np.asarray(p, dtype=float) * evaluate(problem.h, {"t": t})
    return np.asarray(dt_part, dtype=float), np.asarray(dA_part, dtype=float)


def _grad(expr: Expr, var: str, env: dict) -> np.ndarray:
    """Partial derivative along ``var``; exactly zero when ``expr`` does not use it."""
    ref = next(iter(env.values()))
    shape = np.shape(ref)
    if var not in expr.free_vars:
        return np.zeros(shape)
    out = np.broadcast_to(np.asarray(num_grad(expr, var, env), dtype=float), shape)
    if not np.all(np.isfinite(out)):
        raise DerivativeAtKink(f"non-finite slope of {expr.source!r} along {var}")
    return out


@dataclass
class Derivatives:
    """Partial derivatives of the coefficients along a trajectory, shape ``(O, I, L[, comp])``."""

    f_x: np.ndarray
    f_y: np.ndarray
    f_z: np.ndarray
    g_x: np.ndarray
    F_x: np.ndarray
    G_x0: np.ndarray


def derivatives(problem: ControlProblem, traj: Trajectory) -> Derivatives:
    """``f_z`` is per unit of Levy mass: ``df/dz + (df/dz_i) / w_i`` for atom ``i``."""
    env = traj.env()
    shape = traj.X.shape
    f_x = _grad(problem.f, "x", env)
    ys = _names("y", problem.d, False)
    f_y = np.stack([_grad(problem.f, v, env) + (_grad(problem.f, "y", env) if problem.d == 1 else 0.0)
                    for v in ys], axis=-1)
    if problem.K:
        agg = _grad(problem.f, "z", env)
        f_z = np.stack([agg + _grad(problem.f, f"z{i + 1}", env) / traj.w[i] for i in range(problem.K)],
                       axis=-1)
    else:
        f_z = np.zeros(shape + (0,))
    genv = {"t": env["t"], "x": env["x"]}
    g_x = np.stack([_grad(e, "x", genv) for e in problem.g], axis=-1) if problem.m else np.zeros(shape + (0,))
    F_x = _grad(problem.F, "x", genv)
    G_x0 = _grad(problem.G, "x", {"x": traj.X[..., 0]})
    return Derivatives(f_x, f_y, f_z, g_x, F_x, G_x0)


@dataclass
class GammaProcess:
    """``Gamma(t_j, t_k) = exp(log_gamma[..., k] - log_gamma[..., j])`` per path."""

    grid: TimeGrid
    log_gamma: np.ndarray

    def _index(self, t) -> int:
        if isinstance(t, (int, np.integer)):
            if not 0 <= t <= self.grid.n_cells:
                raise ValidationError("grid index out of range")
            return int(t)
        return self.grid.index_of(float(t)) - self.grid.start

    def __call__(self, s_from, s_to) -> np.ndarray:
        """Values for grid indices (ints) or grid times (floats)."""
        j, k = self._index(s_from), self._index(s_to)
        return np.exp(self.log_gamma[..., k] - self.log_gamma[..., j])


def variational_gamma(problem: ControlProblem, traj: Trajectory, drivers: PathBundle,
                      der: Derivatives | None = None) -> GammaProcess:
    """``Gamma`` with ``(alpha, beta, gamma, delta) = (f_x, f_y, f_z, g_x)`` along ``traj``."""
    der = der or derivatives(problem, traj)
    if der.f_z.size and np.any(der.f_z <= -1):
        raise ValidationError("f_z must exceed -1 along the trajectory")
    lin = LinearCoeffs(alpha=der.f_x, beta=der.f_y, gamma_j=der.f_z if problem.K else 0.0,
                       delta=der.g_x if problem.m else 0.0)
    return GammaProcess(traj.grid, log_gamma_process(lin, drivers))


@dataclass
class Adjoint:
    """``p`` per path and time, and the diagnostic ``q = -g_x p``."""

    p: np.ndarray
    q: np.ndarray
    gamma: GammaProcess
    der: Derivatives


def adjoint(problem: ControlProblem, traj: Trajectory, drivers: PathBundle) -> Adjoint:
    """``p(t_k) = -sum_{j<k} F_x(t_j) Gamma(t_j, t_k) dt - Gamma(0, t_k) G_x(X(0))``."""
    der = derivatives(problem, traj)
    gam = variational_gamma(problem, traj, drivers, der)
    lg = gam.log_gamma
    dt = traj.grid.dt
    S = np.zeros(lg.shape)
    np.cumsum(der.F_x[..., :-1] * np.exp(-lg[..., :-1]) * dt, axis=-1, out=S[..., 1:])
    p = -(np.exp(lg) * S + np.exp(lg) * der.G_x0[..., None])
    p[..., 0] = -der.G_x0
    q = -der.g_x * p[..., None]
    return Adjoint(p, q, gam, der)


def adjoint_residual(adj: Adjoint, drivers: PathBundle) -> tuple[float, float]:
    """Mean per-path sum of the one-step residuals of the adjoint dynamics and its standard error.

    With several outer paths the standard error is computed from the
    per-outer-path averages.

    ``r_k = p_{k+1} - p_k - [D_k + (g_x . q)_k dt - q_{k+1} . dB_k
    + p_k f_y . dW_k + p_k sum_i f_z,i N~_ik]`` where the ``dt`` part
    ``-F_x + f_x p`` is stepped exponentially,
    ``D_k = (e^{f_x dt} - 1) p_k - e^{f_x dt} F_x dt``, which agrees with the
    Euler step to second order but carries no deterministic ``O(dt)`` drift.
    """
    p, q, D = adj.p, adj.q, adj.der
    dt = drivers.grid.dt
    pk = p[..., :-1]
    ef = np.exp(D.f_x[..., :-1] * dt)
    drift = (ef - 1) * pk - ef * D.F_x[..., :-1] * dt + np.sum(D.g_x[..., :-1, :] * q[..., :-1, :], axis=-1) * dt
    back = np.einsum("oikm,okm->oik", q[..., 1:, :], drivers.dB)
    fw = pk * np.einsum("oikd,oikd->oik", D.f_y[..., :-1, :], drivers.dW)
    jmp = pk * np.einsum("oika,oika->oik", D.f_z[..., :-1, :], drivers.compensated)
    r = (p[..., 1:] - pk - (drift - back + fw + jmp)).sum(axis=-1)
    if r.shape[0] > 1:
        # paths sharing a backward path are dependent, so the error is taken across outer paths
        per_outer = r.mean(axis=1)
        return float(per_outer.mean()), float(per_outer.std(ddof=1) / np.sqrt(per_outer.size))
    r = r.ravel()
    return float(r.mean()), float(r.std(ddof=1) / np.sqrt(r.size)) if r.size > 1 else 0.0


# maximum principles --------------------------------------------------------------

@dataclass
class MPReport:
    """Necessary-condition diagnostics of one candidate; per-time arrays have length ``n + 1``.

    ``dAc[k]`` is the continuous mass of the cell starting at ``t_k`` and
    ``dAjump[k]`` the jump at ``t_k``.  ``U``, ``V`` and ``V_compensated``
    (jump factor built from ``N - w dt``) are path averages.
    """

    label: str
    times: np.ndarray
    J: float
    J_stderr: float
    H_dt: np.ndarray
    H_dA: np.ndarray
    p: np.ndarray
    U: np.ndarray
    V: np.ndarray
    V_compensated: np.ndarray
    dAc: np.ndarray
    dAjump: np.ndarray
    min_U: float
    min_V: float
    slack_c: float
    slack_jump: float
    mass: float
    tol: float
    verdict: str = field(init=False)

    def __post_init__(self):
        for name in ("min_U", "min_V", "slack_c", "slack_jump", "mass"):
            if not np.isfinite(getattr(self, name)):
                raise NumericalError(f"{name} is not finite")
        self.verdict = "PASS" if self.residual <= self.tol else "FAIL"

    @property
    def slackness(self) -> float:
        return abs(self.slack_c) + abs(self.slack_jump)

    @property
    def residual(self) -> float:
        """Worst of ``-min U``, ``-min V`` and the slackness per unit mass (or absolute when massless)."""
        slack = self.slackness / self.mass if self.mass > 0 else self.slackness
        return max(-self.min_U, -self.min_V, slack, 0.0)

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def header(self) -> list[str]:
        return ["t", "p", "U", "V", "dAc", "dAjump"]

    def rows(self) -> list[list[float]]:
        return [[float(v) for v in r] for r in zip(self.times, self.p, self.U, self.V, self.dAc, self.dAjump)]

    def summary(self) -> str:
        return (f"necessary {self.verdict} label={self.label or '-'} J={self.J:.10g} stderr={self.J_stderr:.3g} "
                f"min_U={self.min_U:.6g} min_V={self.min_V:.6g} slack_c={self.slack_c:.6g} "
                f"slack_jump={self.slack_jump:.6g} mass={self.mass:.6g} tol={self.tol:.3g}")


def necessary_check(cand: ControlCandidate, problem: ControlProblem, drivers: PathBundle, reg: RegressionConfig,
                    tol: float = 1e-3, threads: int = 1) -> MPReport:
    """Evaluate ``U``, ``V`` and complementary slackness for ``cand``."""
    if not tol >= 0:
        raise ValidationError("tol must be nonnegative")
    traj = solve_state(problem, cand, drivers, reg, threads=threads)
    J, se = cost(cand, problem, drivers, reg, traj)
    adj = adjoint(problem, traj, drivers)
    grid = traj.grid
    shape = traj.X.shape[:2]
    Ht, ht = _per_time(problem.H, grid), _per_time(problem.h, grid)
    U = Ht - adj.p * ht
    N = np.zeros(traj.X.shape + (problem.K,))
    N[..., 1:, :] = drivers.counts
    Nc = np.zeros_like(N)
    Nc[..., 1:, :] = drivers.compensated
    jf = 1.0 + np.sum(adj.der.f_z * N, axis=-1)
    jfc = 1.0 + np.sum(adj.der.f_z * Nc, axis=-1)
    V = Ht - adj.p * ht * jf
    Vc = Ht - adj.p * ht * jfc
    cont, jump = _path_cells(cand.A, shape)
    slack_c = float(np.mean(np.sum(U[..., :-1] * cont, axis=-1)))
    slack_j = float(np.mean(np.sum(V[..., 1:] * jump, axis=-1)))
    env = traj.env()
    z_atoms = traj.Z if problem.K else np.zeros(traj.X.shape + (0,))
    H_dt, H_dA = hamiltonian(env["t"], traj.X, traj.Y, z_atoms, adj.p,
                             adj.q if problem.m else 0.0, problem, traj.w)
    mean = lambda a: np.broadcast_to(a, traj.X.shape).mean(axis=(0, 1))
    dAc = np.zeros(grid.n_cells + 1)
    dAc[:-1] = cont.mean(axis=(0, 1))
    dAj = np.zeros(grid.n_cells + 1)
    dAj[1:] = jump.mean(axis=(0, 1))
    Um, Vm = mean(U), mean(V)
    return MPReport(cand.label, grid.times.copy(), J, se, mean(H_dt), mean(H_dA), mean(adj.p), Um, Vm,
                    mean(Vc), dAc, dAj, float(Um.min()), float(Vm[1:].min() if len(Vm) > 1 else Vm.min()),
                    slack_c, slack_j, _mass(cand.A), tol)


@dataclass
class SufficientReport:
    """Outcome of the sampled convexity probes and the dA comparison."""

    label: str
    hamiltonian_gap: float
    G_gap: float
    smpcon_gap: float
    n_probe: int
    tol: float
    failing_probe: str = ""

    @property
    def hamiltonian_convex(self) -> bool:
        return self.hamiltonian_gap <= self.tol

    @property
    def G_convex(self) -> bool:
        return self.G_gap <= self.tol

    @property
    def smpcon(self) -> bool:
        return self.smpcon_gap <= self.tol

    @property
    def verdict(self) -> str:
        ok = self.hamiltonian_convex and self.G_convex and self.smpcon
        return "SUFFICIENT-PASS" if ok else "SUFFICIENT-FAIL"

    @property
    def passed(self) -> bool:
        return self.verdict == "SUFFICIENT-PASS"

    def summary(self) -> str:
        return (f"sufficient {self.verdict} label={self.label or '-'} hamiltonian_gap={self.hamiltonian_gap:.6g} "
                f"G_gap={self.G_gap:.6g} smpcon_gap={self.smpcon_gap:.6g} n_probe={self.n_probe} "
                f"tol={self.tol:.3g}" + (f" failing={self.failing_probe}" if self.failing_probe else ""))


def probe_controls(cand: ControlCandidate, n_probe: int, seed: int = 0) -> list[ControlCandidate]:
    """Perturbation controls: scalings, time shifts, single jumps and convex combinations.

    Every single unit jump on the grid and shifts by one or two cells either
    way are always included; ``n_probe`` random members of each family follow.
    """
    A = cand.A
    grid = A.grid
    n = grid.n_cells
    scale = max(_mass(A), 1.0)
    gen = RngStream(seed, "control-probe").generator()
    out = [ControlCandidate.single_jump(grid, k, scale, f"jump@{k}") for k in range(1, n + 1)]
    out += [ControlCandidate(A.shifted(s), f"shift{s:+d}") for s in (-2, -1, 1, 2) if abs(s) < n]
    for i in range(n_probe):
        c = float(gen.uniform(0.0, 2.0))
        out.append(ControlCandidate(A.scaled(c), f"scale{c:.3f}"))
        s = int(gen.integers(-n + 1, n))
        out.append(ControlCandidate(A.shifted(s), f"shift{s:+d}"))
        k, size = int(gen.integers(1, n + 1)), float(gen.uniform(0.0, 2.0 * scale))
        jump = ControlCandidate.single_jump(grid, k, size)
        out.append(ControlCandidate(jump.A, f"jump@{k}x{size:.3f}"))
        lam = float(gen.uniform(0.0, 1.0))
        mix = IncreasingProcessPath(grid, lam * A.density + (1 - lam) * jump.A.density,
                                    lam * A.jumps + (1 - lam) * jump.A.jumps)
        out.append(ControlCandidate(mix, f"mix{lam:.3f}@{k}"))
    return out


def _midpoint_gap(fn, u: np.ndarray, v: np.ndarray) -> float:
    """Largest ``fn((u+v)/2) - (fn(u) + fn(v))/2``; positive means a convexity violation."""
    return float(np.max(fn(0.5 * (u + v)) - 0.5 * (fn(u) + fn(v))))


def sufficient_check(cand: ControlCandidate, problem: ControlProblem, drivers: PathBundle, reg: RegressionConfig,
                     tol: float = 1e-3, n_probe: int = 64, seed: int = 0, box: float = 2.0,
                     threads: int = 1) -> SufficientReport:
    """Midpoint convexity of the Hamiltonian's dt-density and of ``G``, then the dA comparison."""
    if n_probe < 1:
        raise ValidationError("n_probe must be >= 1")
    traj = solve_state(problem, cand, drivers, reg, threads=threads)
    adj = adjoint(problem, traj, drivers)
    grid = traj.grid
    gen = RngStream(seed, "control-convexity").generator()
    d, K, m = problem.d, problem.K, problem.m
    flat_p = adj.p.reshape(-1)
    flat_q = adj.q.reshape(flat_p.size, m)
    pick = gen.integers(0, flat_p.size, size=n_probe)
    tk = grid.times[pick % grid.times.size]
    pv, qv = flat_p[pick], flat_q[pick]
    width = 1 + d + K
    centre = np.concatenate([traj.X.reshape(-1, 1), traj.Y.reshape(-1, d), traj.Z.reshape(traj.X.size, K)], axis=-1)[pick]
    u = centre + gen.uniform(-box, box, size=(n_probe, width))
    v = centre + gen.uniform(-box, box, size=(n_probe, width))
    w = traj.w

    def ham(s):
        return hamiltonian(tk, s[:, 0], s[:, 1:1 + d], s[:, 1 + d:], pv, qv, problem, w)[0]

    h_gap = _midpoint_gap(ham, u, v)
    G_fn = lambda s: np.broadcast_to(np.asarray(evaluate(problem.G, {"x": s[:, 0]}), dtype=float), s.shape[:1])
    g_gap = _midpoint_gap(G_fn, u, v)
    U = _per_time(problem.H, grid) - adj.p * _per_time(problem.h, grid)
    shape = U.shape[:2]
    ref = float(np.mean(_stieltjes(U, cand.A, shape)))
    worst, label = -np.inf, ""
    for pr in probe_controls(cand, n_probe, seed):
        gap = ref - float(np.mean(_stieltjes(U, pr.A, shape)))
        if gap > worst:
            worst, label = gap, pr.label
    return SufficientReport(cand.label, h_gap, g_gap, worst, n_probe, tol, label if worst > tol else "")


# lattice search ---------------------------------------------------------------------

@dataclass
class LatticeResult:
    """Best single-jump control over a size-by-time lattice and the full cost table."""

    best: ControlCandidate
    J: float
    J_stderr: float
    sizes: np.ndarray
    indices: np.ndarray
    table: np.ndarray


def lattice_search(problem: ControlProblem, drivers: PathBundle, reg: RegressionConfig,
                   sizes: Sequence[float] | None = None, indices: Sequence[int] | None = None,
                   threads: int = 1) -> LatticeResult:
    """Exhaustive minimization of ``J`` over single jumps; ties go to the earliest time, then the smallest size."""
    grid = drivers.grid
    sizes = np.arange(1, 101) / 100.0 if sizes is None else np.asarray(sizes, dtype=float)
    indices = np.arange(1, grid.n_cells + 1) if indices is None else np.asarray(indices, dtype=int)
    table = np.empty((len(indices), len(sizes)))
    errs = np.empty_like(table)
    for a, k in enumerate(indices):
        for b, s in enumerate(sizes):
            table[a, b], errs[a, b] = cost(ControlCandidate.single_jump(grid, int(k), float(s)),
                                           problem, drivers, reg, threads=threads)
    a, b = np.unravel_index(int(np.argmin(table)), table.shape)
    best = ControlCandidate.single_jump(grid, int(indices[a]), float(sizes[b]),
                                        f"lattice@{int(indices[a])}x{sizes[b]:.6g}")
    return LatticeResult(best, float(table[a, b]), float(errs[a, b]), sizes, indices, table)


def desk_problem() -> ControlProblem:
    """``G = x^2``, ``h = 1``, ``H(t) = 2 (t - 1/2)^2 - 1`` with ``f = g = F = 0`` and ``xi = 0``."""
    return ControlProblem.build(G="x^2", h=1, H="2*(t - 0.5)^2 - 1")
