"""One-dimensional finite differences for the semilinear integro-differential
equation with a nonlinear Neumann condition on an interval ``(a, b)``:

    u_t + b u_x + (sigma^2 / 2) u_xx + sum_i w_i [u(x + g_i) - u - u_x g_i]
        + f(t, x, u, u_x sigma, sum_i w_i [u(x + g_i) - u]) = 0,
    n . u_x + h(t, x, u) = 0 at x = a (n = +1) and x = b (n = -1),
    u(T, x) = l(x).

Backward stepping is implicit in the diffusion and explicit in drift, jumps
and ``f``; the explicit terms use a Heun predictor-corrector, so they are
second order in time.  The boundary values solve the one-sided second-order
closure ``3 u_0 - 2 dx h(u_0) = 4 u_1 - u_2`` (and its mirror image) by a
bracketed scalar root search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .coefficients import CoefficientSet, bindings, eval_shaped
from .errors import BoundaryNewtonFailure, JumpLeavesDomain, StabilityViolation, ValidationError

STABILITY_C = 0.5
ROOT_XTOL = 1e-12
MAX_SWEEPS = 100


@dataclass(frozen=True)
class FDGrid:
    """Uniform nodes on ``[a, b]`` and ``n_t`` uniform time steps on ``[0, T]``."""

    a: float
    b: float
    n_x: int
    T: float
    n_t: int

    def __post_init__(self):
        if not self.a < self.b:
            raise ValidationError("FD interval needs a < b")
        if self.n_x < 5:
            raise ValidationError("n_x must be at least 5")
        if self.n_t < 1 or not self.T > 0:
            raise ValidationError("need T > 0 and n_t >= 1")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.n_x)

    @property
    def dx(self) -> float:
        return (self.b - self.a) / (self.n_x - 1)

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @classmethod
    def stable(cls, a: float, b: float, n_x: int, T: float, sigma_max: float, c: float = STABILITY_C,
               min_steps: int = 1) -> "FDGrid":
        """Smallest ``n_t`` meeting ``dt <= c dx^2 / sigma_max^2``."""
        dx = (b - a) / (n_x - 1)
        limit = c * dx * dx / max(sigma_max ** 2, 1e-300)
        return cls(a, b, n_x, T, max(min_steps, int(np.ceil(T / limit * (1 + 1e-12)))))


@dataclass
class FDSolution:
    grid: FDGrid
    u: np.ndarray

    def at(self, t: float, x) -> np.ndarray:
        """Linear interpolation in ``x`` and between the two time levels around ``t``."""
        if not 0 <= t <= self.grid.T * (1 + 1e-12):
            raise ValidationError(f"time {t} outside [0, T]")
        s = min(t / self.grid.dt, self.grid.n_t)
        k = min(int(np.floor(s)), self.grid.n_t - 1)
        r = s - k
        x = np.asarray(x, dtype=float)
        lo = np.interp(x, self.grid.x, self.u[k])
        if r <= 1e-9:
            return lo
        return (1 - r) * lo + r * np.interp(x, self.grid.x, self.u[k + 1])


def _sigma2(cs: CoefficientSet, t, x) -> np.ndarray:
    env = bindings(t, x[:, None])
    return sum(eval_shaped(e, env, x.shape) ** 2 for e in cs.sigma[0])


def _boundary_root(F, guess: float, scale: float) -> float:
    """Root of the increasing-in-practice scalar function ``F`` near ``guess``."""
    step = max(scale, 1e-8)
    lo, hi = guess - step, guess + step
    flo, fhi = F(lo), F(hi)
    for _ in range(80):
        if np.sign(flo) != np.sign(fhi) or flo == 0 or fhi == 0:
            break
        step *= 2
        lo, hi = guess - step, guess + step
        flo, fhi = F(lo), F(hi)
    else:
        raise BoundaryNewtonFailure("could not bracket the Neumann closure")
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    try:
        return brentq(F, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=200)
    except (RuntimeError, ValueError) as exc:
        raise BoundaryNewtonFailure(str(exc)) from None


def _depends_on_t(exprs) -> bool:
    return any("t" in e.free_vars for e in exprs)


def solve_ipde(cs: CoefficientSet, grid: FDGrid, jumps: bool = True) -> FDSolution:
    """Backward time stepping from ``u(T) = ell``; ``jumps=False`` drops the jump terms entirely."""
    if cs.n != 1:
        raise ValidationError("the FD oracle is one-dimensional")
    if not cs.g_is_zero():
        raise ValidationError("the FD oracle handles g = 0 only")
    x = grid.x
    nx, dx, dt = grid.n_x, grid.dx, grid.dt
    use_jumps = jumps and cs.levy is not None
    w = cs.levy.w if use_jumps else None
    U = np.empty((grid.n_t + 1, nx))
    U[-1] = eval_shaped(cs.ell, bindings(grid.T, x[:, None]), x.shape)
    xi = x[1:-1]
    m = nx - 2
    ends = np.array([[grid.a], [grid.b]])
    h_linear = "y" not in cs.h.free_vars

    def implicit(t):
        s2 = _sigma2(cs, t, x)
        limit = STABILITY_C * dx * dx / max(float(s2.max()), 1e-300)
        if dt > limit * (1 + 1e-9):
            raise StabilityViolation(f"dt={dt:.3g} exceeds {STABILITY_C} dx^2 / max sigma^2 = {limit:.3g}")
        r = 0.5 * s2[1:-1] * dt / (dx * dx)
        ab = np.zeros((3, m))
        ab[0, 1:] = -r[:-1]
        ab[1] = 1 + 2 * r
        ab[2, :-1] = -r[1:]
        E = np.zeros((m, 2))
        E[0, 0] = r[0]
        E[-1, 1] = r[-1]
        pq = solve_banded((1, 1), ab, E)
        return ab, pq[:, 0], pq[:, 1]

    def explicit_coeffs(t):
        env = bindings(t, xi[:, None])
        drift = eval_shaped(cs.b[0], env, xi.shape)
        sig = np.stack([eval_shaped(e, env, xi.shape) for e in cs.sigma[0]], axis=-1)
        gams = []
        if use_jumps:
            for e in cs.levy.marks:
                env["e"] = e
                gam = eval_shaped(cs.gamma[0], env, xi.shape)
                xd = xi + gam
                if np.any(xd < grid.a - 1e-12) or np.any(xd > grid.b + 1e-12):
                    raise JumpLeavesDomain("a jump displacement leaves the FD interval")
                gams.append((gam, np.clip(xd, grid.a, grid.b)))
        return drift, sig, gams

    imp_cached = None if _depends_on_t(cs.sigma[0]) else implicit(0.0)
    exp_cached = None if _depends_on_t((*cs.b, *cs.sigma[0], *cs.gamma)) else explicit_coeffs(0.0)
    def explicit_terms(t, u):
        """Drift, jump and generator terms at the interior nodes."""
        drift, sig, gams = exp_cached or explicit_coeffs(t)
        ux = (u[2:] - u[:-2]) / (2 * dx)
        out = drift * ux
        shifts = []
        for i, (gam, xd) in enumerate(gams):
            shift = np.interp(xd, x, u) - u[1:-1]
            shifts.append(shift)
            out = out + w[i] * (shift - ux * gam)
        atoms = np.stack(shifts, axis=-1) if shifts else None
        return out + eval_shaped(cs.f, bindings(t, xi[:, None], u[1:-1], ux[:, None] * sig, atoms, w), xi.shape)

    def close(t, ab, p, q, rhs, u_prev):
        """Implicit diffusion solve plus the Neumann closure; returns all nodes."""
        v = solve_banded((1, 1), ab, rhs)
        if h_linear:
            hv = eval_shaped(cs.h, bindings(t, ends), (2,))
            M = np.array([[3 - 4 * p[0] + p[1], -4 * q[0] + q[1]],
                          [-4 * p[-1] + p[-2], 3 - 4 * q[-1] + q[-2]]])
            b = np.array([2 * dx * hv[0] + 4 * v[0] - v[1], 2 * dx * hv[1] + 4 * v[-1] - v[-2]])
            left, right = np.linalg.solve(M, b)
        else:
            left, right = _neumann_sweeps(cs, t, grid, v, p, q, u_prev[0], u_prev[-1])
        out = np.empty(nx)
        out[0], out[-1] = left, right
        out[1:-1] = v + left * p + right * q
        return out

    # Heun predictor-corrector on the explicit terms, backward Euler on diffusion
    for n in range(grid.n_t - 1, -1, -1):
        t_new, t_old = grid.times[n], grid.times[n + 1]
        u = U[n + 1]
        ab, p, q = imp_cached or implicit(t_new)
        k1 = explicit_terms(t_old, u)
        pred = close(t_new, ab, p, q, u[1:-1] + dt * k1, u)
        k2 = explicit_terms(t_new, pred)
        U[n] = close(t_new, ab, p, q, u[1:-1] + 0.5 * dt * (k1 + k2), pred)
    return FDSolution(grid, U)


def _neumann_sweeps(cs, t, grid, v, p, q, left, right):
    """Alternate scalar root solves for the two boundary values until both settle."""
    dx = grid.dx

    def h_at(xb, y):
        return float(eval_shaped(cs.h, bindings(t, np.array([[xb]]), np.array([y])), (1,))[0])

    for _ in range(MAX_SWEEPS):
        prev = (left, right)
        R = right
        Fl = lambda y: (3 * y - 2 * dx * h_at(grid.a, y)
                        - 4 * (v[0] + y * p[0] + R * q[0]) + (v[1] + y * p[1] + R * q[1]))
        left = _boundary_root(Fl, left, dx * (1 + abs(left)))
        L = left
        Fr = lambda y: (3 * y - 2 * dx * h_at(grid.b, y)
                        - 4 * (v[-1] + L * p[-1] + y * q[-1]) + (v[-2] + L * p[-2] + y * q[-2]))
        right = _boundary_root(Fr, right, dx * (1 + abs(right)))
        if max(abs(left - prev[0]), abs(right - prev[1])) <= 1e-13 * (1 + abs(left) + abs(right)):
            return left, right
    raise BoundaryNewtonFailure("boundary sweeps did not settle")
