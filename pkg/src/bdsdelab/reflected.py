"""Reflected jump-diffusion in a smooth domain ``{phi > 0}``.

Each Euler step adds drift, diffusion and compensated jumps.  When the
proposal leaves the closed domain it is moved back onto the boundary along
the inward normal ``grad phi / |grad phi|``; the distance moved is the
increment of the boundary local time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .coefficients import AssumptionWarning, CoefficientSet, eval_drift, eval_gamma, eval_sigma
from .dsl import Expr, evaluate, parse
from .errors import JumpLeavesDomain, ProjectionFailure, ValidationError
from .parallel import chunks, ordered_map
from .paths import BrownianPath, IncreasingProcessPath, JumpMeasurePath, TimeGrid

PATH_CHUNK = 2048
ROOT_TOL = 1e-12
# finite-difference normals carry ~1e-10 rounding noise
NORMAL_TOL = 1e-9
MAX_ITER = 50


@dataclass(frozen=True)
class DomainSpec:
    """Domain ``{phi > 0}`` in ``R^n``; ``bbox`` (per-axis ``(lo, hi)``) bounds its closure."""

    phi: Expr
    n_dim: int = 1
    boundary_tol: float = 1e-8
    bbox: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if isinstance(self.phi, str):
            object.__setattr__(self, "phi", parse(self.phi))
        if self.n_dim < 1:
            raise ValidationError("n_dim must be >= 1")
        if not self.boundary_tol > 0:
            raise ValidationError("boundary_tol must be positive")
        allowed = set(self.var_names) | {"x"} if self.n_dim == 1 else set(self.var_names)
        extra = self.phi.free_vars - allowed
        if extra:
            raise ValidationError(f"phi may only use {sorted(allowed)}, found {sorted(extra)}")
        if self.bbox is not None:
            box = tuple((float(lo), float(hi)) for lo, hi in self.bbox)
            if len(box) != self.n_dim or any(not lo < hi for lo, hi in box):
                raise ValidationError("bbox needs one (lo, hi) pair per dimension with lo < hi")
            object.__setattr__(self, "bbox", box)

    @property
    def var_names(self) -> list[str]:
        return [f"x{i + 1}" for i in range(self.n_dim)]

    def _env(self, x: np.ndarray) -> dict:
        env = {f"x{i + 1}": x[..., i] for i in range(self.n_dim)}
        if self.n_dim == 1:
            env["x"] = x[..., 0]
        return env

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(evaluate(self.phi, self._env(x)), dtype=float), x.shape[:-1])

    def grad(self, x) -> np.ndarray:
        """Central-difference gradient, shape ``x.shape``."""
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for i in range(self.n_dim):
            h = 1e-6 * np.maximum(1.0, np.abs(x[..., i]))
            hi, lo = x.copy(), x.copy()
            hi[..., i] += h
            lo[..., i] -= h
            out[..., i] = (self.value(hi) - self.value(lo)) / (2 * h)
        return out

    def check(self, n_samples: int = 2000, seed: int = 0) -> float:
        """Largest ``| |grad phi| - 1 |`` at sampled boundary points (warns above ``1e-3``)."""
        if self.bbox is None:
            return 0.0
        rng = np.random.default_rng(seed)
        lo, hi = np.array(self.bbox).T
        pts = rng.uniform(lo, hi, size=(n_samples, self.n_dim))
        outside = pts[self.value(pts) < 0]
        if len(outside) == 0:
            return 0.0
        proj, _ = project_to_boundary(outside, self)
        dev = float(np.max(np.abs(np.linalg.norm(self.grad(proj), axis=-1) - 1.0)))
        if dev > 1e-3:
            warnings.warn(f"|grad phi| deviates from 1 by {dev:.3g} on the boundary", AssumptionWarning,
                          stacklevel=2)
        return dev


def interval_domain(a: float, b: float, boundary_tol: float = 1e-8) -> DomainSpec:
    """``(a, b)`` via ``phi = (x - a)(b - x)/(b - a)``, which has unit slope at both ends."""
    if not a < b:
        raise ValidationError("interval needs a < b")
    return DomainSpec(parse(f"(x - {a!r}) * ({b!r} - x) / {b - a!r}"), 1, boundary_tol, ((a, b),))


# projection -----------------------------------------------------------------

def _ray_root(domain: DomainSpec, xh: np.ndarray, u: np.ndarray):
    """Smallest ``s > 0`` with ``phi(xh + s u) = 0`` by bracketed Newton with bisection fallback."""
    M = len(xh)
    f0 = domain.value(xh)
    slope0 = np.einsum("mi,mi->m", domain.grad(xh), u)
    lo = np.zeros(M)
    hi = np.where(slope0 > 0, -f0 / np.where(slope0 > 0, slope0, 1.0), np.abs(f0)) + 1e-300
    fhi = domain.value(xh + hi[:, None] * u)
    for _ in range(64):
        bad = fhi < 0
        if not bad.any():
            break
        lo = np.where(bad, hi, lo)
        hi = np.where(bad, 2 * hi, hi)
        fhi = np.where(bad, domain.value(xh + hi[:, None] * u), fhi)
    else:
        raise ProjectionFailure("could not bracket the boundary along the normal")
    s = hi.copy()
    fs = fhi.copy()
    done = np.abs(fs) <= ROOT_TOL
    for _ in range(MAX_ITER):
        if done.all():
            return s
        live = ~done
        x = xh[live] + s[live, None] * u[live]
        slope = np.einsum("mi,mi->m", domain.grad(x), u[live])
        with np.errstate(all="ignore"):
            newton = s[live] - fs[live] / slope
        lo_l, hi_l = lo[live], hi[live]
        ok = np.isfinite(newton) & (newton > lo_l) & (newton < hi_l)
        cand = np.where(ok, newton, 0.5 * (lo_l + hi_l))
        fc = domain.value(xh[live] + cand[:, None] * u[live])
        lo[live] = np.where(fc < 0, cand, lo_l)
        hi[live] = np.where(fc >= 0, cand, hi_l)
        s[live] = cand
        fs[live] = fc
        done[live] = np.abs(fc) <= ROOT_TOL
    if not done.all():
        raise ProjectionFailure(f"boundary root not found in {MAX_ITER} iterations")
    return s


def project_to_boundary(xhat, domain: DomainSpec) -> tuple[np.ndarray, np.ndarray]:
    """Move points with ``phi < 0`` onto the boundary along the normal at the landing point.

    Accepts one point ``(n,)`` or a batch ``(M, n)``; returns ``(x_proj, dist)``
    with ``x_proj = xhat + dist * grad phi(x_proj) / |grad phi(x_proj)|``.
    """
    x = np.asarray(xhat, dtype=float)
    single = x.ndim == 1
    xh = np.atleast_2d(x)
    if np.any(domain.value(xh) >= 0):
        raise ValidationError("project_to_boundary expects points with phi < 0")
    g = domain.grad(xh)
    u = g / np.linalg.norm(g, axis=-1, keepdims=True)
    if not np.all(np.isfinite(u)):
        raise ProjectionFailure("normal direction undefined")
    for _ in range(MAX_ITER):
        s = _ray_root(domain, xh, u)
        xp = xh + s[:, None] * u
        if domain.n_dim == 1:
            break
        g = domain.grad(xp)
        un = g / np.linalg.norm(g, axis=-1, keepdims=True)
        if np.max(np.abs(un - u)) <= NORMAL_TOL:
            break
        u = un
    else:
        raise ProjectionFailure("normal direction did not settle")
    if single:
        return xp[0], float(s[0])
    return xp, s


# simulation -----------------------------------------------------------------

@dataclass
class ReflectedState:
    """Paths ``X`` (shape ``(P, L, n)``), boundary local time and contact record."""

    grid: TimeGrid
    X: np.ndarray
    A_local: IncreasingProcessPath
    contact: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]


def _simulate_chunk(x0, cs, domain, grid, dW, counts, project: bool):
    P, n = dW.shape[0], grid.n_cells
    dt = grid.dt
    X = np.empty((P, n + 1, cs.n))
    X[:, 0] = x0
    dist = np.zeros((P, n))
    contact = np.zeros((P, n + 1), dtype=bool)
    w = cs.levy.w if cs.levy is not None and counts is not None else None
    for k in range(n):
        t = grid.times[k]
        xk = X[:, k]
        step = xk + eval_drift(cs, t, xk) * dt + np.einsum("pij,pj->pi", eval_sigma(cs, t, xk), dW[:, k])
        if w is not None:
            gam = eval_gamma(cs, t, xk)
            step = step + np.einsum("pik,pk->pi", gam, counts[:, k] - w * dt)
            if domain is not None:
                hit = counts[:, k] > 0
                if hit.any():
                    pi, ki = np.nonzero(hit)
                    landing = xk[pi] + gam[pi, :, ki]
                    if np.any(domain.value(landing) < -domain.boundary_tol):
                        raise JumpLeavesDomain(f"a jump at t={grid.times[k + 1]:.6g} leaves the domain")
        if project:
            out = domain.value(step) < 0
            if out.any():
                xp, s = project_to_boundary(step[out], domain)
                step[out] = xp
                dist[out, k] = s
                contact[out, k + 1] = True
        X[:, k + 1] = step
    return X, dist, contact


def _simulate(start, cs, domain, W, N, threads, project):
    t, x = start
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (cs.n,):
        raise ValidationError(f"start point needs {cs.n} components")
    if W.dim != cs.d:
        raise ValidationError("Brownian dimension does not match sigma")
    if domain is not None and domain.value(x) < -domain.boundary_tol:
        raise ValidationError("start point lies outside the closed domain")
    k0 = W.grid.index_of(t) - W.grid.start
    Wr = W.restrict(k0)
    grid = Wr.grid
    counts = None
    if N is not None and cs.levy is not None:
        W.grid.check_same(N.grid)
        counts = N.restrict(k0).counts
    dt = grid.dt

    def run(sl):
        return _simulate_chunk(x, cs, domain, grid, Wr.increments[sl],
                               None if counts is None else counts[sl], project)

    parts = ordered_map(run, chunks(W.n_paths, PATH_CHUNK), threads)
    X = np.concatenate([p[0] for p in parts])
    dist = np.concatenate([p[1] for p in parts])
    contact = np.concatenate([p[2] for p in parts])
    A = IncreasingProcessPath(grid, dist / dt, np.zeros_like(dist))
    return ReflectedState(grid, X, A, contact)


def simulate_reflected(start, coeffs: CoefficientSet, domain: DomainSpec, W: BrownianPath,
                       N: JumpMeasurePath | None = None, threads: int = 1) -> ReflectedState:
    """Reflected Euler scheme from ``start = (t, x)`` on the driver grid restricted to ``[t, T]``."""
    if domain.n_dim != coeffs.n:
        raise ValidationError("domain dimension differs from the state dimension")
    return _simulate(start, coeffs, domain, W, N, threads, project=True)


def simulate_euler(start, coeffs: CoefficientSet, W: BrownianPath, N: JumpMeasurePath | None = None,
                   threads: int = 1) -> ReflectedState:
    """Plain Euler jump-diffusion with the same arithmetic as :func:`simulate_reflected`."""
    return _simulate(start, coeffs, None, W, N, threads, project=False)
