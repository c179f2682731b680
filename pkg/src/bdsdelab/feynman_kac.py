"""Pointwise evaluation of ``u(t, x) = Y^{t,x}(t)``.

Each point is resimulated forward from ``(t, x)`` with the reflected scheme,
then the backward equation is solved on those paths.  All points of a field
share the same driver streams.  For ``g != 0`` the value depends on the
backward path, so estimates are returned per outer (``B``) path; route
``"direct"`` solves with ``g`` in the recursion and route ``"transform"``
solves the pathwise equation from :mod:`doss_sussmann` and maps back with
``eta``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .coefficients import CoefficientSet, bindings, eval_shaped
from .doss_sussmann import FlowPair, default_axes, transform_coeffs
from .errors import GridMismatch, ValidationError
from .gbdsde import SolutionTriple, solve_picard
from .paths import BrownianPath, PathBundle, TimeGrid, gen_bundle
from .reflected import DomainSpec, simulate_reflected
from .regression import RegressionConfig

ROUTES = ("direct", "transform")


@dataclass(frozen=True)
class FKProblem:
    """Coefficients, domain and time discretization of a Feynman-Kac evaluation."""

    coeffs: CoefficientSet
    domain: DomainSpec
    T: float = 1.0
    n_steps: int = 50
    tol: float = 1e-8
    max_iter: int = 100
    lattice_points: int = 33

    def __post_init__(self):
        if self.domain.n_dim != self.coeffs.n:
            raise ValidationError("domain dimension differs from the state dimension")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.n_steps)


@dataclass
class FieldEstimate:
    """Estimates at ``points``; ``per_path`` holds one column per outer path."""

    points: list[tuple[float, np.ndarray]]
    values: np.ndarray
    stderrs: np.ndarray
    per_path: np.ndarray
    per_path_stderr: np.ndarray
    n_outer: int
    n_inner: int
    n_steps: int

    def rows(self) -> list[list[float]]:
        """``t, x1..xn, u, stderr, n_outer, n_inner, n_steps`` per point."""
        out = []
        for (t, x), v, s in zip(self.points, self.values, self.stderrs):
            out.append([t, *np.atleast_1d(x).tolist(), float(v), float(s),
                        self.n_outer, self.n_inner, self.n_steps])
        return out

    def header(self) -> list[str]:
        n = len(np.atleast_1d(self.points[0][1])) if self.points else 1
        return ["t", *[f"x{i + 1}" for i in range(n)], "u", "stderr", "n_outer", "n_inner", "n_steps"]


def make_drivers(problem: FKProblem, mc: RegressionConfig, seed: int, B: BrownianPath | None = None,
                 threads: int = 1) -> PathBundle:
    """Driver bundle for every point of a field; ``B`` overrides the generated backward paths."""
    cs = problem.coeffs
    bundle = gen_bundle(problem.grid, mc.n_outer, mc.n_inner, cs.d, cs.m, cs.levy, seed, threads)
    if B is not None:
        if cs.m == 0:
            raise ValidationError("a backward path was supplied but g has no components")
        problem.grid.check_same(B.grid)
        if B.n_paths != mc.n_outer or B.dim != cs.m:
            raise GridMismatch("supplied B needs n_outer paths of dimension m")
        bundle = replace(bundle, B=B)
    return bundle


def _terminal(problem: FKProblem, x: np.ndarray) -> float:
    return float(eval_shaped(problem.coeffs.ell, bindings(problem.T, x[None]), (1,))[0])


def _solve_point(point, problem: FKProblem, mc: RegressionConfig, drivers: PathBundle, route: str,
                 threads: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-outer-path value and standard error of ``u(t, x)``."""
    if route not in ROUTES:
        raise ValidationError(f"route must be one of {ROUTES}")
    cs, grid = problem.coeffs, problem.grid
    t, x = float(point[0]), np.atleast_1d(np.asarray(point[1], dtype=float))
    k0 = grid.index_of(t)
    O, I = drivers.n_outer, drivers.n_inner
    if k0 == grid.n_steps:
        if problem.domain.value(x) < -problem.domain.boundary_tol:
            raise ValidationError("point lies outside the closed domain")
        return np.full(O, _terminal(problem, x)), np.zeros(O)
    X = simulate_reflected((t, x), cs, problem.domain, drivers.W, drivers.N, threads)
    drv = drivers.restrict(k0)
    L = drv.grid.n_cells + 1
    state = X.X.reshape(O, I, L, cs.n)
    xi = eval_shaped(cs.ell, bindings(problem.T, state[:, :, -1]), (O, I))
    kw = dict(tol=problem.tol, max_iter=problem.max_iter, state=state, features=state, threads=threads)
    if route == "direct" or cs.m == 0 or cs.g_is_zero():
        sol = solve_picard(cs, xi, X.A_local, drv, mc, **kw)
        return sol.y0.copy(), sol.y0_stderr.copy()
    if problem.domain.bbox is None:
        raise ValidationError("the transform route needs a domain bounding box for its lattice")
    flow = FlowPair.build(cs.g, drv.B, default_axes(problem.domain.bbox, problem.lattice_points))
    tc = transform_coeffs(cs, flow, problem.domain)
    sol: SolutionTriple = solve_picard(tc, xi, X.A_local, replace(drv, B=None), mc, **kw)
    shift = np.array([flow.I_at(t, x, o)[()] for o in range(O)]).reshape(O)
    return sol.y0 + shift, sol.y0_stderr.copy()


def evaluate_u_deterministic(point, problem: FKProblem, mc: RegressionConfig, seed: int = 0,
                             threads: int = 1, drivers: PathBundle | None = None) -> tuple[float, float]:
    """``u(t, x)`` for ``g = 0``: average over outer paths and its standard error."""
    if problem.coeffs.m and not problem.coeffs.g_is_zero():
        raise ValidationError("evaluate_u_deterministic needs g = 0")
    drivers = drivers or make_drivers(problem, mc, seed, threads=threads)
    v, s = _solve_point(point, problem, mc, drivers, "direct", threads)
    return float(v.mean()), float(np.sqrt(np.sum(s ** 2)) / len(v))


def evaluate_u_stochastic(point, problem: FKProblem, mc: RegressionConfig, route: str = "transform",
                          seed: int = 0, B: BrownianPath | None = None, threads: int = 1,
                          drivers: PathBundle | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``u(t, x)`` per backward path (shape ``(n_outer,)``) with per-path standard errors."""
    drivers = drivers or make_drivers(problem, mc, seed, B, threads)
    return _solve_point(point, problem, mc, drivers, route, threads)


def evaluate_field(points: Sequence, problem: FKProblem, mc: RegressionConfig, route: str = "transform",
                   seed: int = 0, threads: int = 1, B: BrownianPath | None = None) -> FieldEstimate:
    """All ``points`` with shared drivers; ``values`` average the per-path estimates."""
    drivers = make_drivers(problem, mc, seed, B, threads)
    pts, vals, errs = [], [], []
    for p in points:
        t, x = float(p[0]), np.atleast_1d(np.asarray(p[1], dtype=float))
        v, s = _solve_point((t, x), problem, mc, drivers, route, threads)
        pts.append((t, x))
        vals.append(v)
        errs.append(s)
    V, S = np.array(vals), np.array(errs)
    O = drivers.n_outer
    return FieldEstimate(pts, V.mean(axis=1), np.sqrt(np.sum(S ** 2, axis=1)) / O, V, S,
                         O, drivers.n_inner, problem.n_steps)
