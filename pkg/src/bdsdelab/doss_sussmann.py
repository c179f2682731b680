"""Doss-Sussmann flows for state-independent ``g``.

For each backward path ``B`` the suffix integral ``I(t, x) = sum_{j >= k}
g(t_{j+1}, x) dB_j`` is cached on a uniform spatial lattice; then

    eta(t, x, y) = y + I(t, x),    epsilon(t, x, y) = y - I(t, x).

Spatial derivatives of ``I`` are central differences on the lattice and all
lattice fields are interpolated multilinearly.  :func:`transform_coeffs`
builds the pathwise coefficients ``(f~, 0, h~)`` and :func:`map_solution`
moves solution triples between the two formulations.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from .coefficients import CoefficientSet, bindings, eval_gamma, eval_shaped, eval_sigma, eval_vector
from .dsl import Expr
from .errors import GDependsOnState, GridMismatch, OutOfHull, ValidationError
from .gbdsde import SolutionTriple
from .paths import BrownianPath, TimeGrid
from .reflected import DomainSpec, ReflectedState

DEFAULT_POINTS = 33
INFLATE = 0.10
HULL_TOL = 1e-12


def _check_g(g: Sequence[Expr]) -> None:
    for e in g:
        bad = {v for v in e.free_vars if v == "y" or v.startswith("z") or v.startswith("j")}
        if bad:
            raise GDependsOnState(f"g component {e.source!r} depends on {sorted(bad)}")


def default_axes(bbox, n_points: int = DEFAULT_POINTS, inflate: float = INFLATE) -> tuple[np.ndarray, ...]:
    """Uniform axes covering ``bbox`` widened by ``inflate`` of its width (half on each side)."""
    axes = []
    for lo, hi in bbox:
        pad = 0.5 * inflate * (hi - lo)
        axes.append(np.linspace(lo - pad, hi + pad, n_points))
    return tuple(axes)


@dataclass(frozen=True)
class FlowPair:
    """Cached suffix integrals for every backward path in ``B``.

    ``I`` has shape ``(n_B, L, G_1, ..., G_n)`` with ``L`` the number of grid
    levels of ``B.grid``; ``grad`` and ``hess`` append ``(n,)`` and ``(n, n)``.
    """

    g: tuple[Expr, ...]
    B: BrownianPath
    axes: tuple[np.ndarray, ...]
    I: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    @classmethod
    def build(cls, g: Sequence[Expr], B: BrownianPath, axes: Sequence[np.ndarray]) -> "FlowPair":
        g = tuple(g)
        _check_g(g)
        if len(g) != B.dim:
            raise ValidationError(f"g has {len(g)} components but B has dimension {B.dim}")
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        for a in axes:
            if a.ndim != 1 or len(a) < 3 or not np.allclose(np.diff(a), a[1] - a[0], rtol=1e-9, atol=0):
                raise ValidationError("lattice axes must be uniform with at least 3 points")
        n = len(axes)
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        grid = B.grid
        L = grid.n_cells + 1
        times = grid.times
        # g at the right end of every cell, shape (n_cells, G..., m)
        gv = np.stack([eval_vector(g, bindings(times[k + 1], mesh), mesh.shape[:-1]) for k in range(L - 1)])
        incr = np.einsum("k...m,pkm->pk...", gv, B.increments)
        I = np.zeros((B.n_paths, L) + mesh.shape[:-1])
        I[:, :-1] = np.flip(np.cumsum(np.flip(incr, axis=1), axis=1), axis=1)
        spacing = [a[1] - a[0] for a in axes]
        space_axes = tuple(range(2, 2 + n))
        grad = np.stack(_gradient(I, spacing, space_axes), axis=-1)
        hess = np.stack([np.stack(_gradient(grad[..., i], spacing, space_axes), axis=-1) for i in range(n)],
                        axis=-2)
        return cls(g, B, axes, I, grad, hess)

    @property
    def n_dim(self) -> int:
        return len(self.axes)

    @property
    def grid(self) -> TimeGrid:
        return self.B.grid

    def level(self, t: float) -> int:
        return self.grid.index_of(t) - self.grid.start

    def _locate(self, x: np.ndarray):
        idx, frac = [], []
        for i, a in enumerate(self.axes):
            h = a[1] - a[0]
            s = (x[..., i] - a[0]) / h
            if np.any(s < -HULL_TOL / h) or np.any(s > len(a) - 1 + HULL_TOL / h):
                raise OutOfHull(f"state outside the lattice hull along axis {i + 1}")
            k = np.clip(np.floor(s).astype(np.intp), 0, len(a) - 2)
            idx.append(k)
            frac.append(np.clip(s - k, 0.0, 1.0))
        return idx, frac

    def interp(self, field: np.ndarray, outer, level, x: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of ``field[outer, level, <lattice>, ...]`` at ``x`` (trailing axis n)."""
        idx, frac = self._locate(x)
        extra = field.shape[2 + self.n_dim:]
        out = np.zeros(x.shape[:-1] + extra)
        for corner in product((0, 1), repeat=self.n_dim):
            wgt = np.ones(x.shape[:-1])
            loc = []
            for i, c in enumerate(corner):
                wgt = wgt * (frac[i] if c else 1.0 - frac[i])
                loc.append(idx[i] + c)
            vals = field[(outer, level, *loc)]
            out = out + wgt.reshape(wgt.shape + (1,) * len(extra)) * vals
        return out

    def I_at(self, t: float, x, outer: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = x[..., None] if self.n_dim == 1 and x.shape[-1:] != (1,) else x
        return self.interp(self.I, outer, self.level(t), x)


def _gradient(a: np.ndarray, spacing, axes) -> list[np.ndarray]:
    g = np.gradient(a, *spacing, axis=axes, edge_order=2)
    return list(g) if isinstance(g, (list, tuple)) else [g]


def eta(t: float, x, y, flow: FlowPair, outer: int = 0):
    """``y + I(t, x)`` for backward path ``outer``."""
    return np.asarray(y, dtype=float) + flow.I_at(t, x, outer)


def epsilon(t: float, x, y, flow: FlowPair, outer: int = 0):
    """``y - I(t, x)``, the inverse of :func:`eta` in ``y``."""
    return np.asarray(y, dtype=float) - flow.I_at(t, x, outer)


# coefficient transform -------------------------------------------------------

@dataclass(frozen=True)
class TransformedCoefficients:
    """Pathwise coefficients ``(f~, 0, h~)``; usable in place of a coefficient set by the solver."""

    base: CoefficientSet
    flow: FlowPair
    domain: DomainSpec | None = None

    @property
    def m(self) -> int:
        return 0

    @property
    def C(self) -> float:
        return self.base.C

    @property
    def alpha(self) -> float:
        return self.base.alpha

    def _pieces(self, t, x, outer, level):
        """``I``, ``grad I . sigma``, per-atom ``I(x + gamma) - I(x)`` and ``L_x eta`` at ``x``."""
        cs, fl = self.base, self.flow
        I = fl.interp(fl.I, outer, level, x)
        gI = fl.interp(fl.grad, outer, level, x)
        HI = fl.interp(fl.hess, outer, level, x)
        shape = x.shape[:-1]
        sig = eval_sigma(cs, t, x)
        drift = np.broadcast_to(np.stack([eval_shaped(e, bindings(t, x), shape) for e in cs.b], -1),
                                shape + (cs.n,))
        gsig = np.einsum("...i,...ij->...j", gI, sig)
        gen = np.einsum("...i,...i->...", drift, gI) + 0.5 * np.einsum("...ij,...kj,...ik->...", sig, sig, HI)
        K = 0 if cs.levy is None else cs.levy.n_atoms
        jumps = np.zeros(shape + (K,))
        if K:
            gam = eval_gamma(cs, t, x)
            for i in range(K):
                jumps[..., i] = fl.interp(fl.I, outer, level, x + gam[..., i]) - I
                gen = gen + cs.levy.w[i] * (jumps[..., i] - np.einsum("...i,...i->...", gI, gam[..., i]))
        return I, gsig, jumps, gen, gI

    def f_tilde(self, t, x, y, z, j, outer, level):
        """``f(t, x, eta, grad eta sigma + z, A eta + j) + L_x eta`` with per-atom ``j``."""
        I, gsig, jumps, gen, _ = self._pieces(t, x, outer, level)
        w = None if self.base.levy is None else self.base.levy.w
        jj = jumps + j if jumps.shape[-1] else None
        env = bindings(t, x, y + I, gsig + z, jj, w)
        return eval_shaped(self.base.f, env, y.shape) + gen

    def h_tilde(self, t, x, y, outer, level):
        """``h(t, x, eta) + grad phi . grad eta``."""
        fl = self.flow
        I = fl.interp(fl.I, outer, level, x)
        val = eval_shaped(self.base.h, bindings(t, x, y + I), y.shape)
        if self.domain is None:
            return val
        gI = fl.interp(fl.grad, outer, level, x)
        return val + np.einsum("...i,...i->...", self.domain.grad(x), gI)

    def eval_terms(self, grid: TimeGrid, x, Y, Z, J, w, outer: slice):
        """Time-major ``(f, g, h_left, h_right)`` for the solver; arrays are ``(L, O, I, ...)``."""
        L, O, I = Y.shape
        if (grid.T, grid.n_steps, grid.start) != (self.flow.grid.T, self.flow.grid.n_steps, self.flow.grid.start):
            raise GridMismatch("flow and drivers use different grids")
        lo, hi, _ = outer.indices(self.flow.I.shape[0])
        if hi - lo != O:
            raise GridMismatch("flow holds a different number of backward paths")
        oi = np.arange(lo, hi)[None, :, None]
        lev = np.arange(L)[:, None, None]
        t = grid.times[:, None, None]
        f = self.f_tilde(t, x, Y, Z, J, oi, lev)
        g = np.zeros(Y.shape + (0,))
        h_left = self.h_tilde(t[:-1], x[:-1], Y[:-1], oi, lev[:-1])
        h_right = self.h_tilde(t[1:], x[:-1], Y[:-1], oi, lev[1:])
        return f, g, h_left, h_right


def transform_coeffs(coeffs: CoefficientSet, flow: FlowPair, domain: DomainSpec | None = None
                     ) -> TransformedCoefficients:
    """Pathwise coefficients for the flow; ``domain`` supplies the normal for ``h~``."""
    _check_g(coeffs.g)
    if coeffs.n != flow.n_dim:
        raise ValidationError("flow lattice dimension differs from the state dimension")
    return TransformedCoefficients(coeffs, flow, domain)


# solution maps ---------------------------------------------------------------

def map_solution(sol: SolutionTriple, X: ReflectedState, flow: FlowPair, coeffs: CoefficientSet,
                 direction: str = "forward") -> SolutionTriple:
    """``forward``: ``(Y, Z, J) -> (U, V, M)``; ``inverse``: ``(U, V, M) -> (Y, Z, J)``."""
    if direction not in ("forward", "inverse"):
        raise ValidationError("direction must be 'forward' or 'inverse'")
    sol.grid.check_same(X.grid)
    sol.grid.check_same(flow.grid)
    O, I, L = sol.Y.shape
    if X.X.shape[:2] != (O * I, L):
        raise GridMismatch("state paths do not match the solution shape")
    if flow.I.shape[0] != O:
        raise GridMismatch("flow holds a different number of backward paths")
    x = X.X.reshape(O, I, L, -1)
    oi = np.arange(O)[:, None, None]
    lev = np.arange(L)[None, None, :]
    t = sol.grid.times[None, None, :]
    Ival = flow.interp(flow.I, oi, lev, x)
    gI = flow.interp(flow.grad, oi, lev, x)
    gsig = np.einsum("...i,...ij->...j", gI, eval_sigma(coeffs, t, x))
    K = sol.J.shape[-1]
    jumps = np.zeros(sol.J.shape)
    if K:
        gam = eval_gamma(coeffs, t, x)
        for i in range(K):
            jumps[..., i] = flow.interp(flow.I, oi, lev, x + gam[..., i]) - Ival
    sign = -1.0 if direction == "forward" else 1.0
    return SolutionTriple(sol.grid, sol.Y + sign * Ival, sol.Z + sign * gsig, sol.J + sign * jumps,
                          sol.stderr, sol.weights, sol.iterations, sol.history)
