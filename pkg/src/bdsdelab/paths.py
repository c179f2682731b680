"""Stochastic drivers on a shared uniform time grid.

Conventions used throughout the package:

* cell ``k`` is the interval ``(t_k, t_{k+1}]``;
* forward Ito sums sample the integrand at ``t_k``, backward Ito sums at
  ``t_{k+1}``;
* Poisson events and jumps of an increasing process that fall in cell ``k``
  are attached to the right endpoint ``t_{k+1}``.

Batched objects carry a leading path axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyLevy, GridMismatch, ValidationError
from .rng import BLOCK, RngStream, draw_blocks
from .parallel import ordered_map


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[0, T]`` with ``n_steps`` cells, optionally restricted to ``[t_start, T]``."""

    T: float
    n_steps: int
    start: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValidationError("n_steps must be >= 1")
        if not self.T > 0:
            raise ValidationError("T must be positive")
        if not 0 <= self.start < self.n_steps:
            raise ValidationError("start index outside the grid")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)[self.start:]

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def n_cells(self) -> int:
        return self.n_steps - self.start

    def index_of(self, t: float) -> int:
        """Index of grid time ``t`` within the full grid; off-grid times are rejected."""
        k = int(round(t / self.dt))
        if not 0 <= k <= self.n_steps or abs(k * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise GridMismatch(f"time {t} is not a grid time")
        return k

    def restrict(self, k0: int) -> "TimeGrid":
        """The same grid seen from full-grid index ``k0`` onward."""
        return TimeGrid(self.T, self.n_steps, self.start + k0)

    def check_same(self, other: "TimeGrid") -> None:
        if (self.T, self.n_steps, self.start) != (other.T, other.n_steps, other.start):
            raise GridMismatch(f"grids differ: {self} vs {other}")


@dataclass(frozen=True)
class BrownianPath:
    """Batch of Brownian increments, shape ``(n_paths, n_cells, dim)``."""

    grid: TimeGrid
    dim: int
    increments: np.ndarray
    backward: bool = False

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    def values(self) -> np.ndarray:
        """Path values at grid times, starting from 0."""
        out = np.zeros((self.n_paths, self.grid.n_cells + 1, self.dim))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def restrict(self, k0: int) -> "BrownianPath":
        return BrownianPath(self.grid.restrict(k0), self.dim, self.increments[:, k0:], self.backward)


@dataclass(frozen=True)
class LevySpec:
    """Finite atomic Levy measure ``sum_i w_i delta_{e_i}``."""

    marks: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.marks) == 0:
            raise EmptyLevy("Levy measure has no atoms; use the no-jump option instead")
        if len(self.marks) != len(self.weights):
            raise ValidationError("marks and weights differ in length")
        if any(not (w > 0 and np.isfinite(w)) for w in self.weights):
            raise ValidationError("every Levy weight must be finite and > 0")

    @property
    def n_atoms(self) -> int:
        return len(self.marks)

    @property
    def total(self) -> float:
        return float(sum(self.weights))

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def e(self) -> np.ndarray:
        return np.asarray(self.marks, dtype=float)


@dataclass(frozen=True)
class JumpMeasurePath:
    """Realized Poisson random measure for a batch of paths.

    ``counts[p, k, i]`` is the number of atom-``i`` events of path ``p`` in cell
    ``k``; the event list keeps the unsnapped times.
    """

    grid: TimeGrid
    levy: LevySpec
    counts: np.ndarray
    event_path: np.ndarray
    event_time: np.ndarray
    event_atom: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.counts.shape[0]

    def compensated(self) -> np.ndarray:
        """Compensated cell masses ``N - w dt``."""
        return self.counts - self.levy.w * self.grid.dt

    def restrict(self, k0: int) -> "JumpMeasurePath":
        t_cut = self.grid.times[k0]
        keep = self.event_time > t_cut
        return JumpMeasurePath(
            self.grid.restrict(k0), self.levy, self.counts[:, k0:],
            self.event_path[keep], self.event_time[keep], self.event_atom[keep],
        )


@dataclass(frozen=True)
class IncreasingProcessPath:
    """Nondecreasing process with ``A(0) = 0``.

    ``density[..., k]`` is the continuous rate on cell ``k``; ``jumps[..., k]``
    is the jump at ``t_{k+1}``.  Leading axes (if any) index paths.
    """

    grid: TimeGrid
    density: np.ndarray
    jumps: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float)
        j = np.asarray(self.jumps, dtype=float)
        if d.shape[-1] != self.grid.n_cells or j.shape[-1] != self.grid.n_cells:
            raise GridMismatch("increasing-process arrays do not match the grid")
        if np.any(d < 0) or np.any(j < 0):
            raise ValidationError("increasing process needs nonnegative density and jumps")
        object.__setattr__(self, "density", d)
        object.__setattr__(self, "jumps", j)

    @classmethod
    def zero(cls, grid: TimeGrid) -> "IncreasingProcessPath":
        z = np.zeros(grid.n_cells)
        return cls(grid, z, z.copy())

    @classmethod
    def from_spec(
        cls,
        grid: TimeGrid,
        density: float | Sequence[float] | np.ndarray = 0.0,
        jumps: Iterable[tuple[float, float]] = (),
    ) -> "IncreasingProcessPath":
        """Build from a rate (scalar or per cell) and ``(grid time, size)`` pairs."""
        dens = np.broadcast_to(np.asarray(density, dtype=float), (grid.n_cells,)).copy()
        jarr = np.zeros(grid.n_cells)
        for t, size in jumps:
            k = grid.index_of(t) - grid.start
            if k <= 0:
                raise ValidationError("jumps must occur strictly after the start of the grid")
            jarr[k - 1] += size
        return cls(grid, dens, jarr)

    def continuous_increments(self) -> np.ndarray:
        return self.density * self.grid.dt

    def increments(self) -> np.ndarray:
        """Total mass of each cell (continuous part plus right-endpoint jump)."""
        return self.continuous_increments() + self.jumps

    def values(self) -> np.ndarray:
        inc = self.increments()
        out = np.zeros(inc.shape[:-1] + (inc.shape[-1] + 1,))
        np.cumsum(inc, axis=-1, out=out[..., 1:])
        return out

    @property
    def total_mass(self) -> np.ndarray:
        return self.increments().sum(axis=-1)

    def restrict(self, k0: int) -> "IncreasingProcessPath":
        return IncreasingProcessPath(self.grid.restrict(k0), self.density[..., k0:], self.jumps[..., k0:])

    def scaled(self, c: float) -> "IncreasingProcessPath":
        return IncreasingProcessPath(self.grid, c * self.density, c * self.jumps)

    def shifted(self, steps: int) -> "IncreasingProcessPath":
        """Move all mass by ``steps`` cells, clipping at the grid ends."""
        n = self.grid.n_cells

        def shift(a):
            out = np.zeros_like(a)
            for k in range(n):
                out[..., min(max(k + steps, 0), n - 1)] += a[..., k]
            return out

        return IncreasingProcessPath(self.grid, shift(self.density), shift(self.jumps))


# generation ---------------------------------------------------------------

def gen_brownian(
    grid: TimeGrid, dim: int, stream: RngStream, n_paths: int = 1, threads: int = 1, backward: bool = False
) -> BrownianPath:
    """Draw ``n_paths`` Brownian paths of dimension ``dim`` on ``grid``."""
    if dim < 1 or n_paths < 1:
        raise ValidationError("dim and n_paths must be >= 1")
    sd = np.sqrt(grid.dt)
    inc = draw_blocks(
        stream, n_paths, lambda g, b: sd * g.standard_normal((b, grid.n_cells, dim)), threads
    )
    return BrownianPath(grid, dim, inc, backward)


def _jump_block(gen: np.random.Generator, grid: TimeGrid, levy: LevySpec):
    n, K = grid.n_cells, levy.n_atoms
    total = gen.poisson(levy.total * grid.dt, size=(BLOCK, n))
    n_events = int(total.sum())
    frac = gen.random(n_events)
    atom = gen.choice(K, size=n_events, p=levy.w / levy.total)
    p0, c0 = np.nonzero(total)
    reps = total[p0, c0]
    path, cell = np.repeat(p0, reps), np.repeat(c0, reps)
    counts = np.zeros((BLOCK, n, K), dtype=np.int64)
    np.add.at(counts, (path, cell, atom), 1)
    times = grid.times[cell + 1] - frac * grid.dt
    return counts, path, times, atom


def gen_jump_measure(
    grid: TimeGrid, levy: LevySpec, stream: RngStream, n_paths: int = 1, threads: int = 1
) -> JumpMeasurePath:
    """Draw the Poisson random measure with intensity ``levy`` for ``n_paths`` paths."""
    if not isinstance(levy, LevySpec):
        raise ValidationError("levy must be a LevySpec")
    n_blocks = -(-n_paths // BLOCK)
    parts = ordered_map(lambda b: _jump_block(stream.generator(b), grid, levy), range(n_blocks), threads)
    counts = np.concatenate([p[0] for p in parts])[:n_paths].astype(float)
    paths = np.concatenate([p[1] + b * BLOCK for b, p in enumerate(parts)])
    keep = paths < n_paths
    times = np.concatenate([p[2] for p in parts])[keep]
    atoms = np.concatenate([p[3] for p in parts])[keep]
    return JumpMeasurePath(grid, levy, counts, paths[keep], times, atoms)


# integrals ----------------------------------------------------------------

def _as_cells(integrand, n_paths: int, n_cells: int, dim: int, take: str) -> np.ndarray:
    """Normalize an integrand to ``(n_paths, n_cells, dim)``.

    Accepted layouts (``L`` is ``n_cells`` or ``n_cells + 1``): ``(L,)``,
    ``(P, L)`` for ``dim == 1``, ``(L, dim)`` for ``dim > 1`` and ``(P, L, dim)``.
    """
    a = np.asarray(integrand, dtype=float)
    if a.ndim == 1:
        a = a[None, :, None]
    elif a.ndim == 2:
        a = a[:, :, None] if dim == 1 else a[None]
    length = a.shape[1]
    if length == n_cells + 1:
        a = a[:, :-1] if take == "left" else a[:, 1:]
    elif length != n_cells:
        raise GridMismatch(f"integrand has {length} time entries, grid has {n_cells} cells")
    try:
        return np.broadcast_to(a, (n_paths, n_cells, dim))
    except ValueError as exc:
        raise GridMismatch(str(exc)) from None


def forward_ito_integral(integrand, driver: BrownianPath) -> np.ndarray:
    """Prefix sums ``sum_{i<k} integrand(t_i) . dW_i``; returns shape ``(n_paths, n_cells + 1)``.

    ``integrand`` holds either per-cell left values or per-time values (the last
    one is ignored).
    """
    g = driver.grid
    a = _as_cells(integrand, driver.n_paths, g.n_cells, driver.dim, "left")
    inc = np.einsum("pkd,pkd->pk", a, driver.increments)
    out = np.zeros((driver.n_paths, g.n_cells + 1))
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out


def backward_ito_integral(integrand, driver: BrownianPath) -> np.ndarray:
    """Suffix sums ``sum_{i>=k} integrand(t_{i+1}) . dB_i``, i.e. the integral over ``[t_k, T]``.

    ``integrand`` holds either per-cell right values or per-time values (the
    first one is ignored).
    """
    g = driver.grid
    a = _as_cells(integrand, driver.n_paths, g.n_cells, driver.dim, "right")
    inc = np.einsum("pkd,pkd->pk", a, driver.increments)
    out = np.zeros((driver.n_paths, g.n_cells + 1))
    out[:, :-1] = np.cumsum(inc[:, ::-1], axis=1)[:, ::-1]
    return out


def stieltjes_integral(integrand, A: IncreasingProcessPath, left_limits=None) -> np.ndarray:
    """Prefix values of ``int_0^{t_k} integrand dA``.

    The continuous part uses left endpoints.  A jump at ``t_{k+1}`` is weighted
    by the integrand's left limit there: ``left_limits[..., k+1]`` when given,
    otherwise the per-time value itself (appropriate for integrands that are
    continuous in time).
    """
    g = A.grid
    a = np.asarray(integrand, dtype=float)
    if a.shape[-1] != g.n_cells + 1:
        raise GridMismatch("integrand must hold one value per grid time")
    ll = a if left_limits is None else np.asarray(left_limits, dtype=float)
    if ll.shape[-1] != g.n_cells + 1:
        raise GridMismatch("left limits must hold one value per grid time")
    inc = a[..., :-1] * A.continuous_increments() + ll[..., 1:] * A.jumps
    out = np.zeros(inc.shape[:-1] + (g.n_cells + 1,))
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out


# bundles ------------------------------------------------------------------

@dataclass(frozen=True)
class PathBundle:
    """All drivers for a nested simulation: ``n_outer`` backward paths, each with ``n_inner`` forward paths.

    ``W`` and ``N`` hold ``n_outer * n_inner`` paths (outer-major); ``B`` holds
    ``n_outer`` paths.  ``B`` or ``N`` may be absent.
    """

    grid: TimeGrid
    n_outer: int
    n_inner: int
    W: BrownianPath
    B: BrownianPath | None = None
    N: JumpMeasurePath | None = None

    @property
    def d(self) -> int:
        return self.W.dim

    @property
    def m(self) -> int:
        return 0 if self.B is None else self.B.dim

    @property
    def levy(self) -> LevySpec | None:
        return None if self.N is None else self.N.levy

    @property
    def n_atoms(self) -> int:
        return 0 if self.N is None else self.N.levy.n_atoms

    @property
    def dW(self) -> np.ndarray:
        return self.W.increments.reshape(self.n_outer, self.n_inner, self.grid.n_cells, self.d)

    @property
    def dB(self) -> np.ndarray:
        if self.B is None:
            return np.zeros((self.n_outer, self.grid.n_cells, 0))
        return self.B.increments

    @property
    def counts(self) -> np.ndarray:
        if self.N is None:
            return np.zeros((self.n_outer, self.n_inner, self.grid.n_cells, 0))
        return self.N.counts.reshape(self.n_outer, self.n_inner, self.grid.n_cells, -1)

    @property
    def compensated(self) -> np.ndarray:
        if self.N is None:
            return self.counts
        return self.counts - self.N.levy.w * self.grid.dt

    def restrict(self, k0: int) -> "PathBundle":
        return PathBundle(
            self.grid.restrict(k0), self.n_outer, self.n_inner, self.W.restrict(k0),
            None if self.B is None else self.B.restrict(k0),
            None if self.N is None else self.N.restrict(k0),
        )

    def outer_slice(self, sl: slice) -> "PathBundle":
        """Bundle holding only the outer paths in ``sl`` (inner paths follow)."""
        lo, hi, _ = sl.indices(self.n_outer)
        I = self.n_inner
        W = BrownianPath(self.grid, self.d, self.W.increments[lo * I:hi * I], self.W.backward)
        B = None if self.B is None else BrownianPath(self.grid, self.m, self.B.increments[lo:hi], True)
        N = None
        if self.N is not None:
            keep = (self.N.event_path >= lo * I) & (self.N.event_path < hi * I)
            N = JumpMeasurePath(
                self.grid, self.N.levy, self.N.counts[lo * I:hi * I],
                self.N.event_path[keep] - lo * I, self.N.event_time[keep], self.N.event_atom[keep],
            )
        return PathBundle(self.grid, hi - lo, I, W, B, N)


def gen_bundle(
    grid: TimeGrid,
    n_outer: int,
    n_inner: int,
    d: int = 1,
    m: int = 0,
    levy: LevySpec | None = None,
    seed: int = 0,
    threads: int = 1,
    prefix: str = "",
) -> PathBundle:
    """Generate a nested bundle.

    Streams: ``prefix+"W"`` and ``prefix+"N"`` keyed by outer index (inner paths
    in blocks), ``prefix+"B"`` in blocks over outer paths.
    """
    if n_outer < 1 or n_inner < 1:
        raise ValidationError("n_outer and n_inner must be >= 1")
    sW = RngStream(seed, prefix + "W")
    Ws = ordered_map(lambda o: gen_brownian(grid, d, sW.child(o), n_inner).increments, range(n_outer), threads)
    W = BrownianPath(grid, d, np.concatenate(Ws))
    B = None
    if m > 0:
        B = gen_brownian(grid, m, RngStream(seed, prefix + "B"), n_outer, threads, backward=True)
    N = None
    if levy is not None:
        sN = RngStream(seed, prefix + "N")
        parts = ordered_map(lambda o: gen_jump_measure(grid, levy, sN.child(o), n_inner), range(n_outer), threads)
        N = JumpMeasurePath(
            grid, levy,
            np.concatenate([p.counts for p in parts]),
            np.concatenate([p.event_path + o * n_inner for o, p in enumerate(parts)]),
            np.concatenate([p.event_time for p in parts]),
            np.concatenate([p.event_atom for p in parts]),
        )
    return PathBundle(grid, n_outer, n_inner, W, B, N)


def binomial_bundle(grid: TimeGrid) -> PathBundle:
    """All ``2^n`` paths of the symmetric random walk with steps ``+-sqrt(dt)`` (one outer path)."""
    n = grid.n_cells
    signs = ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1) * 2.0 - 1.0
    inc = (signs * np.sqrt(grid.dt))[..., None]
    return PathBundle(grid, 1, 2 ** n, BrownianPath(grid, 1, inc))
