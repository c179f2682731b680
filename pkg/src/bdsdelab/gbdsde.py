"""Backward doubly stochastic equations with jumps and an increasing process.

The equation solved is

    Y(t) = xi + int_t^T f(s, x, Y, Z, J) ds + int_t^T g(s, x, Y, Z, J) <-dB(s)
           + int_t^T h(s, x, Y(s-)) dA(s) - int_t^T Z dW - int_t^T int J N~(ds, de)

on a uniform grid.  Conditional expectations given the forward information
up to ``t_k`` and the whole backward path are estimated per outer (B) path by
regression over inner (W, N) paths on features of the current state.

Discrete scheme of one Picard sweep, with ``Yj = Y_{k+1} + h(t_{k+1}, x_k,
y_k) dA^jump_k`` (jumps of A sit at the right endpoint of the cell):

    Y_k   = P_k[ Yj + f(t_k, .)dt + h(t_k, x_k, y_k) dA^c_k + g(t_{k+1}, .) . dB_k ]
    Z_k   = P_k[ (Yj - P_k Yj) dW_k ] / dt
    J_k,i = P_k[ (Yj - P_k Yj) N~_k,i ] / (w_i dt)

where ``P_k`` is the regression at time ``t_k`` and the coefficients are fed
the previous iterate.  ``g`` is sampled at the right endpoint, as a backward
Ito sum requires.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, bindings, eval_shaped, eval_vector
from .dsl import constant
from .errors import BudgetTooSmall, GridMismatch, NoConvergence, ValidationError
from .parallel import chunks, ordered_map
from .paths import IncreasingProcessPath, LevySpec, PathBundle, TimeGrid
from .regression import Projector, RegressionConfig

OUTER_CHUNK = 8
ROUNDING_FLOOR = 1e-12


# solution containers --------------------------------------------------------

@dataclass
class SolutionTriple:
    """Discretized ``(Y, Z, J)`` with shapes ``(O, I, N+1)``, ``(O, I, N+1, d)``, ``(O, I, N+1, K)``.

    ``stderr[o, k]`` is the Monte Carlo standard error of the fitted ``Y``
    at ``t_k`` for outer path ``o``.  ``rep_stderr[o]`` is the inner-path
    standard error of the pathwise representation of ``Y(t_0)``
    (terminal value plus all generator, boundary and backward-noise terms).
    ``history`` holds the Picard residuals for each fixed block of outer paths.
    """

    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    J: np.ndarray
    stderr: np.ndarray
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    history: list[list[float]] = field(default_factory=list)
    rep_stderr: np.ndarray | None = None

    @property
    def y0(self) -> np.ndarray:
        """``Y(t_0)`` per outer path."""
        return self.Y[:, 0, 0]

    @property
    def y0_stderr(self) -> np.ndarray:
        if self.rep_stderr is not None:
            return self.rep_stderr
        return self.stderr[:, 0]

    def mean_y0(self) -> tuple[float, float]:
        """Average of ``Y(t_0)`` over outer paths and its inner-sampling standard error."""
        O = self.Y.shape[0]
        return float(self.y0.mean()), float(np.sqrt(np.sum(self.y0_stderr ** 2)) / O)

    def j_norm2(self) -> np.ndarray:
        """``sum_i J(t, e_i)^2 w_i`` per path and time."""
        if self.J.shape[-1] == 0:
            return np.zeros(self.Y.shape)
        return np.einsum("oilk,k->oil", self.J ** 2, self.weights)


@dataclass
class LinearSolution:
    """Closed-form estimate of ``Y`` for a linear equation, with ``Gamma`` per path."""

    grid: TimeGrid
    Y: np.ndarray
    stderr: np.ndarray
    gamma: np.ndarray

    @property
    def y0(self) -> np.ndarray:
        return self.Y[:, 0, 0]

    @property
    def y0_stderr(self) -> np.ndarray:
        return self.stderr[:, 0]

    def mean_y0(self) -> tuple[float, float]:
        O = self.Y.shape[0]
        return float(self.y0.mean()), float(np.sqrt(np.sum(self.y0_stderr ** 2)) / O)


# helpers --------------------------------------------------------------------

def _per_path(v, O: int, I: int, L: int, comp: int | None = None) -> np.ndarray:
    """Broadcast a scalar, per-time or per-path process to ``(O, I, L[, comp])``.

    Accepted: scalars, ``(comp,)`` vectors, ``(L,)`` or ``(L, comp)`` per-time
    arrays, ``(O*I, L[, comp])`` flat per-path arrays and anything already
    broadcastable to the target shape.
    """
    a = np.asarray(v, dtype=float)
    shape = (O, I, L) if comp is None else (O, I, L, comp)
    if comp is None:
        if a.ndim == 1 and a.shape[0] == L:
            a = a[None, None, :]
        elif a.ndim == 2 and a.shape == (O * I, L):
            a = a.reshape(O, I, L)
    else:
        if a.ndim == 1 and a.shape[0] == L and a.shape[0] != comp:
            a = a[None, None, :, None]
        elif a.ndim == 2 and a.shape == (L, comp):
            a = a[None, None]
        elif a.ndim == 2 and a.shape == (O * I, L):
            a = a.reshape(O, I, L)[..., None]
        elif a.ndim == 3 and a.shape == (O * I, L, comp):
            a = a.reshape(O, I, L, comp)
    try:
        return np.broadcast_to(a, shape)
    except ValueError:
        raise GridMismatch(f"cannot broadcast process of shape {a.shape} to {shape}") from None


def _a_arrays(A: IncreasingProcessPath, bundle: PathBundle):
    """Per-path continuous increments, jumps and values of ``A``, shape ``(O, I, n[+1])``."""
    A.grid.check_same(bundle.grid)
    O, I, n = bundle.n_outer, bundle.n_inner, bundle.grid.n_cells

    def norm(a):
        a = np.asarray(a)
        if a.ndim == 2 and a.shape[0] == O * I:
            a = a.reshape(O, I, n)
        return np.broadcast_to(a, (O, I, n))

    cont = norm(A.continuous_increments())
    jump = norm(A.jumps)
    vals = np.zeros((O, I, n + 1))
    np.cumsum(cont + jump, axis=-1, out=vals[..., 1:])
    return cont, jump, vals


def norm_constants(C: float, alpha: float) -> tuple[float, float, float, float]:
    """``(lambda, lambda_hat, mu, mu_hat)`` of the contraction norm for constants ``C``, ``alpha``."""
    eps = C / (3.0 / 8.0 - alpha / 2.0)
    lam_hat = (C / eps + C) / (C / eps + alpha)
    mu_hat = C / (C / eps + alpha)
    return eps + 0.75 * lam_hat, lam_hat, 1.0 + mu_hat, mu_hat


def default_state(bundle: PathBundle) -> np.ndarray:
    """Forward Brownian values ``W(t_k)``, shape ``(O, I, N+1, d)``."""
    O, I, n, d = bundle.dW.shape
    out = np.zeros((O, I, n + 1, d))
    np.cumsum(bundle.dW, axis=2, out=out[:, :, 1:])
    return out


def default_features(bundle: PathBundle) -> np.ndarray:
    """``W(t_k)`` plus cumulative jump counts per atom."""
    W = default_state(bundle)
    if bundle.n_atoms == 0:
        return W
    c = bundle.counts
    cum = np.zeros(c.shape[:2] + (c.shape[2] + 1, c.shape[3]))
    np.cumsum(c, axis=2, out=cum[:, :, 1:])
    return np.concatenate([W, cum], axis=-1)


# Picard solver ----------------------------------------------------------------

@dataclass(frozen=True)
class _Problem:
    cs: CoefficientSet
    grid: TimeGrid
    w: np.ndarray
    reg: RegressionConfig
    tol: float
    max_iter: int
    norm: tuple[float, float, float, float]


def _eval_coeffs(pb: _Problem, x, Y, Z, J, outer: slice):
    """Evaluate ``f``, ``g`` on all times and ``h`` at left/right cell times (time-major arrays).

    Coefficient objects other than :class:`CoefficientSet` supply their own
    ``eval_terms(grid, x, Y, Z, J, w, outer)``.
    """
    if not isinstance(pb.cs, CoefficientSet):
        return pb.cs.eval_terms(pb.grid, x, Y, Z, J, pb.w, outer)
    t = pb.grid.times[:, None, None]
    shape = Y.shape
    env = bindings(t, x, Y, Z, J, pb.w)
    f = eval_shaped(pb.cs.f, env, shape)
    g = eval_vector(pb.cs.g, env, shape)
    cell = (shape[0] - 1,) + shape[1:]
    h_left = eval_shaped(pb.cs.h, bindings(t[:-1], x[:-1], Y[:-1]), cell)
    h_right = eval_shaped(pb.cs.h, bindings(t[1:], x[:-1], Y[:-1]), cell)
    return f, g, h_left, h_right


def _time_major(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(a, 2, 0))


def _solve_block(pb: _Problem, outer: slice, xi, x, feats, cont, jump, a_vals, dW, dB, Nt):
    """Picard iteration on one block of outer paths; returns arrays and residual history."""
    O, I = xi.shape
    n = pb.grid.n_cells
    dt = pb.grid.dt
    d, K = dW.shape[-1], Nt.shape[-1]
    proj = [Projector(feats[:, :, k], (O, I), pb.reg) for k in range(n)]
    lam, lam_hat, mu, mu_hat = pb.norm
    weight = _time_major(np.exp(lam * pb.grid.times[None, None, :-1] + mu * a_vals[..., :-1]))
    x, cont, jump, dW, Nt = (_time_major(a) for a in (x, cont, jump, dW, Nt))
    dB = np.ascontiguousarray(np.moveaxis(dB, 1, 0))
    dA = cont + jump
    Y = np.broadcast_to(xi, (n + 1, O, I)).copy()
    Z = np.zeros((n + 1, O, I, d))
    J = np.zeros((n + 1, O, I, K))
    err = np.zeros((n + 1, O))
    history: list[float] = []
    for it in range(1, pb.max_iter + 1):
        f, g, h_left, h_right = _eval_coeffs(pb, x, Y, Z, J, outer)
        Yn = np.empty_like(Y)
        Zn = np.empty_like(Z)
        Jn = np.empty_like(J)
        Yn[n] = xi
        for k in range(n - 1, -1, -1):
            yj = Yn[k + 1] + h_right[k] * jump[k]
            target = yj + f[k] * dt + h_left[k] * cont[k]
            if g.shape[-1]:
                target = target + np.einsum("oim,om->oi", g[k + 1], dB[k])
            P = proj[k]
            fits = P.fit(np.stack([target, yj], axis=-1))
            Yn[k] = fits[..., 0]
            err[k] = P.stderr(target, fits[..., 0])
            c = yj - fits[..., 1]
            c[np.all(yj == yj[:, :1], axis=1)] = 0.0
            mfit = P.fit(np.concatenate([c[..., None] * dW[k], c[..., None] * Nt[k]], axis=-1))
            Zn[k] = mfit[..., :d] / dt
            Jn[k] = mfit[..., d:] / (pb.w * dt)
        Zn[n] = Zn[n - 1]
        Jn[n] = Jn[n - 1]
        dY2 = (Yn - Y)[:-1] ** 2
        dZ2 = np.sum((Zn - Z)[:-1] ** 2, axis=-1)
        dJ2 = np.sum((Jn - J)[:-1] ** 2 * pb.w, axis=-1) if K else 0.0
        terms = weight * ((lam_hat * dY2 + dZ2 + dJ2) * dt + mu_hat * dY2 * dA)
        res = float(np.sqrt(np.mean(np.sum(terms, axis=0))))
        history.append(res)
        Y, Z, J = Yn, Zn, Jn
        if res <= pb.tol:
            total = xi + np.sum(f[:-1] * dt + h_left * cont + h_right * jump, axis=0)
            if g.shape[-1]:
                total = total + np.einsum("koim,kom->oi", g[1:], dB)
            rep = total.std(axis=1, ddof=1) / np.sqrt(I)
            back = lambda a: np.moveaxis(a, 0, 2)
            return back(Y), back(Z), back(J), err.T.copy(), history, rep
    raise NoConvergence(pb.max_iter, history[-1])


def solve_picard(
    coeffs: CoefficientSet,
    xi,
    A: IncreasingProcessPath,
    drivers: PathBundle,
    reg: RegressionConfig,
    tol: float = 1e-8,
    max_iter: int = 100,
    state: np.ndarray | None = None,
    features: np.ndarray | None = None,
    threads: int = 1,
) -> SolutionTriple:
    """Picard iteration of the discretized equation.

    ``xi`` is the terminal value per path, shape ``(O, I)`` or ``(O*I,)``.
    ``state`` (shape ``(O, I, N+1, q)``) is bound to ``x1..xq`` in the
    coefficients and defaults to ``W``; ``features`` drive the regression and
    default to ``state`` (or to ``W`` plus the cumulative jump counts).
    Iteration runs independently, but with the same stopping rule, on fixed
    blocks of ``OUTER_CHUNK`` outer paths.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    if max_iter < 1:
        raise ValidationError("max_iter must be >= 1")
    grid = drivers.grid
    O, I, n = drivers.n_outer, drivers.n_inner, grid.n_cells
    if I < 2:
        raise BudgetTooSmall("n_inner must be at least 2")
    if coeffs.m != drivers.m:
        raise ValidationError(f"g has {coeffs.m} components but B has dimension {drivers.m}")
    levy = drivers.levy
    w = levy.w if levy is not None else np.zeros(0)
    xi = np.asarray(xi, dtype=float)
    xi = np.broadcast_to(xi.reshape(O, I) if xi.size == O * I else xi, (O, I))
    if features is None:
        features = default_features(drivers) if state is None else state
    if state is None:
        state = default_state(drivers)
    if state.shape[:3] != (O, I, n + 1) or features.shape[:3] != (O, I, n + 1):
        raise GridMismatch("state/features must have shape (n_outer, n_inner, n_steps+1, q)")
    cont, jump, a_vals = _a_arrays(A, drivers)
    pb = _Problem(coeffs, grid, w, reg, tol, max_iter, norm_constants(coeffs.C, coeffs.alpha))
    dW, dB, Nt = drivers.dW, drivers.dB, drivers.compensated

    def block(sl: slice):
        return _solve_block(pb, sl, xi[sl], state[sl], features[sl], cont[sl], jump[sl],
                            a_vals[sl], dW[sl], dB[sl], Nt[sl])

    parts = ordered_map(block, chunks(O, OUTER_CHUNK), threads)
    Y = np.concatenate([p[0] for p in parts])
    Z = np.concatenate([p[1] for p in parts])
    J = np.concatenate([p[2] for p in parts])
    err = np.concatenate([p[3] for p in parts])
    hist = [p[4] for p in parts]
    rep = np.concatenate([p[5] for p in parts])
    return SolutionTriple(grid, Y, Z, J, err, w, max(len(h) for h in hist), hist, rep)


def martingale_residual(drivers: PathBundle) -> float:
    """Largest ``|mean dW_k| / stderr`` over outer paths, cells and components."""
    dW = drivers.dW
    I = dW.shape[1]
    sd = dW.std(axis=1, ddof=1)
    z = np.abs(dW.mean(axis=1)) / np.where(sd > 0, sd / np.sqrt(I), np.inf)
    return float(z.max())


# linear equations -------------------------------------------------------------

@dataclass(frozen=True)
class LinearCoeffs:
    """Coefficients of the linear equation

        f = phi_drift + alpha y + beta . z + sum_i gamma_j[i] w_i j_i,
        g = varphi + delta y,   h dA,

    each a scalar, a per-time array or a per-path array.
    """

    alpha: object = 0.0
    beta: object = 0.0
    gamma_j: object = 0.0
    delta: object = 0.0
    phi_drift: object = 0.0
    varphi: object = 0.0
    h: object = 0.0
    xi: object = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.gamma_j, dtype=float) <= -1):
            raise ValidationError("gamma_j must exceed -1")

    def to_coefficients(self, d: int = 1, m: int = 0, levy: LevySpec | None = None,
                        C: float = 1.0, alpha_const: float = 0.5) -> CoefficientSet:
        """Equivalent :class:`CoefficientSet`; available when every coefficient is a number or a short vector."""
        K = 0 if levy is None else levy.n_atoms

        def vec(v, size, name):
            a = np.atleast_1d(np.asarray(v, dtype=float))
            if a.size == 1:
                a = np.repeat(a, size)
            if a.shape != (size,):
                raise ValidationError(f"{name} must be a number or a length-{size} vector here")
            return [float(x) for x in a]

        a = float(np.asarray(self.alpha, dtype=float))
        phi = float(np.asarray(self.phi_drift, dtype=float))
        hh = float(np.asarray(self.h, dtype=float))
        beta = vec(self.beta, d, "beta")
        terms = [repr(phi), f"{a!r} * y"]
        zs = ["z"] if d == 1 else [f"z{i + 1}" for i in range(d)]
        terms += [f"{b!r} * {zn}" for b, zn in zip(beta, zs)]
        if K:
            gj = vec(self.gamma_j, K, "gamma_j")
            terms += [f"{gj[i] * float(levy.w[i])!r} * j{i + 1}" for i in range(K)]
        delta, vp = vec(self.delta, m, "delta"), vec(self.varphi, m, "varphi")
        g = [f"{vp[i]!r} + {delta[i]!r} * y" for i in range(m)]
        return CoefficientSet.build(
            d=d, m=m, f=" + ".join(terms), g=g, h=constant(hh), levy=levy, C=C, alpha=alpha_const,
        )


def gamma_process(lin: LinearCoeffs, drivers: PathBundle) -> np.ndarray:
    """``Gamma`` per path and grid time, shape ``(O, I, N+1)``."""
    G = np.exp(log_gamma_process(lin, drivers))
    assert np.all(G > 0)
    return G


def log_gamma_process(lin: LinearCoeffs, drivers: PathBundle) -> np.ndarray:
    """Cumulative exponent ``log Gamma(t_0, t_k)`` per path, shape ``(O, I, N+1)``.

    Exponent per cell: ``(alpha - delta^2/2 - |beta|^2/2) dt + beta . dW +
    delta . dB`` plus ``sum_i [log(1 + gamma_i) N_i - gamma_i w_i dt]``, with
    ``alpha, beta, gamma`` at the left and ``delta`` at the right endpoint.
    """
    grid = drivers.grid
    O, I, n, d = drivers.dW.shape
    L = n + 1
    m, K = drivers.m, drivers.n_atoms
    dt = grid.dt
    al = _per_path(lin.alpha, O, I, L)[..., :-1]
    be = _per_path(lin.beta, O, I, L, d)[:, :, :-1]
    expo = (al - 0.5 * np.sum(be ** 2, axis=-1)) * dt + np.einsum("oikd,oikd->oik", be, drivers.dW)
    if m:
        de = _per_path(lin.delta, O, I, L, m)[:, :, 1:]
        expo = expo - 0.5 * np.sum(de ** 2, axis=-1) * dt + np.einsum("oikm,okm->oik", de, drivers.dB)
    if K:
        ga = _per_path(lin.gamma_j, O, I, L, K)[:, :, :-1]
        if np.any(ga <= -1):
            raise ValidationError("gamma_j must exceed -1")
        expo = expo + np.sum(np.log1p(ga) * drivers.counts - ga * drivers.levy.w * dt, axis=-1)
    out = np.zeros((O, I, L))
    np.cumsum(expo, axis=-1, out=out[..., 1:])
    return out


def solve_linear(
    lin: LinearCoeffs,
    A: IncreasingProcessPath,
    drivers: PathBundle,
    reg: RegressionConfig,
    features: np.ndarray | None = None,
) -> LinearSolution:
    """Closed-form solution ``Y(t_k) = E[bracket_k | G_k]`` with the bracket built from ``Gamma``.

    ``Gamma_k * bracket_k = Gamma_N xi + sum_{j>=k} [ Gamma_j (phi - delta.varphi) dt
    + Gamma_j h dA^c_j + Gamma_{j+1} varphi . dB_j + Gamma^-_{j+1} (1 + sum_i gamma_i N_ij) h dA^jump_j ]``
    where ``Gamma^-`` omits the jump factor of cell ``j``.
    """
    grid = drivers.grid
    O, I, n, d = drivers.dW.shape
    if I < 2:
        raise BudgetTooSmall("n_inner must be at least 2")
    L = n + 1
    m, K = drivers.m, drivers.n_atoms
    dt = grid.dt
    G = gamma_process(lin, drivers)
    cont, jump, _ = _a_arrays(A, drivers)
    xi = np.asarray(lin.xi, dtype=float)
    xi = np.broadcast_to(xi.reshape(O, I) if xi.size == O * I else xi, (O, I))
    phi = _per_path(lin.phi_drift, O, I, L)
    h = _per_path(lin.h, O, I, L)
    c = G[..., :-1] * (phi[..., :-1] * dt + h[..., :-1] * cont)
    if m:
        de = _per_path(lin.delta, O, I, L, m)
        vp = _per_path(lin.varphi, O, I, L, m)
        c = c - G[..., :-1] * np.sum(de[:, :, 1:] * vp[:, :, 1:], axis=-1) * dt
        c = c + G[..., 1:] * np.einsum("oikm,okm->oik", vp[:, :, 1:], drivers.dB)
    if np.any(jump):
        if K:
            ga = _per_path(lin.gamma_j, O, I, L, K)[:, :, :-1]
            factor = np.prod((1.0 + ga) ** drivers.counts, axis=-1)
            inter = 1.0 + np.sum(ga * drivers.counts, axis=-1)
        else:
            factor, inter = 1.0, 1.0
        c = c + G[..., 1:] / factor * inter * h[..., 1:] * jump
    S = np.zeros((O, I, L))
    S[..., :-1] = np.cumsum(c[..., ::-1], axis=-1)[..., ::-1]
    bracket = (G[..., -1:] * xi[..., None] + S) / G
    if features is None:
        features = default_features(drivers)
    Y = np.empty((O, I, L))
    err = np.zeros((O, L))
    Y[..., n] = bracket[..., n]
    for k in range(n):
        P = Projector(features[:, :, k], (O, I), reg)
        Y[..., k] = P.fit(bracket[..., k])
        err[:, k] = P.stderr(bracket[..., k], Y[..., k])
    return LinearSolution(grid, Y, err, G)


# comparison -------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonReport:
    min_difference: float
    violation_fraction: float
    n_checked: int


def check_comparison(sol1, sol2, tol) -> ComparisonReport:
    """Min over paths and times of ``Y2 - Y1`` and the fraction below ``-tol``.

    ``tol`` may be a scalar or an array broadcastable to the ``Y`` shape, for
    instance ``3 * stderr[:, None, :]``.
    """
    sol1.grid.check_same(sol2.grid)
    if sol1.Y.shape != sol2.Y.shape:
        raise GridMismatch("solutions have different shapes")
    diff = sol2.Y - sol1.Y
    tol = np.broadcast_to(np.asarray(tol, dtype=float), diff.shape)
    return ComparisonReport(float(diff.min()), float(np.mean(diff < -tol)), int(diff.size))


# Ito identity -----------------------------------------------------------------

@dataclass(frozen=True)
class ItoReport:
    """Both sides of the second-moment identity at selected grid indices."""

    indices: tuple[int, ...]
    lhs: tuple[float, ...]
    rhs: tuple[float, ...]
    stderr: tuple[float, ...]
    residuals: tuple[float, ...]

    @property
    def residual(self) -> float:
        return max(self.residuals)


def ito_identity_check(
    drivers: PathBundle,
    A: IncreasingProcessPath | None = None,
    a0: float = 0.0,
    beta=0.0,
    gamma=0.0,
    delta=0.0,
    theta=0.0,
    lam=0.0,
    indices: tuple[int, ...] | None = None,
) -> ItoReport:
    """Check ``E[alpha(t)^2]`` against its expansion by Monte Carlo.

    ``alpha(t) = alpha(0) + int beta ds + int gamma <-dB + int delta dW +
    int theta N~ + int lam dA`` with ``alpha(0) = a0 - int_0^T gamma <-dB`` so
    that ``alpha`` is adapted to the mixed filtration.  Components are per-time
    arrays (or scalars); ``gamma`` is read at right endpoints, the others at
    left endpoints.  Returns ``|mean D| / stderr(D)`` where ``D`` is the
    per-path difference of the two sides and ``stderr`` is taken over
    outer-path means.  A mean within ``1e-12`` times the second moment counts
    as zero, so deterministic cases report ``0`` rather than ``0/0``.
    """
    grid = drivers.grid
    O, I, n, d = drivers.dW.shape
    P = O * I
    L = n + 1
    dt = grid.dt
    m, K = drivers.m, drivers.n_atoms
    dW = drivers.dW.reshape(P, n, d)
    dB = np.repeat(drivers.dB, I, axis=0)
    Nt = drivers.compensated.reshape(P, n, K)
    A = A if A is not None else IncreasingProcessPath.zero(grid)
    cont, jump, _ = _a_arrays(A, drivers)
    dA = (cont + jump).reshape(P, n)

    def proc(v, comp=None):
        return _per_path(v, O, I, L, comp).reshape((P, L) if comp is None else (P, L, comp))

    be, la = proc(beta), proc(lam)
    de = proc(delta, d)
    ga = proc(gamma, m) if m else np.zeros((P, L, 0))
    th = proc(theta, K) if K else np.zeros((P, L, 0))
    gB = np.einsum("pkm,pkm->pk", ga[:, 1:], dB)
    dWt = np.einsum("pkd,pkd->pk", de[:, :-1], dW)
    thN = np.einsum("pki,pki->pk", th[:, :-1], Nt)
    alpha = np.empty((P, L))
    alpha[:, 0] = a0 - gB.sum(axis=1)
    step = be[:, :-1] * dt + gB + dWt + thN + la[:, :-1] * dA
    np.cumsum(step, axis=1, out=alpha[:, 1:])
    alpha[:, 1:] += alpha[:, :1]
    w = drivers.levy.w if K else np.zeros(0)
    ak, bk, lk = alpha[:, :-1], be[:, :-1], la[:, :-1]
    inc = (
        2 * ak * bk * dt + 2 * ak * lk * dA
        - np.sum(ga[:, 1:] ** 2, axis=-1) * dt + np.sum(de[:, :-1] ** 2, axis=-1) * dt
        + np.sum(th[:, :-1] ** 2 * w, axis=-1) * dt + (lk * dA) ** 2
        + 2 * thN * lk * dA + (bk * dt) ** 2 + 2 * bk * dt * lk * dA
    )
    rhs = np.zeros((P, L))
    rhs[:, 0] = alpha[:, 0] ** 2
    np.cumsum(inc, axis=1, out=rhs[:, 1:])
    rhs[:, 1:] += rhs[:, :1]
    if indices is None:
        indices = (n // 2, n) if n >= 2 else (n,)
    lhs_v, rhs_v, se_v, res_v = [], [], [], []
    for k in indices:
        D = alpha[:, k] ** 2 - rhs[:, k]
        mean = float(D.mean())
        # inner paths share a backward path, so outer-path means are the independent units
        units = D.reshape(O, I).mean(axis=1) if O > 1 else D
        se = float(units.std(ddof=1) / np.sqrt(len(units))) if len(units) > 1 else 0.0
        excess = max(abs(mean) - ROUNDING_FLOOR * (1.0 + float(np.mean(np.abs(rhs[:, k])))), 0.0)
        res = 0.0 if excess == 0.0 else (excess / se if se > 0 else np.inf)
        lhs_v.append(float(np.mean(alpha[:, k] ** 2)))
        rhs_v.append(float(np.mean(rhs[:, k])))
        se_v.append(se)
        res_v.append(float(res))
    return ItoReport(tuple(indices), tuple(lhs_v), tuple(rhs_v), tuple(se_v), tuple(res_v))
