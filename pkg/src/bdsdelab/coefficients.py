"""Coefficient tables built from DSL expressions.

Variable naming inside expressions: ``t`` time; ``x1..xn`` forward state (``x``
when ``n == 1``); ``y`` backward value; ``z1..zd`` Brownian integrand (``z``
when ``d == 1``); ``j1..jK`` per-atom jump integrand and ``j = sum_i w_i j_i``;
``e`` the Levy mark (only inside ``gamma``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dsl import Expr, constant, evaluate, parse
from .errors import ValidationError
from .paths import LevySpec


class AssumptionWarning(UserWarning):
    """A sampled Lipschitz or growth bound was exceeded."""


def _as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float)):
        return constant(v)
    return parse(str(v))


ZERO = constant(0.0)


@dataclass(frozen=True)
class CoefficientSet:
    """All model coefficients plus the Levy measure and declared constants ``C``, ``alpha``."""

    n: int = 1
    d: int = 1
    m: int = 0
    f: Expr = ZERO
    g: tuple[Expr, ...] = ()
    h: Expr = ZERO
    b: tuple[Expr, ...] = ()
    sigma: tuple[tuple[Expr, ...], ...] = ()
    gamma: tuple[Expr, ...] = ()
    F: Expr = ZERO
    G: Expr = ZERO
    H: Expr = ZERO
    ell: Expr = ZERO
    phi: Expr = ZERO
    levy: LevySpec | None = None
    C: float = 1.0
    alpha: float = 0.5
    a_has_jumps: bool = False
    derivatives: Mapping[str, Expr] = field(default_factory=dict)

    def __post_init__(self):
        fix = object.__setattr__
        fix(self, "b", tuple(self.b) or (ZERO,) * self.n)
        fix(self, "sigma", tuple(tuple(r) for r in self.sigma) or tuple(
            tuple(ZERO for _ in range(self.d)) for _ in range(self.n)))
        fix(self, "gamma", tuple(self.gamma) or (ZERO,) * self.n)
        fix(self, "g", tuple(self.g) or (ZERO,) * self.m)
        if len(self.b) != self.n or len(self.gamma) != self.n:
            raise ValidationError("b and gamma need n components")
        if len(self.sigma) != self.n or any(len(r) != self.d for r in self.sigma):
            raise ValidationError("sigma must be an n x d table")
        if len(self.g) != self.m:
            raise ValidationError("g needs m components")
        upper = 0.75 if self.a_has_jumps else 1.0
        if not 0 < self.alpha < upper:
            raise ValidationError(f"alpha must lie in (0, {upper}) for this increasing process")
        if not self.C > 0:
            raise ValidationError("C must be positive")

    @classmethod
    def build(cls, **kw) -> "CoefficientSet":
        """Construct from strings, numbers or expressions; vector entries as sequences."""
        out = {}
        for key, v in kw.items():
            if key in ("f", "h", "F", "G", "H", "ell", "phi"):
                out[key] = _as_expr(v)
            elif key in ("g", "b", "gamma"):
                out[key] = tuple(_as_expr(e) for e in v)
            elif key == "sigma":
                out[key] = tuple(tuple(_as_expr(e) for e in row) for row in v)
            elif key == "derivatives":
                out[key] = {k: _as_expr(e) for k, e in v.items()}
            else:
                out[key] = v
        return cls(**out)

    def replace(self, **kw) -> "CoefficientSet":
        cur = {f_: getattr(self, f_) for f_ in self.__dataclass_fields__}
        cur.update(kw)
        return CoefficientSet(**cur)

    def g_is_zero(self) -> bool:
        return all(e.root == ZERO.root for e in self.g)

    def jumps_are_zero(self) -> bool:
        return self.levy is None or all(e.root == ZERO.root for e in self.gamma)


# binding helpers ----------------------------------------------------------

def bindings(t, x=None, y=None, z=None, j_atoms=None, weights=None) -> dict:
    """Variable table for vectorized evaluation; trailing axes hold components."""
    env: dict = {"t": t}
    if x is not None:
        x = np.asarray(x, dtype=float)
        for i in range(x.shape[-1]):
            env[f"x{i + 1}"] = x[..., i]
        if x.shape[-1] == 1:
            env["x"] = x[..., 0]
    if y is not None:
        env["y"] = y
    if z is not None:
        z = np.asarray(z, dtype=float)
        for i in range(z.shape[-1]):
            env[f"z{i + 1}"] = z[..., i]
        if z.shape[-1] == 1:
            env["z"] = z[..., 0]
    if j_atoms is not None:
        j_atoms = np.asarray(j_atoms, dtype=float)
        K = j_atoms.shape[-1]
        for i in range(K):
            env[f"j{i + 1}"] = j_atoms[..., i]
        w = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
        env["j"] = j_atoms @ w if K else np.zeros(j_atoms.shape[:-1])
    return env


def eval_shaped(expr: Expr, env: Mapping, shape: tuple[int, ...]) -> np.ndarray:
    """Evaluate and broadcast to ``shape`` (expressions may be constant)."""
    return np.broadcast_to(np.asarray(evaluate(expr, env), dtype=float), shape)


def eval_vector(exprs: Sequence[Expr], env: Mapping, shape: tuple[int, ...]) -> np.ndarray:
    if not exprs:
        return np.zeros(shape + (0,))
    return np.stack([eval_shaped(e, env, shape) for e in exprs], axis=-1)


def eval_drift(cs: CoefficientSet, t, x) -> np.ndarray:
    env = bindings(t, x)
    return eval_vector(cs.b, env, x.shape[:-1])


def eval_sigma(cs: CoefficientSet, t, x) -> np.ndarray:
    env = bindings(t, x)
    rows = [eval_vector(r, env, x.shape[:-1]) for r in cs.sigma]
    return np.stack(rows, axis=-2)


def eval_gamma(cs: CoefficientSet, t, x) -> np.ndarray:
    """Jump sizes per atom, shape ``x.shape + (K,)``."""
    if cs.levy is None:
        return np.zeros(x.shape + (0,))
    env = bindings(t, x)
    outs = []
    for e in cs.levy.marks:
        env["e"] = e
        outs.append(eval_vector(cs.gamma, env, x.shape[:-1]))
    return np.stack(outs, axis=-1)


# assumption sampling ------------------------------------------------------

def check_lipschitz(
    expr: Expr,
    names: Sequence[str],
    C: float,
    box: float = 2.0,
    n_pairs: int = 10_000,
    seed: int = 0,
    fixed: Mapping[str, float] | None = None,
) -> float:
    """Largest sampled ``|f(u) - f(v)|^2 / |u - v|^2`` over ``names``.

    Emits :class:`AssumptionWarning` when it exceeds ``C``; never raises on
    the bound itself.
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform(-box, box, size=(len(names), n_pairs))
    v = rng.uniform(-box, box, size=(len(names), n_pairs))
    base = dict(fixed or {})
    for name in expr.free_vars:
        base.setdefault(name, 0.0)
    eu, ev = dict(base), dict(base)
    for i, name in enumerate(names):
        eu[name], ev[name] = u[i], v[i]
    fu = np.broadcast_to(evaluate(expr, eu), (n_pairs,))
    fv = np.broadcast_to(evaluate(expr, ev), (n_pairs,))
    ratio = float(np.max((fu - fv) ** 2 / np.sum((u - v) ** 2, axis=0)))
    if ratio > C * (1 + 1e-9):
        warnings.warn(
            f"sampled Lipschitz ratio {ratio:.4g} of {expr.source!r} exceeds declared C={C}",
            AssumptionWarning, stacklevel=2,
        )
    return ratio
