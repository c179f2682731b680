"""Least-squares conditional-expectation estimator.

For each outer path separately, targets are projected onto polynomial
features of the current state across the inner paths.  The intercept is
handled exactly by centering, so the inner mean of a fitted value always equals
the inner mean of its target; the remaining features are standardized and the
projection is computed from a thin SVD with Tikhonov filter
``s^2 / (s^2 + ridge)`` (``ridge = 0`` gives the rank-truncated exact
projection).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .errors import BudgetTooSmall, RegressionSingular, ValidationError


@dataclass(frozen=True)
class RegressionConfig:
    """Monte Carlo budget and basis.

    ``basis`` is ``"poly"`` (monomials of total degree <= ``degree``) or
    ``"onehot"`` (indicators of distinct state values, exact on lattices).
    ``ridge=None`` selects ``1e-8 * trace / dim`` of the Gram matrix.
    """

    n_outer: int = 1
    n_inner: int = 1000
    degree: int = 2
    ridge: float | None = None
    basis: str = "poly"

    def __post_init__(self):
        if self.n_inner < 2:
            raise BudgetTooSmall("n_inner must be at least 2")
        if self.n_outer < 1:
            raise BudgetTooSmall("n_outer must be at least 1")
        if self.degree < 0:
            raise ValidationError("degree must be >= 0")
        if self.basis not in ("poly", "onehot"):
            raise ValidationError(f"unknown basis {self.basis!r}")
        if self.ridge is not None and self.ridge < 0:
            raise ValidationError("ridge must be nonnegative")


def n_basis(q: int, degree: int) -> int:
    """Number of monomials of total degree 1..degree in ``q`` variables (intercept excluded)."""
    return sum(1 for p in range(1, degree + 1) for _ in combinations_with_replacement(range(q), p))


def poly_features(state: np.ndarray, degree: int) -> np.ndarray:
    """Monomials of standardized state columns, shape ``(O, I, p)``; constant columns dropped."""
    O, I, q = state.shape
    mu = state.mean(axis=1, keepdims=True)
    sd = state.std(axis=1, keepdims=True)
    live = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    zs = np.where(live, (state - mu) / np.where(live, sd, 1.0), 0.0)
    cols = []
    for p in range(1, degree + 1):
        for combo in combinations_with_replacement(range(q), p):
            c = np.ones((O, I))
            for i in combo:
                c = c * zs[..., i]
            cols.append(c)
    if not cols:
        return np.zeros((O, I, 0))
    return np.stack(cols, axis=-1)


class Projector:
    """Projection onto the span of the state features, for one time step."""

    def __init__(self, state: np.ndarray | None, shape: tuple[int, int], cfg: RegressionConfig):
        O, I = shape
        if I < 2:
            raise BudgetTooSmall("need at least two inner paths")
        self.shape = shape
        self.cfg = cfg
        self.groups = None
        self.U = None
        self.rank = np.zeros(O, dtype=int)
        if state is None or state.shape[-1] == 0:
            return
        if cfg.basis == "onehot":
            self._init_onehot(state)
        else:
            self._init_poly(state)

    def _init_poly(self, state: np.ndarray) -> None:
        X = poly_features(state, self.cfg.degree)
        if X.shape[-1] == 0:
            return
        X = X - X.mean(axis=1, keepdims=True)
        try:
            U, s, _ = np.linalg.svd(X, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise RegressionSingular(str(exc)) from None
        if not np.all(np.isfinite(s)):
            raise RegressionSingular("non-finite singular values")
        smax = s[:, :1]
        keep = s > smax * max(X.shape[1:]) * np.finfo(float).eps * 10
        if self.cfg.ridge == 0.0:
            filt = keep.astype(float)
        else:
            if self.cfg.ridge is None:
                lam = 1e-8 * np.sum(s ** 2, axis=1, keepdims=True) / X.shape[-1]
            else:
                lam = self.cfg.ridge
            s2 = s ** 2
            filt = np.divide(s2, s2 + lam, out=np.zeros_like(s2), where=keep)
        self.U = np.ascontiguousarray(U)
        self.Ut = np.ascontiguousarray(U.transpose(0, 2, 1))
        self.filt = filt
        self.rank = keep.sum(axis=1)

    def _init_onehot(self, state: np.ndarray) -> None:
        O, I = self.shape
        key = np.round(state, 10)
        self.groups = []
        for o in range(O):
            _, inv = np.unique(key[o], axis=0, return_inverse=True)
            inv = inv.reshape(-1)
            self.groups.append((inv, np.bincount(inv)))
            self.rank[o] = len(self.groups[-1][1]) - 1

    def fit(self, targets: np.ndarray) -> np.ndarray:
        """Fitted conditional expectations of ``targets`` with shape ``(O, I, ...)``."""
        O, I = self.shape
        y = targets.reshape(O, I, -1)
        # shifted mean: exact for targets that are constant across inner paths
        mean = y[:, :1] + (y - y[:, :1]).mean(axis=1, keepdims=True)
        if self.groups is not None:
            out = np.empty_like(y)
            for o, (inv, cnt) in enumerate(self.groups):
                sums = np.zeros((len(cnt), y.shape[-1]))
                np.add.at(sums, inv, y[o])
                out[o] = (sums / cnt[:, None])[inv]
            return out.reshape(targets.shape)
        if self.U is None:
            return np.broadcast_to(mean, y.shape).reshape(targets.shape).copy()
        yc = y - mean
        coef = (self.Ut @ yc) * self.filt[:, :, None]
        out = mean + self.U @ coef
        return out.reshape(targets.shape)

    def stderr(self, target: np.ndarray, fitted: np.ndarray) -> np.ndarray:
        """Per-outer-path standard error of the fitted mean: residual sd over sqrt(n_inner)."""
        O, I = self.shape
        dof = np.maximum(I - 1 - self.rank, 1)
        res = (target - fitted).reshape(O, I)
        return np.sqrt(np.sum(res ** 2, axis=1) / dof / I)
