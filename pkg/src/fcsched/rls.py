"""Online MIMO ARX identification by recursive least squares with exponential forgetting.

The model is ``y(t+1) = X z(t) + d(t+1)`` with the regressor

    z(t) = [u(t), ..., u(t-l+1), y(t), ..., y(t-l+1)]

so ``X = [M_0 ... M_{l-1} | L_1 ... L_l]`` holds ``l`` input blocks (n x m)
followed by ``l`` output blocks (n x n).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

DIVERGENCE_LIMIT = 1e12


@dataclass
class ArxModel:
    n: int
    m: int
    order: int
    X: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.order < 1:
            raise ValueError("model order must be >= 1")
        if self.X.shape != (self.n, self.width):
            raise ValueError(f"X has shape {self.X.shape}, expected {(self.n, self.width)}")

    @property
    def width(self) -> int:
        return self.order * (self.m + self.n)

    def input_block(self, s: int) -> np.ndarray:
        """M_s, the gain from u(t-s) to y(t+1)."""
        return self.X[:, s * self.m:(s + 1) * self.m]

    def output_block(self, i: int) -> np.ndarray:
        """L_i (1-based), the gain from y(t-i+1) to y(t+1)."""
        base = self.order * self.m
        return self.X[:, base + (i - 1) * self.n:base + i * self.n]

    @classmethod
    def zeros(cls, n: int, m: int, order: int = 1) -> "ArxModel":
        return cls(n, m, order, np.zeros((n, order * (m + n))))


def nominal_model(B: np.ndarray, order: int = 1) -> ArxModel:
    """Prior model ``y(t+1) = y(t) + B u(t)`` (M_0 = B, L_1 = I, other blocks zero)."""
    B = np.asarray(B, dtype=float)
    n, m = B.shape
    model = ArxModel.zeros(n, m, order)
    model.X[:, :m] = B
    base = order * m
    model.X[:, base:base + n] = np.eye(n)
    return model


@dataclass
class EstimatorState:
    model: ArxModel
    P: np.ndarray
    lam: float = 0.98
    p0: float = 100.0
    hist_u: list[np.ndarray] = field(default_factory=list)
    hist_y: list[np.ndarray] = field(default_factory=list)
    last_error: np.ndarray | None = None
    resets: int = 0
    # parameters (columns of X) held at their prior value: zero covariance
    fixed: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"forgetting factor {self.lam} not in (0, 1]")
        if self.last_error is None:
            self.last_error = np.zeros(self.model.n)

    def initial_covariance(self) -> np.ndarray:
        free = np.ones(self.model.width)
        if self.fixed is not None:
            free[np.asarray(self.fixed, dtype=bool)] = 0.0
        return self.p0 * np.diag(free)

    @classmethod
    def create(
        cls,
        n: int,
        m: int,
        order: int = 1,
        lam: float = 0.98,
        p0: float = 100.0,
        prior: ArxModel | None = None,
        fixed=None,
    ) -> "EstimatorState":
        """Fresh estimator.  ``fixed`` is an optional boolean mask over the
        regressor entries whose coefficients stay at the prior (for instance
        output blocks known from the plant structure)."""
        model = prior if prior is not None else ArxModel.zeros(n, m, order)
        if (model.n, model.m, model.order) != (n, m, order):
            raise ValueError("prior model dimensions do not match")
        model = ArxModel(n, m, order, model.X.copy())
        if fixed is not None:
            fixed = np.asarray(fixed, dtype=bool)
            if fixed.shape != (model.width,):
                raise ValueError(f"fixed mask has shape {fixed.shape}, expected ({model.width},)")
        state = cls(model=model, P=np.zeros((model.width,) * 2), lam=lam, p0=p0, fixed=fixed)
        state.P = state.initial_covariance()
        return state

    def push(self, u, y) -> None:
        """Record the newest input/output pair, keeping only ``order`` of each."""
        l = self.model.order
        self.hist_u = [np.asarray(u, dtype=float)] + self.hist_u[: l - 1]
        self.hist_y = [np.asarray(y, dtype=float)] + self.hist_y[: l - 1]


def make_regressor(hist_u: Sequence, hist_y: Sequence, order: int) -> np.ndarray:
    """Stack the newest ``order`` inputs then the newest ``order`` outputs (newest first)."""
    if len(hist_u) < order or len(hist_y) < order:
        raise ValueError(
            f"need {order} past inputs and outputs, have {len(hist_u)} and {len(hist_y)}"
        )
    parts = [np.atleast_1d(np.asarray(u, dtype=float)) for u in hist_u[:order]]
    parts += [np.atleast_1d(np.asarray(y, dtype=float)) for y in hist_y[:order]]
    return np.concatenate(parts)


def predict(model: ArxModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (model.width,):
        raise ValueError(f"regressor has shape {z.shape}, expected ({model.width},)")
    return model.X @ z


def rls_update(state: EstimatorState, y_new, z) -> EstimatorState:
    """One exponentially weighted RLS step; returns a new state.

    The covariance is reset to its initial value ``p0 * I`` (estimate kept;
    fixed parameters keep zero covariance) if any entry exceeds
    ``DIVERGENCE_LIMIT``, which happens when the regressor stays unexciting for
    long stretches, e.g. while the plant is saturated.
    """
    y_new = np.asarray(y_new, dtype=float)
    z = np.asarray(z, dtype=float)
    if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(z))):
        raise ValueError("non-finite measurement or regressor")
    X, P, lam = state.model.X, state.P, state.lam
    if y_new.shape != (X.shape[0],) or z.shape != (X.shape[1],):
        raise ValueError("measurement or regressor has the wrong dimension")

    e = y_new - X @ z
    Pz = P @ z
    denom = lam + z @ Pz
    X_new = X + np.outer(e, Pz) / denom
    P_new = (P - np.outer(Pz, Pz) / denom) / lam
    P_new = 0.5 * (P_new + P_new.T)

    resets = state.resets
    if not np.all(np.isfinite(P_new)) or np.max(np.abs(P_new)) > DIVERGENCE_LIMIT:
        P_new = state.initial_covariance()
        resets += 1

    model = replace(state.model, X=X_new)
    return replace(state, model=model, P=P_new, last_error=e, resets=resets)


def project_input_gain(state: EstimatorState, lower=0.0) -> EstimatorState:
    """Clip the current-input gain block M_0 of the estimate to ``>= lower``.

    ``lower`` is a scalar or an n x m floor.  Utilization cannot fall when a
    rate rises, so a gain below the floor is an identification artefact
    (typically from collinear or saturated data) that would make the
    controller push the wrong way or not at all.
    """
    m = state.model.m
    gains = state.model.X[:, :m]
    if np.all(gains >= lower):
        return state
    X = state.model.X.copy()
    X[:, :m] = np.maximum(gains, lower)
    return replace(state, model=replace(state.model, X=X))
