"""One-step linear-quadratic rate controller.

Given the identified model, the command ``u`` (a rate change per task)
minimises

    J(u) = ||V (y_hat(t+1) - y_ref)||^2 + ||Q (u - u_prev)||^2

where ``y_hat(t+1) = M_0 u + y_free`` and ``y_free`` is the model prediction
with ``u = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import SystemTopology
from .rls import ArxModel, make_regressor


@dataclass(frozen=True)
class ControllerConfig:
    V: np.ndarray
    Q: np.ndarray
    y_ref: np.ndarray
    u_prev: np.ndarray = field(default=None)
    miss_set_point: float | None = None  # accepted and logged; not acted on

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        y_ref = np.atleast_1d(np.asarray(self.y_ref, dtype=float))
        if V.shape != (len(y_ref), len(y_ref)):
            raise ValueError(f"V has shape {V.shape}, expected {(len(y_ref),) * 2}")
        if Q.shape[0] != Q.shape[1]:
            raise ValueError("Q must be square")
        if np.any(V != np.diag(np.diag(V))) or np.any(np.diag(V) < 0):
            raise ValueError("V must be diagonal with nonnegative entries")
        if np.any(Q != np.diag(np.diag(Q))) or np.any(np.diag(Q) <= 0):
            raise ValueError("Q must be diagonal with positive entries")
        if np.any((y_ref <= 0) | (y_ref >= 1)):
            raise ValueError("utilization set points must lie in (0, 1)")
        u_prev = np.zeros(Q.shape[0]) if self.u_prev is None else np.asarray(self.u_prev, float)
        if u_prev.shape != (Q.shape[0],):
            raise ValueError("u_prev does not match Q")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "y_ref", y_ref)
        object.__setattr__(self, "u_prev", u_prev)

    @classmethod
    def uniform(
        cls, n: int, m: int, set_point: float, v_weight: float = 1.0, q_weight: float = 0.5
    ) -> "ControllerConfig":
        return cls(v_weight * np.eye(n), q_weight * np.eye(m), np.full(n, float(set_point)))

    def with_u_prev(self, u) -> "ControllerConfig":
        return replace(self, u_prev=np.asarray(u, dtype=float).copy())


def free_response(model: ArxModel, hist_u: Sequence, hist_y: Sequence) -> np.ndarray:
    """Model prediction of y(t+1) with the current input u(t) set to zero.

    ``hist_u`` holds past inputs u(t-1), u(t-2), ... and ``hist_y`` holds
    y(t), y(t-1), ..., newest first.
    """
    l = model.order
    past = [np.zeros(model.m)] + list(hist_u[: l - 1])
    while len(past) < l:
        past.append(np.zeros(model.m))
    z0 = make_regressor(past, hist_y, l)
    return model.X @ z0


def lq_cost(u, M0: np.ndarray, y_free, cfg: ControllerConfig) -> float:
    u = np.asarray(u, dtype=float)
    track = cfg.V @ (M0 @ u + y_free - cfg.y_ref)
    move = cfg.Q @ (u - cfg.u_prev)
    return float(track @ track + move @ move)


def lq_solve(M0: np.ndarray, y_free, cfg: ControllerConfig) -> np.ndarray:
    """Unconstrained minimiser of the one-step cost (normal equations)."""
    W = cfg.V.T @ cfg.V
    R = cfg.Q.T @ cfg.Q
    normal = M0.T @ W @ M0 + R
    rhs = M0.T @ W @ (cfg.y_ref - y_free) + R @ cfg.u_prev
    # positive definite whenever Q has a positive diagonal
    return cho_solve(cho_factor(normal), rhs)


def clamp_rates(u, topology: SystemTopology) -> np.ndarray:
    """Clip a rate vector to the per-task ``[rate_min, rate_max]`` bounds."""
    lo, hi = topology.rate_bounds
    return np.clip(np.asarray(u, dtype=float), lo, hi)


def lq_control(
    model: ArxModel,
    hist_u: Sequence,
    hist_y: Sequence,
    cfg: ControllerConfig,
    rates=None,
    topology: SystemTopology | None = None,
) -> np.ndarray:
    """Rate-change command for the next sampling period.

    When the current ``rates`` and the ``topology`` are given, the command is
    clipped so that ``rates + u`` stays inside the rate bounds.
    """
    y_free = free_response(model, hist_u, hist_y)
    u = lq_solve(model.input_block(0), y_free, cfg)
    if rates is not None and topology is not None:
        rates = np.asarray(rates, dtype=float)
        u = clamp_rates(rates + u, topology) - rates
    return u
