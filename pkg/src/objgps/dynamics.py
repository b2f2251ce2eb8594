"""Per-step ridge fits of time-varying affine-Gaussian dynamics from rollouts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .gaussian import JITTER, Gaussian, TVLinearDynamics

DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Rollouts of one controller from one initial condition."""

    trajectories: tuple
    init_id: str = ""

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise InvalidInputError("a sample batch needs at least one trajectory")
        s0, a0 = trajs[0].states.shape, trajs[0].actions.shape
        if any(tr.states.shape != s0 or tr.actions.shape != a0 for tr in trajs):
            raise InvalidInputError("trajectories in a batch must share dimensions")
        object.__setattr__(self, "trajectories", trajs)

    def __len__(self):
        return len(self.trajectories)

    @property
    def states(self) -> np.ndarray:
        """(N, T+1, n)"""
        return np.stack([tr.states for tr in self.trajectories])

    @property
    def actions(self) -> np.ndarray:
        """(N, T, m)"""
        return np.stack([tr.actions for tr in self.trajectories])

    def initial_gaussian(self) -> Gaussian:
        """Empirical distribution of x_0 (jittered when the batch starts from one point)."""
        x0 = self.states[:, 0]
        cov = np.cov(x0, rowvar=False, bias=True) if len(self) > 1 else np.zeros((x0.shape[1],) * 2)
        cov = np.atleast_2d(cov) + JITTER * np.eye(x0.shape[1])
        return Gaussian(x0.mean(axis=0), cov)


def _regressors(X, U):
    return np.concatenate([X, U, np.ones(X.shape[:-1] + (1,))], axis=-1)


def fit_dynamics(batch: SampleBatch, ridge: float = DEFAULT_RIDGE) -> TVLinearDynamics:
    """Ridge regression of x_{t+1} on [x_t; u_t; 1] separately at every step."""
    S, A = batch.states, batch.actions
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(A))):
        raise InvalidInputError("non-finite sample")
    if ridge < 0:
        raise InvalidInputError("ridge must be nonnegative")
    N, T1, n = S.shape
    T, m = A.shape[1], A.shape[2]
    p = n + m + 1
    if N < p and ridge == 0:
        raise InvalidInputError(f"{N} samples cannot determine {p} coefficients without ridge")

    Fx = np.empty((T, n, n))
    Fu = np.empty((T, n, m))
    fc = np.empty((T, n))
    eye = np.eye(p)
    for t in range(T):
        Z = _regressors(S[:, t], A[:, t])
        W = np.linalg.solve(Z.T @ Z + ridge * eye, Z.T @ S[:, t + 1])   # (p, n)
        Fx[t], Fu[t], fc[t] = W[:n].T, W[n:n + m].T, W[-1]
    placeholder = np.tile(np.eye(n) * JITTER, (T, 1, 1))
    dyn = TVLinearDynamics(Fx, Fu, fc, placeholder)
    return TVLinearDynamics(Fx, Fu, fc, fit_residual_noise(batch, dyn))


def prediction_residuals(batch: SampleBatch, dyn: TVLinearDynamics) -> np.ndarray:
    """(N, T, n) one-step prediction errors."""
    S, A = batch.states, batch.actions
    pred = (np.einsum("tij,ntj->nti", dyn.Fx, S[:, :-1])
            + np.einsum("tij,ntj->nti", dyn.Fu, A) + dyn.fc[None])
    return S[:, 1:] - pred


def fit_residual_noise(batch: SampleBatch, dyn: TVLinearDynamics) -> np.ndarray:
    """Per-step residual covariance (about zero), floored at JITTER * I."""
    S = batch.states
    if S.shape[2] != dyn.state_dim or S.shape[1] != dyn.horizon + 1 or batch.actions.shape[2] != dyn.control_dim:
        raise InvalidInputError("batch does not match dynamics dimensions")
    r = prediction_residuals(batch, dyn)
    cov = np.einsum("nti,ntj->tij", r, r) / r.shape[0]
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    out = np.empty_like(cov)
    for t in range(cov.shape[0]):
        lam, V = np.linalg.eigh(cov[t])
        out[t] = (V * np.maximum(lam, JITTER)) @ V.T
    return out
