"""Multivariate Gaussians, linear-Gaussian dynamics/controllers and forward propagation."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .errors import InvalidInputError, NumericalError
from .trajectory import StateLayout

JITTER = 1e-9
SYMMETRY_TOL = 1e-10


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def spd_cholesky(cov, what="covariance"):
    """Lower Cholesky factor of ``cov``, retried once with the jitter floor.

    Returns ``(L, jittered)``. Raises NumericalError if the jittered matrix is
    still not positive definite.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return cholesky(cov, lower=True), False
    except np.linalg.LinAlgError:
        pass
    try:
        return cholesky(cov + JITTER * np.eye(cov.shape[0]), lower=True), True
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not positive definite") from None


def batch_spd_chol(covs, what="covariance"):
    """Cholesky of a stack of matrices, applying the jitter floor where needed."""
    covs = np.asarray(covs, dtype=float)
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        flat = covs.reshape((-1,) + covs.shape[-2:])
        out = np.stack([spd_cholesky(c, what)[0] for c in flat])
        return out.reshape(covs.shape)


def logdet_from_chol(L):
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (n, n):
            raise InvalidInputError(f"mean/cov shapes {mean.shape}/{cov.shape} are inconsistent")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvalidInputError("non-finite Gaussian parameters")
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(cov))):
            raise InvalidInputError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        L, jittered = spd_cholesky(cov)
        if jittered:
            cov = cov + JITTER * np.eye(n)
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "cov", _readonly(cov))
        object.__setattr__(self, "chol", L)
        object.__setattr__(self, "jittered", jittered)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def logdet(self) -> float:
        return float(logdet_from_chol(self.chol))

    def logpdf(self, x):
        x = np.atleast_2d(x)
        z = np.linalg.solve(self.chol, (x - self.mean).T)
        return -0.5 * (np.sum(z * z, axis=0) + self.logdet + self.dim * np.log(2 * np.pi))

    def sample(self, rng, size):
        rng = np.random.default_rng(rng)
        return self.mean + rng.standard_normal((size, self.dim)) @ self.chol.T


def kl_gaussian_arrays(mu_p, cov_p, mu_q, cov_q):
    """Batched KL(N(mu_p, cov_p) || N(mu_q, cov_q)) over any leading dimensions."""
    mu_p, mu_q = np.asarray(mu_p, float), np.asarray(mu_q, float)
    Lp = batch_spd_chol(cov_p)
    Lq = batch_spd_chol(cov_q)
    n = mu_p.shape[-1]
    # tr(Sq^-1 Sp) = ||Lq^-1 Lp||_F^2
    A = np.linalg.solve(Lq, np.broadcast_to(Lp, np.broadcast_shapes(Lp.shape, Lq.shape)))
    d = np.broadcast_to(mu_q - mu_p, np.broadcast_shapes(mu_p.shape, mu_q.shape))
    z = np.linalg.solve(Lq, d[..., None])[..., 0]
    kl = 0.5 * (np.sum(A * A, axis=(-2, -1)) + np.sum(z * z, axis=-1) - n
                + logdet_from_chol(Lq) - logdet_from_chol(Lp))
    return np.maximum(kl, 0.0)


def kl_gaussian(p: Gaussian, q: Gaussian) -> float:
    if p.dim != q.dim:
        raise InvalidInputError(f"dimension mismatch: {p.dim} vs {q.dim}")
    return float(kl_gaussian_arrays(p.mean, p.cov, q.mean, q.cov))


def entropy(p: Gaussian) -> float:
    return 0.5 * (p.dim * np.log(2 * np.pi * np.e) + p.logdet)


@dataclass(frozen=True, eq=False)
class TVLinearDynamics:
    """x_{t+1} ~ N(Fx[t] x_t + Fu[t] u_t + fc[t], Cd[t]) for t = 0..T-1."""

    Fx: np.ndarray
    Fu: np.ndarray
    fc: np.ndarray
    Cd: np.ndarray

    def __post_init__(self):
        Fx, Fu, fc, Cd = (_readonly(a) for a in (self.Fx, self.Fu, self.fc, self.Cd))
        if Fx.ndim != 3:
            raise InvalidInputError("Fx must have shape (T, n, n)")
        T, n, _ = Fx.shape
        m = Fu.shape[-1]
        if Fx.shape != (T, n, n) or Fu.shape != (T, n, m) or fc.shape != (T, n) or Cd.shape != (T, n, n):
            raise InvalidInputError("inconsistent dynamics shapes")
        for name, a in (("Fx", Fx), ("Fu", Fu), ("fc", fc), ("Cd", Cd)):
            object.__setattr__(self, name, a)

    @property
    def horizon(self) -> int:
        return self.Fx.shape[0]

    @property
    def state_dim(self) -> int:
        return self.Fx.shape[1]

    @property
    def control_dim(self) -> int:
        return self.Fu.shape[2]


@dataclass(frozen=True, eq=False)
class TVLGController:
    """p(u_t | x_t) = N(K[t] x_t + k[t], C[t])."""

    K: np.ndarray
    k: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        K, k, C = (np.array(a, dtype=float) for a in (self.K, self.k, self.C))
        if K.ndim != 3:
            raise InvalidInputError("K must have shape (T, m, n)")
        T, m, n = K.shape
        if k.shape != (T, m) or C.shape != (T, m, m):
            raise InvalidInputError("inconsistent controller shapes")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(k)) and np.all(np.isfinite(C))):
            raise InvalidInputError("non-finite controller parameters")
        C = 0.5 * (C + np.swapaxes(C, 1, 2))
        chol = np.empty_like(C)
        for t in range(T):
            chol[t], jittered = spd_cholesky(C[t], "controller covariance")
            if jittered:
                C[t] += JITTER * np.eye(m)
        object.__setattr__(self, "K", _readonly(K))
        object.__setattr__(self, "k", _readonly(k))
        object.__setattr__(self, "C", _readonly(C))
        object.__setattr__(self, "chol", _readonly(chol))

    @property
    def horizon(self) -> int:
        return self.K.shape[0]

    @property
    def state_dim(self) -> int:
        return self.K.shape[2]

    @property
    def control_dim(self) -> int:
        return self.K.shape[1]

    @cached_property
    def precision(self) -> np.ndarray:
        eye = np.eye(self.control_dim)
        return np.stack([cho_solve((L, True), eye) for L in self.chol])

    @cached_property
    def logdet(self) -> np.ndarray:
        return logdet_from_chol(self.chol)

    def mean_action(self, t, x):
        return self.K[t] @ x + self.k[t]

    def act(self, t, x, noise):
        return self.mean_action(t, x) + self.chol[t] @ noise

    @classmethod
    def initial(cls, horizon, state_dim, control_dim, std):
        """Zero gains and offsets with isotropic exploration noise."""
        return cls(
            np.zeros((horizon, control_dim, state_dim)),
            np.zeros((horizon, control_dim)),
            np.tile(np.eye(control_dim) * std**2, (horizon, 1, 1)),
        )


@dataclass(frozen=True, eq=False)
class Marginals:
    """Per-step Gaussian marginals of a linear-Gaussian closed loop."""

    state_mean: np.ndarray    # (T+1, n)
    state_cov: np.ndarray     # (T+1, n, n)
    action_mean: np.ndarray   # (T, m)
    action_cov: np.ndarray    # (T, m, m)
    cross_cov: np.ndarray     # (T, m, n), Cov(u_t, x_t)
    layout: StateLayout | None = None
    clamped: tuple = ()

    def _obj_idx(self):
        if self.layout is None:
            raise InvalidInputError("marginals were computed without a layout")
        return list(self.layout.objcentric_indices)

    @property
    def obj_mean(self):
        return self.state_mean[:, self._obj_idx()]

    @property
    def obj_cov(self):
        idx = self._obj_idx()
        return self.state_cov[:, idx][:, :, idx]

    def state(self, t) -> Gaussian:
        return Gaussian(self.state_mean[t], self.state_cov[t])

    def obj(self, t) -> Gaussian:
        return Gaussian(self.obj_mean[t], self.obj_cov[t])


def forward_marginals(dyn: TVLinearDynamics, ctrl: TVLGController, init: Gaussian,
                      layout: StateLayout | None = None) -> Marginals:
    T, n, m = dyn.horizon, dyn.state_dim, dyn.control_dim
    if ctrl.horizon != T or ctrl.state_dim != n or ctrl.control_dim != m or init.dim != n:
        raise InvalidInputError("dynamics, controller and initial state dimensions disagree")
    if layout is not None and (layout.total_dim != n or layout.horizon != T):
        raise InvalidInputError("layout does not match dynamics")

    mu = np.empty((T + 1, n))
    sigma = np.empty((T + 1, n, n))
    mu_u = np.empty((T, m))
    sigma_u = np.empty((T, m, m))
    cross = np.empty((T, m, n))
    mu[0], sigma[0] = init.mean, init.cov
    clamped = []
    for t in range(T):
        K = ctrl.K[t]
        mu_u[t] = K @ mu[t] + ctrl.k[t]
        cross[t] = K @ sigma[t]
        sigma_u[t] = cross[t] @ K.T + ctrl.C[t]
        F = np.hstack([dyn.Fx[t], dyn.Fu[t]])
        joint = np.block([[sigma[t], cross[t].T], [cross[t], sigma_u[t]]])
        mu[t + 1] = F @ np.concatenate([mu[t], mu_u[t]]) + dyn.fc[t]
        nxt = F @ joint @ F.T + dyn.Cd[t]
        nxt = 0.5 * (nxt + nxt.T)
        lam_min = np.linalg.eigvalsh(nxt)[0]
        assert lam_min >= -1e-8 * max(1.0, np.abs(nxt).max()), "propagated covariance lost PSD"
        if lam_min < JITTER:
            nxt = nxt + (JITTER - lam_min) * np.eye(n)
            clamped.append(t + 1)
        sigma[t + 1] = nxt
    return Marginals(mu, sigma, mu_u, sigma_u, cross, layout, tuple(clamped))
