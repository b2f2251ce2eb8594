"""Maximum-entropy LQG under fitted dynamics with a KL trust region to the previous controller."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InvalidInputError, NumericalError
from .gaussian import Gaussian, Marginals, TVLGController, TVLinearDynamics, forward_marginals
from .trajectory import StateLayout

log = logging.getLogger(__name__)

DEFAULT_ACTION_REG = 1e-3


@dataclass(frozen=True, eq=False)
class QuadraticCost:
    """Per-step quadratic cost over states x_0..x_T and actions u_0..u_{T-1}.

    cost = sum_t 0.5 x_t'Q_t x_t + q_t'x_t + const_t
         + sum_t 0.5 u_t'R_t u_t + r_t'u_t + u_t'M_t x_t
    """

    Q: np.ndarray       # (T+1, n, n)
    q: np.ndarray       # (T+1, n)
    R: np.ndarray       # (T, m, m)
    r: np.ndarray       # (T, m)
    M: np.ndarray       # (T, m, n)
    const: np.ndarray   # (T+1,)

    def __post_init__(self):
        T1, n, _ = np.shape(self.Q)
        T, m = np.shape(self.r)
        if (np.shape(self.q) != (T1, n) or np.shape(self.R) != (T, m, m) or np.shape(self.M) != (T, m, n)
                or np.shape(self.const) != (T1,) or T1 != T + 1):
            raise InvalidInputError("inconsistent quadratic cost shapes")

    @classmethod
    def zeros(cls, T, n, m):
        return cls(np.zeros((T + 1, n, n)), np.zeros((T + 1, n)), np.zeros((T, m, m)),
                   np.zeros((T, m)), np.zeros((T, m, n)), np.zeros(T + 1))

    @property
    def horizon(self):
        return self.r.shape[0]

    def __add__(self, other):
        return QuadraticCost(self.Q + other.Q, self.q + other.q, self.R + other.R,
                             self.r + other.r, self.M + other.M, self.const + other.const)

    def __mul__(self, c):
        return QuadraticCost(c * self.Q, c * self.q, c * self.R, c * self.r, c * self.M, c * self.const)

    __rmul__ = __mul__

    def state_cost(self, t, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x @ self.Q[t] @ x + self.q[t] @ x + self.const[t]

    def evaluate(self, states, actions) -> float:
        X, U = np.asarray(states, float), np.asarray(actions, float)
        total = 0.5 * np.einsum("ti,tij,tj->", X, self.Q, X) + np.sum(self.q * X) + self.const.sum()
        total += 0.5 * np.einsum("ti,tij,tj->", U, self.R, U) + np.sum(self.r * U)
        total += np.einsum("ti,tij,tj->", U, self.M, X[:-1])
        return float(total)

    def expected(self, marg: Marginals) -> float:
        """Closed-form expectation under Gaussian state/action marginals."""
        mx, Sx = marg.state_mean, marg.state_cov
        mu, Su = marg.action_mean, marg.action_cov
        total = 0.5 * (np.einsum("ti,tij,tj->", mx, self.Q, mx) + np.einsum("tij,tji->", self.Q, Sx))
        total += np.sum(self.q * mx) + self.const.sum()
        total += 0.5 * (np.einsum("ti,tij,tj->", mu, self.R, mu) + np.einsum("tij,tji->", self.R, Su))
        total += np.sum(self.r * mu)
        total += np.einsum("ti,tij,tj->", mu, self.M, mx[:-1]) + np.einsum("tij,tji->", self.M, marg.cross_cov.transpose(0, 2, 1))
        return float(total)


@dataclass(frozen=True)
class TrustRegionConfig:
    epsilon: float = 1.0
    eta_init: float = 1.0
    eta_min: float = 1e-6
    eta_max: float = 1e16
    max_dgd_iters: int = 20

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InvalidInputError("epsilon must be positive")
        if not 0 < self.eta_min <= self.eta_init <= self.eta_max:
            raise InvalidInputError("need 0 < eta_min <= eta_init <= eta_max")
        if self.max_dgd_iters < 1:
            raise InvalidInputError("max_dgd_iters must be >= 1")


def cost_from_demos(mixture, a, j, layout: StateLayout, action_reg=DEFAULT_ACTION_REG):
    """Tracking cost for controller j: correspondence-weighted squared Mahalanobis
    distance of the object coordinates of x_1..x_T to each demonstration, plus
    ``action_reg * |u|^2 / 2``.

    Returns ``(cost, fallback_steps)`` where ``fallback_steps`` lists steps whose
    weights summed to zero and were replaced by uniform demonstration weights.
    """
    a = np.asarray(a, dtype=float)
    D, C, T = a.shape
    if D != mixture.n_demos or T != mixture.horizon or T != layout.horizon or not 0 <= j < C:
        raise InvalidInputError("correspondence weights do not match the mixture/layout")
    if mixture.dim != layout.obj_dim:
        raise InvalidInputError("demo dimension differs from the object-centric state dimension")
    n, m = layout.total_dim, layout.control_dim
    aj = a[:, j, :]
    norm = aj.sum(axis=0)
    fallback = np.nonzero(norm <= 0)[0]
    abar = np.where(norm > 0, aj / np.where(norm > 0, norm, 1.0), 1.0 / D)     # (D, T)

    prec = 1.0 / mixture.sigma**2                                            # (D, d)
    P_obj = np.einsum("it,id->td", abar, prec)                               # diag precision per step
    lin = -np.einsum("it,id,itd->td", abar, prec, mixture.means)
    const = 0.5 * np.einsum("it,id,itd->t", abar, prec, mixture.means**2)

    idx = list(layout.objcentric_indices)
    cost = QuadraticCost.zeros(T, n, m)
    Q, q, c = cost.Q.copy(), cost.q.copy(), cost.const.copy()
    for t in range(T):
        Q[t + 1][np.ix_(idx, idx)] = np.diag(P_obj[t])
        q[t + 1][idx] = lin[t]
        c[t + 1] = const[t]
    R = np.tile(np.eye(m) * action_reg, (T, 1, 1))
    return replace(cost, Q=Q, q=q, R=R, const=c), [int(t) for t in fallback]


def maxent_lqg_backward(dyn: TVLinearDynamics, cost: QuadraticCost, reg_init=1e-6, reg_cap=1e6):
    """Riccati recursion for the max-entropy LQG problem (temperature 1).

    K_t, k_t minimize the quadratic cost-to-go; C_t = Quu_t^{-1}. If some Quu_t is
    not positive definite the whole pass is repeated with ``mu * I`` added to
    every Quu, growing mu by 10x until ``reg_cap``.
    """
    if cost.horizon != dyn.horizon or cost.Q.shape[1] != dyn.state_dim or cost.R.shape[1] != dyn.control_dim:
        raise InvalidInputError("cost and dynamics dimensions disagree")
    mu = 0.0
    while True:
        try:
            return _backward(dyn, cost, mu)
        except np.linalg.LinAlgError:
            mu = reg_init if mu == 0.0 else mu * 10.0
            if mu > reg_cap:
                raise NumericalError("action curvature stays indefinite at the regularization cap") from None
            log.debug("Quu indefinite; retrying with regularization %g", mu)


def _backward(dyn, cost, mu):
    T, n, m = dyn.horizon, dyn.state_dim, dyn.control_dim
    K = np.empty((T, m, n))
    k = np.empty((T, m))
    C = np.empty((T, m, m))
    V = cost.Q[T].copy()
    v = cost.q[T].copy()
    eye = np.eye(m)
    for t in range(T - 1, -1, -1):
        Fx, Fu, fc = dyn.Fx[t], dyn.Fu[t], dyn.fc[t]
        vnext = v + V @ fc
        Qxx = cost.Q[t] + Fx.T @ V @ Fx
        Quu = cost.R[t] + Fu.T @ V @ Fu + mu * eye
        Qux = cost.M[t] + Fu.T @ V @ Fx
        Qx = cost.q[t] + Fx.T @ vnext
        Qu = cost.r[t] + Fu.T @ vnext
        Quu = 0.5 * (Quu + Quu.T)
        fac = cho_factor(Quu, lower=True)       # raises LinAlgError if not PD
        K[t] = -cho_solve(fac, Qux)
        k[t] = -cho_solve(fac, Qu)
        C[t] = cho_solve(fac, eye)
        V = Qxx + Qux.T @ K[t]
        V = 0.5 * (V + V.T)
        v = Qx + Qux.T @ k[t]
    return TVLGController(K, k, C)


def kl_controllers_per_step(p_new: TVLGController, p_old: TVLGController, dyn, init: Gaussian,
                            marg: Marginals | None = None) -> np.ndarray:
    """E_{x_t ~ p_new}[KL(p_new(u|x_t) || p_old(u|x_t))] for every step."""
    if (p_new.K.shape != p_old.K.shape):
        raise InvalidInputError("controllers have different shapes")
    if marg is None:
        marg = forward_marginals(dyn, p_new, init)
    m = p_new.control_dim
    P_old = p_old.precision
    dK = p_new.K - p_old.K
    dk = p_new.k - p_old.k
    d_mean = np.einsum("tij,tj->ti", dK, marg.state_mean[:-1]) + dk
    quad = np.einsum("ti,tij,tj->t", d_mean, P_old, d_mean)
    quad += np.einsum("tij,tjk,tkl,tli->t", dK.transpose(0, 2, 1), P_old, dK, marg.state_cov[:-1])
    tr = np.einsum("tij,tji->t", P_old, p_new.C)
    kl = 0.5 * (tr - m + p_old.logdet - p_new.logdet + quad)
    return np.maximum(kl, 0.0)


def kl_controllers(p_new, p_old, dyn, init, marg=None) -> float:
    return float(np.sum(kl_controllers_per_step(p_new, p_old, dyn, init, marg)))


def neg_log_policy_cost(K, k, precision, n) -> QuadraticCost:
    """-log N(u; K_t x + k_t, precision^-1) as a QuadraticCost, dropping constants."""
    T, m = k.shape
    PK = precision @ K                                   # (T, m, n)
    Q = np.zeros((T + 1, n, n))
    q = np.zeros((T + 1, n))
    Q[:T] = K.transpose(0, 2, 1) @ PK
    q[:T] = np.einsum("tji,tj->ti", PK, k)
    R = precision.copy()
    r = -np.einsum("tij,tj->ti", precision, k)
    M = -PK
    const = np.zeros(T + 1)
    const[:T] = 0.5 * np.einsum("ti,tij,tj->t", k, precision, k)
    return QuadraticCost(Q, q, R, r, M, const)


def trust_region_cost(cost: QuadraticCost, prev: TVLGController, eta: float) -> QuadraticCost:
    """(cost - eta * log prev(u|x)) / (1 + eta)."""
    if eta == 0:
        return cost
    pen = neg_log_policy_cost(prev.K, prev.k, prev.precision, prev.state_dim)
    return (cost + eta * pen) * (1.0 / (1.0 + eta))


@dataclass
class TrustRegionStep:
    controller: TVLGController
    kl: float
    eta: float
    iterations: int
    status: str          # "unconstrained", "converged", "conservative"

    @property
    def conservative(self):
        return self.status == "conservative"


def constrained_update(dyn, cost, prev: TVLGController, trc: TrustRegionConfig, init: Gaussian) -> TrustRegionStep:
    """Solve the max-entropy problem subject to KL(new || prev) <= epsilon.

    The multiplier eta is searched geometrically (x10 / /10 until bracketed, then
    log-space bisection) until the achieved KL lies in [0.5, 1.1] * epsilon.
    """
    eps = trc.epsilon

    def solve(eta):
        ctrl = maxent_lqg_backward(dyn, trust_region_cost(cost, prev, eta))
        return ctrl, kl_controllers(ctrl, prev, dyn, init)

    ctrl, kl = solve(0.0)
    if kl <= eps:
        return TrustRegionStep(ctrl, kl, 0.0, 1, "unconstrained")

    lo, hi = None, None          # eta with kl too large / too small
    best = None                  # feasible (kl <= 1.1 eps) candidate with the largest kl
    eta = trc.eta_init
    for it in range(1, trc.max_dgd_iters + 1):
        ctrl, kl = solve(eta)
        if 0.5 * eps <= kl <= 1.1 * eps:
            return TrustRegionStep(ctrl, kl, eta, it + 1, "converged")
        if kl <= 1.1 * eps and (best is None or kl > best.kl):
            best = TrustRegionStep(ctrl, kl, eta, it + 1, "conservative")
        if kl > 1.1 * eps:
            lo = eta
            if eta >= trc.eta_max:
                break
            eta = np.sqrt(lo * hi) if hi is not None else min(10.0 * eta, trc.eta_max)
        else:
            hi = eta
            if eta <= trc.eta_min:
                break
            eta = np.sqrt(lo * hi) if lo is not None else max(0.1 * eta, trc.eta_min)
    if best is not None:
        return best
    ctrl, kl = solve(trc.eta_max)
    log.warning("trust-region search exhausted; using eta_max controller (kl=%.3g, eps=%.3g)", kl, eps)
    return TrustRegionStep(ctrl, kl, trc.eta_max, trc.max_dgd_iters + 2, "conservative")
