"""Global policy: a small tanh network distilled from the local controllers.

The mean is ``W_out tanh(W2 tanh(W1 z + b1) + b2) + b_out + S z`` with
``z = (x - x_mean) / x_scale``; the skip matrix ``S`` lets the network
represent the linear-Gaussian controllers it imitates exactly. The action
covariance is a fixed diagonal.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, TrainingDivergedError
from .gaussian import TVLGController, kl_gaussian_arrays
from .trajopt import QuadraticCost, neg_log_policy_cost

CHECKPOINT_VERSION = 1
DEFAULT_HIDDEN = (32, 32)
DEFAULT_ACTION_STD = 0.05


@dataclass(eq=False)
class GlobalPolicy:
    weights: list           # [W1, W2, ..., W_out], W_k has shape (out, in)
    biases: list
    skip: np.ndarray        # (m, n)
    x_mean: np.ndarray
    x_scale: np.ndarray
    action_std: np.ndarray  # (m,)

    def __post_init__(self):
        if any(not np.all(np.isfinite(p)) for p in self.params):
            raise InvalidInputError("non-finite policy parameters")

    @property
    def params(self) -> list:
        return [*self.weights, *self.biases, self.skip]

    def with_params(self, params) -> "GlobalPolicy":
        L = len(self.weights)
        return GlobalPolicy([np.array(p) for p in params[:L]], [np.array(p) for p in params[L:2 * L]],
                            np.array(params[-1]), self.x_mean, self.x_scale, self.action_std)

    @property
    def state_dim(self) -> int:
        return self.skip.shape[1]

    @property
    def control_dim(self) -> int:
        return self.skip.shape[0]

    @property
    def hidden(self) -> tuple:
        return tuple(W.shape[0] for W in self.weights[:-1])

    @property
    def covariance(self) -> np.ndarray:
        return np.diag(self.action_std**2)

    def _forward(self, X):
        Z = (X - self.x_mean) / self.x_scale
        acts = [Z]
        h = Z
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W.T + b)
            acts.append(h)
        out = h @ self.weights[-1].T + self.biases[-1] + Z @ self.skip.T
        return out, acts

    def mean(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out, _ = self._forward(np.atleast_2d(X))
        return out if X.ndim == 2 else out[0]

    def jacobian(self, x) -> np.ndarray:
        """d mean / d x at a single state, shape (m, n)."""
        _, acts = self._forward(np.atleast_2d(np.asarray(x, dtype=float)))
        J = self.weights[-1]
        for W, h in zip(reversed(self.weights[:-1]), reversed(acts[1:])):
            J = (J * (1.0 - h[0] ** 2)) @ W
        return (J + self.skip) / self.x_scale

    def act(self, t, x, noise):
        return self.mean(x) + self.action_std * noise

    @classmethod
    def init(cls, state_dim, control_dim, hidden=DEFAULT_HIDDEN, seed=0, action_std=DEFAULT_ACTION_STD,
             x_mean=None, x_scale=None):
        rng = np.random.default_rng(seed)
        sizes = [state_dim, *hidden, control_dim]
        weights, biases = [], []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = np.sqrt(1.0 / fan_in) * (0.1 if k == len(sizes) - 2 else 1.0)
            weights.append(scale * rng.standard_normal((fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, np.zeros((control_dim, state_dim)),
                   np.zeros(state_dim) if x_mean is None else np.asarray(x_mean, float),
                   np.ones(state_dim) if x_scale is None else np.asarray(x_scale, float),
                   np.broadcast_to(np.asarray(action_std, float), (control_dim,)).copy())

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "hidden": list(self.hidden),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "skip": self.skip.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "action_std": self.action_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "GlobalPolicy":
        if d.get("version") != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported policy checkpoint version {d.get('version')!r}")
        return cls([np.array(W, dtype=float) for W in d["weights"]], [np.array(b, dtype=float) for b in d["biases"]],
                   np.array(d["skip"], dtype=float), np.array(d["x_mean"], dtype=float),
                   np.array(d["x_scale"], dtype=float), np.array(d["action_std"], dtype=float))


def save_policy(policy: GlobalPolicy, path):
    Path(path).write_text(json.dumps(policy.to_dict()) + "\n", encoding="utf-8")


def load_policy(path) -> GlobalPolicy:
    return GlobalPolicy.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def policy_act(policy: GlobalPolicy, x, deterministic=True, seed=None):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("non-finite policy input")
    mu = policy.mean(x)
    if deterministic:
        return mu
    return mu + policy.action_std * np.random.default_rng(seed).standard_normal(mu.shape)


# --- supervised distillation ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegressionSet:
    X: np.ndarray            # (N, n) visited states
    targets: np.ndarray      # (N, m) controller means at those states
    precisions: np.ndarray   # (N, m, m)

    def __post_init__(self):
        N = self.X.shape[0]
        if self.targets.shape[0] != N or self.precisions.shape[0] != N:
            raise InvalidInputError("regression arrays disagree in length")

    def __len__(self):
        return self.X.shape[0]


def build_regression_set(batches, controllers) -> RegressionSet:
    """One tuple per (controller, sample, step) with the controller's conditional mean as target."""
    if len(batches) != len(controllers):
        raise InvalidInputError("need one sample batch per controller")
    X, Y, P = [], [], []
    for batch, ctrl in zip(batches, controllers):
        S = batch.states[:, :-1]                                   # (N, T, n)
        if S.shape[1] != ctrl.horizon or S.shape[2] != ctrl.state_dim:
            raise InvalidInputError("sample batch does not match its controller")
        Y.append(np.einsum("tij,ntj->nti", ctrl.K, S) + ctrl.k[None])
        X.append(S)
        P.append(np.broadcast_to(ctrl.precision[None], (S.shape[0],) + ctrl.precision.shape))
    n, m = controllers[0].state_dim, controllers[0].control_dim
    return RegressionSet(np.concatenate(X).reshape(-1, n), np.concatenate(Y).reshape(-1, m),
                         np.concatenate(P).reshape(-1, m, m))


def loss_and_grad(policy: GlobalPolicy, data: RegressionSet, need_grad=True):
    """Mean of 0.5 (pi(x) - target)' P (pi(x) - target) and its parameter gradients."""
    out, acts = policy._forward(data.X)
    err = out - data.targets
    Pe = np.einsum("nij,nj->ni", data.precisions, err)
    N = err.shape[0]
    loss = 0.5 * float(np.sum(err * Pe)) / N
    if not need_grad:
        return loss, None
    delta = Pe / N                                                 # dL/d out
    L = len(policy.weights)
    gW, gb = [None] * L, [None] * L
    gW[-1] = delta.T @ acts[-1]
    gb[-1] = delta.sum(axis=0)
    g_skip = delta.T @ acts[0]
    back = delta @ policy.weights[-1]
    for k in range(L - 2, -1, -1):
        back = back * (1.0 - acts[k + 1] ** 2)
        gW[k] = back.T @ acts[k]
        gb[k] = back.sum(axis=0)
        back = back @ policy.weights[k]
    return loss, [*gW, *gb, g_skip]


@dataclass
class TrainingResult:
    policy: GlobalPolicy
    losses: list = field(default_factory=list)
    step_size: float = 0.0


def _normalizer(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    return mean, np.where(scale > 1e-8, scale, 1.0)


def _backtrack(policy, data, params, m1, m2, c1, c2, lr, loss, tiny):
    """Halve the Adam step until the loss does not increase; (policy, lr) or None."""
    while lr >= 1e-14:
        trial = [p - lr * (a / c1) / (np.sqrt(b / c2) + tiny) for p, a, b in zip(params, m1, m2)]
        if all(np.all(np.isfinite(p)) for p in trial):
            cand = policy.with_params(trial)
            new_loss = loss_and_grad(cand, data, need_grad=False)[0]
            if np.isfinite(new_loss) and new_loss <= loss:
                return (cand, lr), new_loss
        lr *= 0.5
    return None, None


def train_policy(data: RegressionSet, epochs=200, step_size=1e-2, seed=0, hidden=DEFAULT_HIDDEN,
                 action_std=DEFAULT_ACTION_STD, init: GlobalPolicy | None = None) -> TrainingResult:
    """Full-batch Adam with backtracking: a step that raises the loss is rejected
    and the step size halved, so the recorded loss never increases."""
    if len(data) == 0:
        raise InvalidInputError("empty regression set")
    if init is None:
        mean, scale = _normalizer(data.X)
        policy = GlobalPolicy.init(data.X.shape[1], data.targets.shape[1], hidden, seed, action_std, mean, scale)
    else:
        policy = init
    loss, grads = loss_and_grad(policy, data)
    if not np.isfinite(loss):
        raise TrainingDivergedError("initial regression loss is not finite", float("nan"))
    losses = [loss]
    params = [p.copy() for p in policy.params]
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    beta1, beta2, tiny = 0.9, 0.999, 1e-8
    lr = step_size
    age = 0                                  # steps since the moments were last reset
    for epoch in range(1, epochs + 1):
        while True:
            age += 1
            m1 = [beta1 * a + (1 - beta1) * g for a, g in zip(m1, grads)]
            m2 = [beta2 * a + (1 - beta2) * g * g for a, g in zip(m2, grads)]
            c1, c2 = 1 - beta1**age, 1 - beta2**age
            cand, new_loss = _backtrack(policy, data, params, m1, m2, c1, c2, lr, loss, tiny)
            if cand is not None:
                break
            if age == 1:
                # even a fresh normalized-gradient step failed: at a stationary point
                return TrainingResult(policy, losses, 0.0)
            # stale momentum no longer points downhill; restart the moments
            m1 = [np.zeros_like(p) for p in params]
            m2 = [np.zeros_like(p) for p in params]
            age = 0
        policy, lr = cand
        params = policy.params
        loss, grads = loss_and_grad(policy, data)
        losses.append(loss)
        lr = min(step_size, 2.0 * lr)
    return TrainingResult(policy, losses, lr)


# --- coupling penalty -------------------------------------------------------------

def _gauss_kl(mu_p, cov_p, mu_q, cov_q):
    return float(kl_gaussian_arrays(mu_p, cov_p, mu_q, cov_q))


class PolicyPenalty:
    """Quadratic surrogate for nu * KL(p_j(u|x) || pi(u|x)), with pi's mean
    linearized about reference states (one per step)."""

    def __init__(self, policy: GlobalPolicy | None, nu: float, ref_states=None):
        if nu < 0:
            raise InvalidInputError("nu must be nonnegative")
        self.policy = policy
        self.nu = float(nu)
        self.active = policy is not None and self.nu > 0
        if self.active:
            ref = np.asarray(ref_states, dtype=float)
            self.ref_states = ref
            self.J = np.stack([policy.jacobian(x) for x in ref])                    # (T, m, n)
            self.offset = policy.mean(ref) - np.einsum("tij,tj->ti", self.J, ref)   # (T, m)
            self.precision = np.diag(1.0 / policy.action_std**2)

    def __call__(self, cost: QuadraticCost) -> QuadraticCost:
        if not self.active:
            return cost
        T = cost.horizon
        prec = np.broadcast_to(self.precision, (T,) + self.precision.shape)
        pen = neg_log_policy_cost(self.J, self.offset, prec, cost.Q.shape[1])
        return (cost + self.nu * pen) * (1.0 / (1.0 + self.nu))

    def approx_kl(self, ctrl: TVLGController, t, x) -> float:
        mu_pi = self.J[t] @ x + self.offset[t]
        return _gauss_kl(ctrl.mean_action(t, x), ctrl.C[t], mu_pi, self.policy.covariance)

    def direct_kl(self, ctrl: TVLGController, t, x) -> float:
        return _gauss_kl(ctrl.mean_action(t, x), ctrl.C[t], self.policy.mean(x), self.policy.covariance)


def policy_kl_penalty(policy, nu, ref_states=None) -> PolicyPenalty:
    return PolicyPenalty(policy, nu, ref_states)
