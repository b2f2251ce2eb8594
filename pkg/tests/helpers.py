"""Shared problem generators for tests."""
import numpy as np
from scipy.optimize import minimize

from objgps.dynamics import SampleBatch
from objgps.gaussian import Gaussian, TVLGController, TVLinearDynamics
from objgps.policy import GlobalPolicy, RegressionSet, loss_and_grad
from objgps.trajectory import Trajectory
from objgps.trajopt import QuadraticCost


def random_dynamics(rng, T, n, m, noise=0.0):
    Fx = np.eye(n) + 0.3 * rng.standard_normal((T, n, n))
    Fu = rng.standard_normal((T, n, m))
    fc = 0.1 * rng.standard_normal((T, n))
    Cd = np.tile(np.eye(n) * max(noise, 1e-9), (T, 1, 1))
    return TVLinearDynamics(Fx, Fu, fc, Cd)


def random_psd(rng, n, rank=None):
    A = rng.standard_normal((n, rank or n))
    return A @ A.T


def random_cost(rng, T, n, m, action_weight=1.0):
    Q = np.stack([random_psd(rng, n) for _ in range(T + 1)])
    q = rng.standard_normal((T + 1, n))
    R = np.stack([random_psd(rng, m) + action_weight * np.eye(m) for _ in range(T)])
    r = rng.standard_normal((T, m))
    return QuadraticCost(Q, q, R, r, np.zeros((T, m, n)), np.zeros(T + 1))


def open_loop_states(dyn, x0, U):
    xs = [np.asarray(x0, float)]
    for t in range(dyn.horizon):
        xs.append(dyn.Fx[t] @ xs[-1] + dyn.Fu[t] @ U[t] + dyn.fc[t])
    return np.array(xs)


def controller_plan(dyn, ctrl, x0):
    """Actions and states obtained by running the controller mean without noise."""
    xs, us = [np.asarray(x0, float)], []
    for t in range(dyn.horizon):
        us.append(ctrl.mean_action(t, xs[-1]))
        xs.append(dyn.Fx[t] @ xs[-1] + dyn.Fu[t] @ us[-1] + dyn.fc[t])
    return np.array(xs), np.array(us)


def brute_force_plan(dyn, cost, x0):
    """Minimize the summed quadratic over all T*m open-loop actions with BFGS."""
    T, m = dyn.horizon, dyn.control_dim

    def f(flat):
        U = flat.reshape(T, m)
        return cost.evaluate(open_loop_states(dyn, x0, U), U)

    res = minimize(f, np.zeros(T * m), method="BFGS", options={"gtol": 1e-10, "maxiter": 10000})
    return res.x.reshape(T, m), res.fun


def linear_rollouts(rng, A, B, N, T, noise=0.0, x_scale=1.0, u_scale=1.0):
    """Rollouts of x' = A x + B u (+ noise) under random exploratory actions."""
    n, m = B.shape
    trajs = []
    for _ in range(N):
        x = x_scale * rng.standard_normal(n)
        xs, us = [x], []
        for _t in range(T):
            u = u_scale * rng.standard_normal(m)
            x = A @ x + B @ u + noise * rng.standard_normal(n)
            xs.append(x)
            us.append(u)
        trajs.append(Trajectory(np.array(xs), np.array(us)))
    return SampleBatch(tuple(trajs))


def random_controller(rng, T, n, m, std=1.0):
    return TVLGController(0.1 * rng.standard_normal((T, m, n)), 0.1 * rng.standard_normal((T, m)),
                          np.tile(np.eye(m) * std**2, (T, 1, 1)))


def trust_problem(rng, T=5, n=2, m=1):
    dyn = random_dynamics(rng, T, n, m, noise=0.01)
    cost = random_cost(rng, T, n, m) * 10.0
    prev = TVLGController.initial(T, n, m, 1.0)
    return dyn, cost, prev, Gaussian(np.zeros(n), 0.1 * np.eye(n))


def random_set(rng, N, n, m):
    X = rng.standard_normal((N, n))
    Y = rng.standard_normal((N, m))
    P = np.stack([np.eye(m) + 0.2 * np.outer(v, v) for v in rng.standard_normal((N, m))])
    return RegressionSet(X, Y, P)


def random_policy(rng, n, m, hidden):
    pol = GlobalPolicy.init(n, m, hidden, seed=int(rng.integers(1 << 30)),
                            x_mean=rng.standard_normal(n), x_scale=rng.uniform(0.5, 2, n))
    params = [p + 0.3 * rng.standard_normal(p.shape) for p in pol.params]
    return pol.with_params(params)


def fd_gradient(pol, data, h=1e-6):
    grads = []
    params = pol.params
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (loss_and_grad(pol.with_params(plus), data, False)[0]
                      - loss_and_grad(pol.with_params(minus), data, False)[0]) / (2 * h)
        grads.append(g)
    return grads
