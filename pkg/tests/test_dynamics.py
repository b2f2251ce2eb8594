import numpy as np
import pytest

from helpers import linear_rollouts
from objgps.dynamics import SampleBatch, fit_dynamics, fit_residual_noise, prediction_residuals
from objgps.errors import InvalidInputError
from objgps.gaussian import JITTER
from objgps.trajectory import Trajectory


def test_recovers_scalar_system(rng):
    batch = linear_rollouts(rng, np.array([[0.9]]), np.array([[0.1]]), 5, 4)
    dyn = fit_dynamics(batch, ridge=1e-9)
    assert np.allclose(dyn.Fx[:, 0, 0], 0.9, atol=1e-6)
    assert np.allclose(dyn.Fu[:, 0, 0], 0.1, atol=1e-6)
    assert np.allclose(dyn.fc, 0.0, atol=1e-6)
    assert np.all(dyn.Cd <= 1.0001 * JITTER)


def test_constant_system(rng):
    trajs = [Trajectory(np.vstack([rng.standard_normal((1, 2)), np.zeros((3, 2))]), rng.standard_normal((3, 1)))
             for _ in range(6)]
    dyn = fit_dynamics(SampleBatch(tuple(trajs)))
    assert np.allclose(dyn.Fx[1:], 0, atol=1e-6) and np.allclose(dyn.Fu, 0, atol=1e-6)
    assert np.allclose(dyn.fc, 0, atol=1e-6) and np.allclose(dyn.Cd, JITTER * np.eye(2))


def test_single_sample_with_ridge(rng):
    batch = linear_rollouts(rng, np.eye(2), np.ones((2, 1)), 1, 3)
    dyn = fit_dynamics(batch, ridge=1e-3)
    assert all(np.all(np.isfinite(a)) for a in (dyn.Fx, dyn.Fu, dyn.fc, dyn.Cd))
    with pytest.raises(InvalidInputError):
        fit_dynamics(batch, ridge=0.0)


def test_rejects_non_finite():
    bad = Trajectory.__new__(Trajectory)
    object.__setattr__(bad, "states", np.array([[0.0], [np.nan]]))
    object.__setattr__(bad, "actions", np.array([[0.0]]))
    with pytest.raises(InvalidInputError):
        fit_dynamics(SampleBatch((bad,)))


def test_residual_noise_variance(rng):
    sigma = 0.01
    batch = linear_rollouts(rng, np.array([[0.8, 0.1], [0.0, 0.9]]), np.array([[0.0], [1.0]]), 200, 3, noise=sigma)
    dyn = fit_dynamics(batch)
    var = np.diagonal(dyn.Cd, axis1=1, axis2=2)
    assert np.all(np.abs(var - sigma**2) < 0.3 * sigma**2)
    r = prediction_residuals(batch, dyn)
    se = r.std(axis=0) / np.sqrt(r.shape[0])
    assert np.all(np.abs(r.mean(axis=0)) < 3 * se + 1e-12)


def test_noise_free_residual_at_floor(rng):
    batch = linear_rollouts(rng, np.eye(2), np.eye(2), 10, 2)
    dyn = fit_dynamics(batch, ridge=1e-12)
    assert np.all(np.linalg.eigvalsh(fit_residual_noise(batch, dyn)) <= 1.0001 * JITTER)


def test_ridge_shrinks_coefficients(rng):
    batch = linear_rollouts(rng, np.array([[0.9, 0.2], [0.1, 0.7]]), np.array([[0.5], [1.0]]), 8, 3, noise=0.05)
    norms = []
    for lam in [1e-6, 1e-2, 1.0, 10.0, 100.0]:
        d = fit_dynamics(batch, lam)
        norms.append(np.linalg.norm(np.concatenate([d.Fx, d.Fu, d.fc[..., None]], axis=2), axis=(1, 2)))
    assert np.all(np.diff(np.array(norms), axis=0) < 0)


def test_held_out_prediction_within_three_sigma(rng):
    A, B = np.array([[0.95, 0.1], [0.0, 0.9]]), np.array([[0.0], [0.5]])
    sigma = 0.01
    dyn = fit_dynamics(linear_rollouts(rng, A, B, 100, 4, noise=sigma))
    held = linear_rollouts(rng, A, B, 50, 4, noise=sigma)
    r = prediction_residuals(held, dyn)
    sd = np.sqrt(np.diagonal(dyn.Cd, axis1=1, axis2=2))
    assert np.mean(np.abs(r) < 3 * sd[None]) > 0.98
