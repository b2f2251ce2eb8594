"""Variational correspondence weights between demonstrations and controllers.

Arrays are indexed ``[demo i, controller j, step t]``. The pair (a, b) splits
the controller weights w (``a.sum(0) == w``) and the demonstration weights v
(``b.sum(1) == v``) and parameterizes an upper bound on the KL divergence
between the controller mixture and the demonstration mixture at every step.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
_TINY = np.finfo(float).tiny


class FallbackWarning(RuntimeWarning):
    """A degenerate normalizer was replaced by a uniform split."""


def _check_simplex_weights(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or np.any(x <= 0) or abs(x.sum() - 1.0) > 1e-9:
        raise InvalidInputError(f"{name} must be a positive vector summing to 1")
    return x


def _update_b(a, v):
    rows = a.sum(axis=1, keepdims=True)                      # (D, 1, T)
    bad = rows[:, 0, :] <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        b = v[:, None, None] * (a / rows)
    if bad.any():
        i, t = np.nonzero(bad)
        b[i, :, t] = v[i, None] / a.shape[1]
    return b, bad


def _update_a(b, w, kl):
    with np.errstate(divide="ignore"):
        logits = np.log(b) - kl
    norm = logsumexp(logits, axis=0, keepdims=True)           # (1, C, T)
    bad = ~np.isfinite(norm[0])
    with np.errstate(invalid="ignore"):
        a = w[None, :, None] * np.exp(logits - norm)
    # subnormal weights would underflow to b = 0 on the next b update
    a[a < _TINY] = 0.0
    if bad.any():
        j, t = np.nonzero(bad)
        a[:, j, t] = w[j] / a.shape[0]
    return a, bad


def update_b(a, v):
    """b_ij = v_i a_ij / sum_j' a_ij' at each step."""
    a = np.asarray(a, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(a < 0):
        raise InvalidInputError("a must be nonnegative")
    b, bad = _update_b(a, v)
    if bad.any():
        warnings.warn(f"{int(bad.sum())} zero row sums in a; used uniform rows", FallbackWarning)
    return b


def update_a(b, w, kl):
    """a_ij = w_j b_ij exp(-kl_ij) / sum_i' b_i'j exp(-kl_i'j) at each step."""
    b = np.asarray(b, dtype=float)
    kl = np.asarray(kl, dtype=float)
    w = _check_simplex_weights(w, "w")
    if np.any(b < 0):
        raise InvalidInputError("b must be nonnegative")
    a, bad = _update_a(b, w, kl)
    if bad.any():
        warnings.warn(f"{int(bad.sum())} empty columns after exponentiation; used uniform columns",
                      FallbackWarning)
    return a


def variational_bound(a, b, kl) -> float:
    """sum a*kl + sum a*log(a/b), with 0*log(0/.) = 0 and +inf where b = 0 < a."""
    a, b, kl = (np.asarray(x, dtype=float) for x in (a, b, kl))
    if np.any((b <= 0) & (a > 0)):
        return float("inf")
    pos = a > 0
    return float(np.sum(a * kl, where=pos) + np.sum(a[pos] * np.log(a[pos] / b[pos])))


@dataclass
class Assignment:
    a: np.ndarray
    b: np.ndarray
    bound: float
    iterations: int
    converged: bool
    fallback: bool = False
    bound_trace: list = field(default_factory=list)

    def check(self, w, v, tol=1e-9):
        return (np.allclose(self.a.sum(axis=0), np.asarray(w)[:, None], atol=tol, rtol=0)
                and np.allclose(self.b.sum(axis=1), np.asarray(v)[:, None], atol=tol, rtol=0))

    def demo_mass(self, j):
        """Share of controller j's correspondence mass on each demonstration, summed over time."""
        col = self.a[:, j, :].sum(axis=1)
        return col / col.sum()


def assign_weights(kl, w, v, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> Assignment:
    """Alternate the closed-form b and a updates from a = outer(v, w) until a stops moving.

    ``bound_trace`` records the bound after every half step; it never increases.
    """
    kl = np.asarray(kl, dtype=float)
    if kl.ndim != 3:
        raise InvalidInputError("kl must have shape (D, C, T)")
    D, C, T = kl.shape
    w = _check_simplex_weights(w, "w")
    v = _check_simplex_weights(v, "v")
    if w.shape != (C,) or v.shape != (D,):
        raise InvalidInputError("weight vectors do not match the KL array")
    if tol <= 0 or max_iter < 1:
        raise InvalidInputError("need tol > 0 and max_iter >= 1")
    if np.any(kl < 0) or np.any(np.isnan(kl)):
        raise InvalidInputError("kl entries must be nonnegative")

    a = np.broadcast_to(v[:, None, None] * w[None, :, None], (D, C, T)).copy()
    fallback = False
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        b, bad_b = _update_b(a, v)
        trace.append(variational_bound(a, b, kl))
        a_new, bad_a = _update_a(b, w, kl)
        trace.append(variational_bound(a_new, b, kl))
        fallback |= bool(bad_b.any() or bad_a.any())
        change = np.max(np.abs(a_new - a))
        a = a_new
        if change < tol:
            converged = True
            break
    return Assignment(a, b, trace[-1], it, converged, fallback, trace)
