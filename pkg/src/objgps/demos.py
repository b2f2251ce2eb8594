"""Object-centric demonstration recordings and the Gaussian demonstration mixture."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError
from .gaussian import kl_gaussian_arrays

DEFAULT_SIGMA = 0.01


@dataclass(frozen=True, eq=False)
class DemoRecording:
    id: str
    times: np.ndarray     # (S,)
    states: np.ndarray    # (S, d)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if times.size < 2:
            raise InvalidInputError(f"demo {self.id!r} needs at least 2 samples")
        if states.shape[0] != times.size:
            raise InvalidInputError(f"demo {self.id!r}: {times.size} times but {states.shape[0]} states")
        if np.any(np.diff(times) <= 0):
            raise InvalidInputError(f"demo {self.id!r}: times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(states))):
            raise InvalidInputError(f"demo {self.id!r}: non-finite values")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def load_demos(path) -> list[DemoRecording]:
    """Read the demo CSV (``demo_id,time,<coords...>``), grouping rows by id.

    Ids keep their order of first appearance; rows within an id are sorted by time.
    """
    path = Path(path)
    rows: dict[str, list] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", line=1)
        if len(header) < 3 or header[0].strip() != "demo_id" or header[1].strip() != "time":
            raise ParseError("header must start with demo_id,time and name at least one coordinate", line=1)
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} columns, got {len(row)}", line=lineno)
            try:
                values = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not all(np.isfinite(values)):
                raise ParseError("non-finite value", line=lineno)
            rows.setdefault(row[0].strip(), []).append((values[0], values[1:], lineno))

    recs = []
    for demo_id, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        for prev, cur in zip(entries, entries[1:]):
            if cur[0] <= prev[0]:
                raise ParseError(f"demo {demo_id!r}: non-increasing time {cur[0]}", line=cur[2])
        if len(entries) < 2:
            raise ParseError(f"demo {demo_id!r} has fewer than 2 samples", line=entries[0][2])
        recs.append(DemoRecording(demo_id, [e[0] for e in entries], [e[1] for e in entries]))
    return recs


def write_demos(recs, path, coord_names=None):
    path = Path(path)
    dim = recs[0].dim
    names = coord_names or [f"x{k}" for k in range(dim)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["demo_id", "time", *names])
        for rec in recs:
            for t, x in zip(rec.times, rec.states):
                w.writerow([rec.id, repr(float(t)), *(repr(float(v)) for v in x)])


def resample_to_horizon(rec: DemoRecording, T: int, dt: float) -> np.ndarray:
    """Linear interpolation at times dt, 2 dt, ..., T dt; holds the end samples outside the record."""
    if T < 1 or dt <= 0:
        raise InvalidInputError("need T >= 1 and dt > 0")
    query = dt * np.arange(1, T + 1)
    return np.stack([np.interp(query, rec.times, rec.states[:, d]) for d in range(rec.dim)], axis=1)


@dataclass(frozen=True, eq=False)
class DemoMixture:
    """Demonstration i is N(means[i, t], diag(sigma[i]**2)) at each step t = 1..T."""

    ids: tuple
    means: np.ndarray     # (D, T, d)
    sigma: np.ndarray     # (D, d)
    weights: np.ndarray   # (D,)

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        D = means.shape[0]
        if sigma.shape != (D, means.shape[2]) or weights.shape != (D,):
            raise InvalidInputError("mixture shapes disagree")
        if np.any(sigma <= 0) or np.any(weights <= 0):
            raise InvalidInputError("sigma and weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidInputError("mixture weights must sum to 1")
        if not np.all(np.isfinite(means)):
            raise InvalidInputError("non-finite demo means")
        for name, a in (("means", means), ("sigma", sigma), ("weights", weights)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def n_demos(self) -> int:
        return self.means.shape[0]

    @property
    def horizon(self) -> int:
        return self.means.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    def covs(self) -> np.ndarray:
        """(D, d, d) diagonal tracking covariances."""
        return np.stack([np.diag(s**2) for s in self.sigma])

    def kl_from(self, obj_mean, obj_cov) -> np.ndarray:
        """KL(N(obj_mean[t], obj_cov[t]) || d_i at t) as a (D, T) array.

        ``obj_mean``/``obj_cov`` cover steps 1..T (shape (T, d) / (T, d, d)).
        """
        covs = self.covs()[:, None]
        return kl_gaussian_arrays(obj_mean[None], obj_cov[None], self.means, covs)

    def cost(self, obj_states, demo) -> float:
        """Summed tracking cost of object states x_1..x_T against one demonstration."""
        r = (np.asarray(obj_states) - self.means[demo]) / self.sigma[demo]
        return 0.5 * float(np.sum(r * r))

    def subset(self, keep) -> "DemoMixture":
        keep = list(keep)
        w = self.weights[keep]
        return DemoMixture(tuple(self.ids[i] for i in keep), self.means[keep], self.sigma[keep], w / w.sum())


def build_mixture(recs, T, dt, sigma=DEFAULT_SIGMA, weights=None) -> DemoMixture:
    if not recs:
        raise InvalidInputError("no demonstrations given")
    dim = recs[0].dim
    if any(r.dim != dim for r in recs):
        raise InvalidInputError("demonstrations have different dimensions")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (dim,))
    if np.any(sigma <= 0):
        raise InvalidInputError("sigma must be positive")
    if weights is None:
        weights = np.full(len(recs), 1.0 / len(recs))
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(recs),) or np.any(weights <= 0):
            raise InvalidInputError("need one positive weight per demonstration")
        weights = weights / weights.sum()
    means = np.stack([resample_to_horizon(r, T, dt) for r in recs])
    return DemoMixture(tuple(r.id for r in recs), means, np.tile(sigma, (len(recs), 1)), weights)
