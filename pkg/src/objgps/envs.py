"""Simulated manipulation analogs with an object-centric state split.

Three kinds are provided:

``linear``
    x' = A x + B u_eff, configured through ``params["A"]`` / ``params["B"]``.
``bead_push``
    Abacus analog. State ``[f1, f2, h, b1, b2, b3]``: two velocity-controlled
    fingers moving along the rails, the lateral hand offset ``h`` (constant
    within an episode) and three bead displacements. Finger k sits laterally at
    ``h + finger_offsets[k]``; bead i lives on the rail at ``rail_y[i]``. A
    finger engages a rail through a smooth lateral window of half-width
    ``radius`` and pushes its bead forward with a softplus penetration force
    (overdamped, so bead speed is proportional to force). The object-centric
    part is the three bead displacements.
``valve_turn``
    Valve analog. State ``[p1, p2, w, theta]``: two velocity-controlled
    fingertip displacements tangential to the lever, the wrist offset ``w``
    (constant within an episode) and the lever angle. Fingertip k touches the
    lever at radius ``w + finger_offsets[k]`` when that radius lies on the
    lever ``(0, lever_length)``, and drags it through a saturating tangential
    spring. The object-centric part is the lever angle.

Commands pass through ``limit * tanh(u / limit)`` before acting.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.special import expit

from .demos import DemoRecording
from .errors import InvalidInputError
from .trajectory import StateLayout, Trajectory

DEFAULT_DT = 0.2
DEFAULT_HORIZON = 50
DEFAULT_NOISE = 1e-3

BEAD_TARGET = 8.4
VALVE_TARGET = np.deg2rad(35.0)


@dataclass(frozen=True, eq=False)
class EnvSpec:
    kind: str
    layout: StateLayout
    dt: float = DEFAULT_DT
    squash_limit: float = 1.0
    noise_scale: float = DEFAULT_NOISE
    catalog: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    init_perturbation: float = 0.0
    static_indices: tuple = ()

    def __post_init__(self):
        if self.kind not in _TRANSITIONS:
            raise InvalidInputError(f"unknown environment kind {self.kind!r}")
        if self.dt <= 0 or self.squash_limit <= 0:
            raise InvalidInputError("dt and squash_limit must be positive")
        if self.noise_scale < 0 or self.init_perturbation < 0:
            raise InvalidInputError("noise scales must be nonnegative")
        if not self.catalog:
            raise InvalidInputError("initial-condition catalog is empty")
        catalog = {}
        for name, x in self.catalog.items():
            x = np.asarray(x, dtype=float)
            if x.shape != (self.layout.total_dim,) or not np.all(np.isfinite(x)):
                raise InvalidInputError(f"catalog state {name!r} has the wrong shape or is not finite")
            x.setflags(write=False)
            catalog[name] = x
        object.__setattr__(self, "catalog", catalog)
        object.__setattr__(self, "static_indices", tuple(int(i) for i in self.static_indices))

    @property
    def horizon(self) -> int:
        return self.layout.horizon

    @property
    def noisy_mask(self) -> np.ndarray:
        mask = np.ones(self.layout.total_dim)
        mask[list(self.static_indices)] = 0.0
        return mask

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "horizon": self.layout.horizon,
            "dt": self.dt,
            "squash_limit": self.squash_limit,
            "noise_scale": self.noise_scale,
            "init_perturbation": self.init_perturbation,
            "params": {k: np.asarray(v).tolist() for k, v in self.params.items()},
            "catalog": {k: v.tolist() for k, v in self.catalog.items()},
        }


@dataclass(frozen=True, eq=False)
class EnvState:
    x: np.ndarray
    t: int = 0

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("non-finite environment state")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)


def squash(u, limit):
    return limit * np.tanh(np.asarray(u, dtype=float) / limit)


def _linear(spec, x, u):
    A = np.asarray(spec.params["A"], dtype=float)
    B = np.asarray(spec.params["B"], dtype=float)
    return A @ x + B @ u


def _softplus(z):
    return np.logaddexp(0.0, z)


def _bead_push(spec, x, u):
    p = spec.params
    dt = spec.dt
    fingers, h, beads = x[0:2], x[2], x[3:6]
    finger_y = h + np.asarray(p["finger_offsets"])
    rail_y = np.asarray(p["rail_y"])
    dy = finger_y[:, None] - rail_y[None, :]                   # (finger, bead)
    lateral = np.sqrt(dy**2 + 1e-4)
    engage = expit((p["radius"] - lateral) / p["lateral_softness"])
    s = p["contact_softness"]
    pen = (fingers[:, None] - beads[None, :] + p["contact_halfwidth"]) / s
    force = p["stiffness"] * s * _softplus(pen) * engage
    new = x.copy()
    new[0:2] = fingers + dt * u
    new[3:6] = beads + dt * force.sum(axis=0)
    return new


def _valve_turn(spec, x, u):
    p = spec.params
    dt = spec.dt
    tips, w, theta = x[0:2], x[2], x[3]
    radius = w + np.asarray(p["finger_offsets"])
    s = p["reach_softness"]
    on_lever = expit(radius / s) * expit((p["lever_length"] - radius) / s)
    f0 = p["force_scale"]
    force = f0 * np.tanh((tips - radius * theta) / f0)
    torque = p["coupling"] * np.sum(on_lever * radius * force)
    new = x.copy()
    new[0:2] = tips + dt * u
    new[3] = theta + dt * torque
    return new


_TRANSITIONS = {"linear": _linear, "bead_push": _bead_push, "valve_turn": _valve_turn}


def transition(spec: EnvSpec, x, u_eff):
    """Noise-free state update for an already-squashed command."""
    return _TRANSITIONS[spec.kind](spec, np.asarray(x, dtype=float), np.asarray(u_eff, dtype=float))


def reset(spec: EnvSpec, init_id: str, seed=None) -> EnvState:
    if init_id not in spec.catalog:
        raise InvalidInputError(f"unknown initial condition {init_id!r}; known: {sorted(spec.catalog)}")
    x = spec.catalog[init_id].copy()
    if spec.init_perturbation > 0:
        rng = np.random.default_rng(seed)
        x = x + spec.init_perturbation * spec.noisy_mask * rng.standard_normal(x.shape)
    return EnvState(x, 0)


def step(spec: EnvSpec, s: EnvState, u, seed=None, noise=None) -> EnvState:
    """Advance one step. Process noise comes from ``noise`` (standard normal,
    shape (n,)) when given, otherwise it is drawn from ``seed``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.layout.control_dim,) or not np.all(np.isfinite(u)):
        raise InvalidInputError("command has the wrong shape or is not finite")
    x_next = transition(spec, s.x, squash(u, spec.squash_limit))
    if spec.noise_scale > 0:
        if noise is None:
            noise = np.random.default_rng(seed).standard_normal(x_next.shape)
        x_next = x_next + spec.noise_scale * spec.noisy_mask * noise
    return EnvState(x_next, s.t + 1)


def smooth_noise(noise, window):
    """Temporally correlate white noise with a Gaussian filter, keeping unit variance."""
    if not window:
        return noise
    impulse = np.zeros(8 * int(np.ceil(window)) + 1)
    impulse[impulse.size // 2] = 1.0
    gain = np.sqrt(np.sum(gaussian_filter1d(impulse, window, mode="constant") ** 2))
    return gaussian_filter1d(noise, window, axis=0, mode="nearest") / gain


def rollout(spec: EnvSpec, actor, init_id: str, T: int | None = None, seed=None,
            noise_smoothing_window: float = 0.0) -> Trajectory:
    """Run ``actor.act(t, x, noise)`` for T steps; fully determined by ``seed``."""
    T = spec.horizon if T is None else T
    if T != spec.horizon:
        raise InvalidInputError(f"rollout length {T} differs from the environment horizon {spec.horizon}")
    rng = np.random.default_rng(seed)
    n, m = spec.layout.total_dim, spec.layout.control_dim
    reset_seed, action_noise, process_noise = rng.integers(2**63), rng.standard_normal((T, m)), rng.standard_normal((T, n))
    action_noise = smooth_noise(action_noise, noise_smoothing_window)
    s = reset(spec, init_id, reset_seed)
    states = [s.x]
    actions = []
    for t in range(T):
        u = np.asarray(actor.act(t, s.x, action_noise[t]), dtype=float)
        s = step(spec, s, u, noise=process_noise[t])
        states.append(s.x)
        actions.append(u)
    return Trajectory(np.array(states), np.array(actions))


class ScriptedActor:
    """Replays a fixed action sequence (used for baselines and tests)."""

    def __init__(self, actions):
        self.actions = np.asarray(actions, dtype=float)

    def act(self, t, x, noise):
        return self.actions[t]


# --- factories -----------------------------------------------------------------

BEAD_PARAMS = {
    "rail_y": [0.0, 1.0, 2.0],
    "finger_offsets": [0.0, 1.0],
    "radius": 0.3,
    "lateral_softness": 0.05,
    "contact_halfwidth": 0.2,
    "contact_softness": 0.02,
    "stiffness": 2.5,
}

VALVE_PARAMS = {
    "finger_offsets": [0.0, 0.6],
    "lever_length": 1.2,
    "reach_softness": 0.05,
    "force_scale": 0.2,
    "coupling": 4.0,
}


def bead_state(h, fingers=(-0.3, -0.3), beads=(0.0, 0.0, 0.0)):
    return [fingers[0], fingers[1], h, *beads]


def valve_state(w, tips=(0.0, 0.0), theta=0.0):
    return [tips[0], tips[1], w, theta]


def make_env(kind: str, horizon: int = DEFAULT_HORIZON, dt: float = DEFAULT_DT, noise_scale: float = DEFAULT_NOISE,
             squash_limit: float | None = None, init_perturbation: float = 0.0, params: dict | None = None,
             catalog: dict | None = None) -> EnvSpec:
    """Environment with the default parameters and catalog for ``kind``; any field may be overridden."""
    if kind == "linear":
        base = {"A": [[1.0, dt], [0.0, 0.9]], "B": [[0.0], [dt]]}
        n = len(base["A"]) if params is None or "A" not in params else len(params["A"])
        m = 1 if params is None or "B" not in params else len(params["B"][0])
        default_catalog = {"origin": [0.0] * n, "offset": [1.0] + [0.0] * (n - 1)}
        layout = StateLayout(n, (0,), m, horizon)
        limit, static = 1.0, ()
    elif kind == "bead_push":
        base = dict(BEAD_PARAMS)
        default_catalog = {"pos1": bead_state(0.0), "pos2": bead_state(1.0), "pos3": bead_state(-1.0)}
        layout = StateLayout(6, (3, 4, 5), 2, horizon)
        limit, static = 3.0, (2,)
    elif kind == "valve_turn":
        base = dict(VALVE_PARAMS)
        default_catalog = {
            "pos1": valve_state(0.2), "pos2": valve_state(0.5), "pos3": valve_state(0.8),
            "pos12": valve_state(0.35), "pos23": valve_state(0.65),
        }
        layout = StateLayout(4, (3,), 2, horizon)
        limit, static = 0.5, (2,)
    else:
        raise InvalidInputError(f"unknown environment kind {kind!r}")
    if params:
        base.update(params)
    return EnvSpec(kind, layout, dt, limit if squash_limit is None else squash_limit, noise_scale,
                   catalog or default_catalog, base, init_perturbation, static)


def env_from_dict(d: dict) -> EnvSpec:
    d = dict(d)
    kind = d.pop("kind")
    allowed = {"horizon", "dt", "noise_scale", "squash_limit", "init_perturbation", "params", "catalog"}
    unknown = set(d) - allowed
    if unknown:
        raise InvalidInputError(f"unknown env keys: {sorted(unknown)}")
    return make_env(kind, **d)


# --- scripted demonstrations -----------------------------------------------------

def smooth_ramp(times, total, rise_time):
    """0 -> total with a smoothstep profile over [0, rise_time], then hold."""
    s = np.clip(np.asarray(times) / rise_time, 0.0, 1.0)
    return total * s * s * (3.0 - 2.0 * s)


def scripted_demos(kind: str, horizon: int = DEFAULT_HORIZON, dt: float = DEFAULT_DT, rate: float = 10.0):
    """Ideal object-centric trajectories for ``kind``, sampled at ``rate`` Hz.

    Returns ``(recordings, coordinate_names)``.
    """
    duration = horizon * dt
    times = np.arange(0.0, duration + 1e-9, 1.0 / rate)
    rise = 0.8 * duration
    if kind == "bead_push":
        ramp = smooth_ramp(times, BEAD_TARGET, rise)
        zero = np.zeros_like(times)
        recs = [
            DemoRecording("bead1", times, np.stack([ramp, zero, zero], axis=1)),
            DemoRecording("bead3", times, np.stack([zero, zero, ramp], axis=1)),
        ]
        return recs, ["bead1", "bead2", "bead3"]
    if kind == "valve_turn":
        ramp = smooth_ramp(times, VALVE_TARGET, rise)
        recs = [
            DemoRecording("ccw", times, ramp[:, None]),
            DemoRecording("cw", times, -ramp[:, None]),
        ]
        return recs, ["lever_angle"]
    if kind == "linear":
        recs = [DemoRecording("reach", times, smooth_ramp(times, 1.0, rise)[:, None])]
        return recs, ["x0"]
    raise InvalidInputError(f"unknown environment kind {kind!r}")
