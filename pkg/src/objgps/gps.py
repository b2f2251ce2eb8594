"""Guided policy search with demonstration selection.

Each outer iteration: sample every controller, fit its dynamics, assign
demonstrations to controllers, then (``inner_iterations`` times) re-optimize
every controller under a trust region and distill the global policy.
"""
from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correspondence import assign_weights
from .demos import DemoMixture, build_mixture, load_demos
from .dynamics import SampleBatch, fit_dynamics
from .envs import EnvSpec, env_from_dict, rollout
from .errors import InvalidInputError
from .gaussian import Gaussian, TVLGController, forward_marginals
from .policy import GlobalPolicy, build_regression_set, policy_kl_penalty, train_policy
from .trajopt import TrustRegionConfig, constrained_update, cost_from_demos

log = logging.getLogger(__name__)

CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "env": {"kind": "bead_push"},
    "demos": {"path": "demos.csv", "sigma": 0.01, "weights": None, "ids": None},
    "controllers": {"init_ids": ["pos1"], "weights": None, "init_std": None},
    "samples": 10,
    "iterations": 15,
    "inner_iterations": 1,
    "trust_region": {"epsilon": 1.0, "eta_init": 1.0, "eta_min": 1e-6, "eta_max": 1e16, "max_dgd_iters": 20},
    "ridge": 1e-6,
    "action_reg": 1e-3,
    "correspondence": {"tol": 1e-8, "max_iter": 200},
    "policy": {"hidden": [32, 32], "epochs": 200, "step_size": 0.01, "action_std": 0.05},
    "nu": {"init": 0.01, "growth": 2.0, "max": None},
    "noise_smoothing_window": 0.0,
}

# sub-dicts whose keys are free-form (not checked against the defaults)
_OPEN_SECTIONS = {("env",)}


def merge_config(base, update, path=()):
    """Recursively overlay ``update`` on ``base``; unknown keys are rejected."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        if path in _OPEN_SECTIONS:
            out[key] = copy.deepcopy(value)
            continue
        if key not in out:
            raise InvalidInputError(f"unknown config key {'.'.join((*path, key))!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = merge_config(out[key], value, (*path, key))
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply one ``dotted.key=value`` override; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise InvalidInputError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = cfg
    for i, part in enumerate(parts[:-1]):
        if not isinstance(node, dict) or part not in node:
            raise InvalidInputError(f"override key {key!r} does not exist")
        node = node[part]
    leaf = parts[-1]
    open_section = tuple(parts[:-1]) in _OPEN_SECTIONS or (parts[0] == "env" and len(parts) > 2)
    if not isinstance(node, dict) or (leaf not in node and not open_section):
        raise InvalidInputError(f"override key {key!r} does not exist")
    node[leaf] = value
    return cfg


@dataclass
class ExperimentConfig:
    raw: dict
    env: EnvSpec
    demo_path: Path
    demo_sigma: object
    demo_weights: list | None
    demo_ids: list | None
    init_ids: list
    controller_weights: np.ndarray
    init_std: float
    samples: int
    iterations: int
    inner_iterations: int
    trust_region: TrustRegionConfig
    ridge: float
    action_reg: float
    corr_tol: float
    corr_max_iter: int
    policy_hidden: tuple
    policy_epochs: int
    policy_step_size: float
    policy_action_std: float
    nu_init: float
    nu_growth: float
    nu_max: float
    noise_smoothing_window: float
    seed: int

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        if d.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise InvalidInputError(f"unsupported config version {d.get('version')!r}")
        raw = merge_config(DEFAULT_CONFIG, d)
        env = env_from_dict(raw["env"])
        demo_path = Path(raw["demos"]["path"])
        if base_dir is not None and not demo_path.is_absolute():
            demo_path = Path(base_dir) / demo_path
        raw["demos"]["path"] = str(demo_path)
        ctrl = raw["controllers"]
        init_ids = list(ctrl["init_ids"])
        if not init_ids:
            raise InvalidInputError("need at least one controller init id")
        for i in init_ids:
            if i not in env.catalog:
                raise InvalidInputError(f"init id {i!r} is not in the environment catalog")
        C = len(init_ids)
        w = np.full(C, 1.0 / C) if ctrl["weights"] is None else np.asarray(ctrl["weights"], dtype=float)
        if w.shape != (C,) or np.any(w <= 0):
            raise InvalidInputError("controller weights must be positive, one per init id")
        for key in ("samples", "iterations", "inner_iterations"):
            if int(raw[key]) < 1:
                raise InvalidInputError(f"{key} must be >= 1")
        pol, nu = raw["policy"], raw["nu"]
        return cls(
            raw=raw,
            env=env,
            demo_path=demo_path,
            demo_sigma=raw["demos"]["sigma"],
            demo_weights=raw["demos"]["weights"],
            demo_ids=raw["demos"]["ids"],
            init_ids=init_ids,
            controller_weights=w / w.sum(),
            init_std=0.1 * env.squash_limit if ctrl["init_std"] is None else float(ctrl["init_std"]),
            samples=int(raw["samples"]),
            iterations=int(raw["iterations"]),
            inner_iterations=int(raw["inner_iterations"]),
            trust_region=TrustRegionConfig(**raw["trust_region"]),
            ridge=float(raw["ridge"]),
            action_reg=float(raw["action_reg"]),
            corr_tol=float(raw["correspondence"]["tol"]),
            corr_max_iter=int(raw["correspondence"]["max_iter"]),
            policy_hidden=tuple(int(h) for h in pol["hidden"]),
            policy_epochs=int(pol["epochs"]),
            policy_step_size=float(pol["step_size"]),
            policy_action_std=float(pol["action_std"]),
            nu_init=float(nu["init"]),
            nu_growth=float(nu["growth"]),
            nu_max=float("inf") if nu["max"] is None else float(nu["max"]),
            noise_smoothing_window=float(raw["noise_smoothing_window"]),
            seed=int(raw["seed"]),
        )

    def nu(self, iteration):
        """Policy-coupling weight for 1-based outer iteration ``iteration``."""
        return min(self.nu_init * self.nu_growth ** (iteration - 1), self.nu_max)

    def load_mixture(self) -> DemoMixture:
        recs = load_demos(self.demo_path)
        if self.demo_ids is not None:
            by_id = {r.id: r for r in recs}
            missing = [i for i in self.demo_ids if i not in by_id]
            if missing:
                raise InvalidInputError(f"demo ids not found in {self.demo_path}: {missing}")
            recs = [by_id[i] for i in self.demo_ids]
        return build_mixture(recs, self.env.horizon, self.env.dt, self.demo_sigma, self.demo_weights)


def rollout_seed(master, iteration, controller, sample):
    """Counter-based seed so any single rollout can be replayed in isolation."""
    return [int(master), int(iteration), int(controller), int(sample)]


@dataclass
class ControllerReport:
    init_id: str
    expected_cost_before: float
    expected_cost: float
    sample_cost: float
    kl: float
    eta: float
    status: str
    dominant_demo: int
    dominant_mass: float
    demo_mass: list

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class IterationReport:
    iteration: int
    bound: float
    controllers: list
    policy_loss: float | None
    nu: float
    wall_time: float = 0.0

    def to_dict(self, include_time=False):
        d = {
            "iteration": self.iteration,
            "bound": self.bound,
            "nu": self.nu,
            "policy_loss": self.policy_loss,
            "controllers": [c.to_dict() for c in self.controllers],
        }
        if include_time:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class GPSResult:
    controllers: list
    policy: GlobalPolicy | None
    reports: list = field(default_factory=list)
    assignments: list = field(default_factory=list)
    mixture: DemoMixture | None = None
    batches: list = field(default_factory=list)


class GPSError(RuntimeError):
    """A sub-step failed; ``reports`` holds the iterations completed so far."""

    def __init__(self, message, reports):
        super().__init__(message)
        self.reports = reports


def collect_samples(cfg: ExperimentConfig, controllers, iteration) -> list:
    batches = []
    for j, (ctrl, init_id) in enumerate(zip(controllers, cfg.init_ids)):
        trajs = [rollout(cfg.env, ctrl, init_id, cfg.env.horizon, rollout_seed(cfg.seed, iteration, j, s),
                         cfg.noise_smoothing_window) for s in range(cfg.samples)]
        batches.append(SampleBatch(tuple(trajs), init_id))
    return batches


def run_gps(cfg: ExperimentConfig, mixture: DemoMixture | None = None, on_iteration=None) -> GPSResult:
    mixture = cfg.load_mixture() if mixture is None else mixture
    layout = cfg.env.layout
    if mixture.horizon != layout.horizon or mixture.dim != layout.obj_dim:
        raise InvalidInputError("demonstrations do not match the environment's horizon/object dimension")
    T, n, m = layout.horizon, layout.total_dim, layout.control_dim
    controllers = [TVLGController.initial(T, n, m, cfg.init_std) for _ in cfg.init_ids]
    policy = None
    result = GPSResult(controllers, None, mixture=mixture)

    for k in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        try:
            batches = collect_samples(cfg, controllers, k)
            dyns = [fit_dynamics(b, cfg.ridge) for b in batches]
            inits = [b.initial_gaussian() for b in batches]
            margs = [forward_marginals(d, c, x0, layout) for d, c, x0 in zip(dyns, controllers, inits)]

            # correspondence over steps 1..T
            kl = np.stack([mixture.kl_from(mg.obj_mean[1:], mg.obj_cov[1:]) for mg in margs], axis=1)
            assignment = assign_weights(kl, cfg.controller_weights, mixture.weights, cfg.corr_tol, cfg.corr_max_iter)

            costs = []
            for j in range(len(controllers)):
                c, fallback = cost_from_demos(mixture, assignment.a, j, layout, cfg.action_reg)
                if fallback:
                    log.warning("controller %d: uniform demo weights at steps %s", j, fallback)
                costs.append(c)

            nu = cfg.nu(k)
            steps = [None] * len(controllers)
            policy_loss = None
            for _ in range(cfg.inner_iterations):
                for j, batch in enumerate(batches):
                    ref = batch.states[:, :-1].mean(axis=0)
                    surrogate = policy_kl_penalty(policy, nu, ref)(costs[j])
                    steps[j] = constrained_update(dyns[j], surrogate, controllers[j], cfg.trust_region, inits[j])
                data = build_regression_set(batches, [s.controller for s in steps])
                training = train_policy(data, cfg.policy_epochs, cfg.policy_step_size, seed=cfg.seed,
                                        hidden=cfg.policy_hidden, action_std=cfg.policy_action_std, init=policy)
                policy = training.policy
                policy_loss = training.losses[-1]

            reports = []
            for j, (batch, step) in enumerate(zip(batches, steps)):
                new_marg = forward_marginals(dyns[j], step.controller, inits[j], layout)
                sample_cost = float(np.mean([costs[j].evaluate(tr.states, tr.actions) for tr in batch.trajectories]))
                mass = assignment.demo_mass(j)
                top = int(np.argmax(mass))
                reports.append(ControllerReport(
                    init_id=cfg.init_ids[j],
                    expected_cost_before=costs[j].expected(margs[j]),
                    expected_cost=costs[j].expected(new_marg),
                    sample_cost=sample_cost,
                    kl=step.kl,
                    eta=float(step.eta),
                    status=step.status,
                    dominant_demo=top,
                    dominant_mass=float(mass[top]),
                    demo_mass=[float(x) for x in mass],
                ))
            controllers = [s.controller for s in steps]
        except Exception as exc:
            raise GPSError(f"iteration {k} failed: {exc}", result.reports) from exc

        report = IterationReport(k, assignment.bound, reports, policy_loss, nu, time.perf_counter() - t0)
        result.reports.append(report)
        result.assignments.append(assignment)
        result.controllers = controllers
        result.policy = policy
        result.batches = batches
        log.info("iteration %d: bound %.4g, costs %s", k, assignment.bound,
                 [round(r.expected_cost, 3) for r in reports])
        if on_iteration is not None:
            on_iteration(report, assignment)
    return result


# --- evaluation -------------------------------------------------------------------

class MeanActor:
    """Acts with the mean of a stochastic actor."""

    def __init__(self, actor):
        self.actor = actor

    def act(self, t, x, noise):
        return self.actor.act(t, x, np.zeros_like(noise))


@dataclass
class EvaluationResult:
    init_ids: list
    demo: dict            # init id -> matched demo index
    final_error: dict     # init id -> list over trials
    cost: dict

    def rows(self):
        for init_id in self.init_ids:
            for trial, (e, c) in enumerate(zip(self.final_error[init_id], self.cost[init_id])):
                yield init_id, trial, e, c

    def summary(self):
        return {i: {"mean": float(np.mean(self.final_error[i])), "stddev": float(np.std(self.final_error[i])),
                    "cost_mean": float(np.mean(self.cost[i])), "cost_stddev": float(np.std(self.cost[i]))}
                for i in self.init_ids}


def match_demo(mixture: DemoMixture, final_obj_states) -> int:
    """Demo with the largest final-step correspondence to the empirical final-state distribution."""
    X = np.atleast_2d(final_obj_states)
    cov = np.cov(X, rowvar=False, bias=True) if X.shape[0] > 1 else np.zeros((X.shape[1],) * 2)
    g = Gaussian(X.mean(axis=0), np.atleast_2d(cov) + 1e-9 * np.eye(X.shape[1]))
    kl = mixture.kl_from(g.mean[None], g.cov[None])[:, -1:]          # (D, 1)
    a = assign_weights(kl[:, None, :], np.ones(1), mixture.weights).a[:, 0, 0]
    return int(np.argmax(a))


def evaluate(actor, spec: EnvSpec, init_ids, trials, seed, mixture: DemoMixture, demo=None,
             deterministic=False) -> EvaluationResult:
    """Roll out ``actor`` (one actor, or a dict init id -> actor) ``trials`` times per init id.

    Errors and costs are measured against ``demo`` when given, otherwise against
    the demo with the largest final-step correspondence.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    obj = list(spec.layout.objcentric_indices)
    out = EvaluationResult(list(init_ids), {}, {}, {})
    for idx, init_id in enumerate(init_ids):
        a = actor[init_id] if isinstance(actor, dict) else actor
        if deterministic:
            a = MeanActor(a)
        trajs = [rollout(spec, a, init_id, spec.horizon, [int(seed), 1_000_000 + idx, trial])
                 for trial in range(trials)]
        objs = np.stack([tr.states[1:, obj] for tr in trajs])          # (trials, T, d)
        i = match_demo(mixture, objs[:, -1]) if demo is None else int(demo)
        out.demo[init_id] = i
        out.final_error[init_id] = [float(np.linalg.norm(o[-1] - mixture.means[i, -1])) for o in objs]
        out.cost[init_id] = [mixture.cost(o, i) for o in objs]
    return out
