"""Command-line front end: ``objgps {gen-demos,train,evaluate,inspect-weights}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import shutil
import sys
from pathlib import Path

import numpy as np

from .demos import write_demos
from .envs import scripted_demos
from .errors import InvalidInputError
from .gaussian import TVLGController
from .gps import ExperimentConfig, GPSError, apply_override, evaluate, merge_config, DEFAULT_CONFIG, run_gps
from .policy import load_policy, save_policy

log = logging.getLogger("objgps")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="objgps", description="Guided policy search from object-centric demonstrations.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-demos", help="write scripted demonstrations for an environment")
    g.add_argument("--env", required=True, choices=["linear", "bead_push", "valve_turn"])
    g.add_argument("--out", required=True, type=Path)

    t = sub.add_parser("train", help="run guided policy search")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--seed", type=int)
    t.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    e = sub.add_parser("evaluate", help="roll out a trained policy")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--inits", required=True)
    e.add_argument("--trials", required=True, type=int)
    e.add_argument("--out", required=True, type=Path)

    w = sub.add_parser("inspect-weights", help="dump correspondence weights of one iteration")
    w.add_argument("--checkpoint", required=True, type=Path)
    w.add_argument("--iteration", required=True, type=int)
    w.add_argument("--out", required=True, type=Path)
    return p


# --- artifacts --------------------------------------------------------------------

def save_controllers(controllers, init_ids, path):
    arrays = {}
    for j, c in enumerate(controllers):
        arrays[f"K_{j}"], arrays[f"k_{j}"], arrays[f"C_{j}"] = c.K, c.k, c.C
    np.savez(path, init_ids=np.array(init_ids), **arrays)


def load_controllers(path):
    with np.load(path) as z:
        ids = [str(i) for i in z["init_ids"]]
        return {i: TVLGController(z[f"K_{j}"], z[f"k_{j}"], z[f"C_{j}"]) for j, i in enumerate(ids)}


def emit_results(result, out_dir):
    """Write ``metrics.csv`` (one row per trial) and ``summary.csv`` (per init id)."""
    out_dir = Path(out_dir)
    rows = list(result.rows())
    if not all(math.isfinite(e) and math.isfinite(c) for _, _, e, c in rows):
        raise InvalidInputError("metrics contain non-finite values")
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["init_id", "trial", "final_error", "cost"])
        for init_id, trial, e, c in rows:
            w.writerow([init_id, trial, repr(float(e)), repr(float(c))])
    with open(out_dir / "summary.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["init_id", "mean", "stddev"])
        for init_id, s in result.summary().items():
            w.writerow([init_id, repr(float(s["mean"])), repr(float(s["stddev"]))])


def _load_checkpoint_config(ckpt: Path) -> ExperimentConfig:
    cfg_path = ckpt / "config.json"
    if not cfg_path.is_file():
        raise InvalidInputError(f"{cfg_path} not found")
    raw = json.loads(cfg_path.read_text())
    cfg = ExperimentConfig.from_dict(raw, base_dir=ckpt)
    local = ckpt / "demos.csv"
    if local.is_file():
        cfg.demo_path = local
    return cfg


# --- subcommands ------------------------------------------------------------------

def cmd_gen_demos(args):
    recs, names = scripted_demos(args.env)
    args.out.mkdir(parents=True, exist_ok=True)
    write_demos(recs, args.out / "demos.csv", names)
    print(args.out / "demos.csv")


def load_train_config(path: Path, seed=None, overrides=()):
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} does not exist")
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: {exc}")
    merged = merge_config(DEFAULT_CONFIG, raw)
    for ov in overrides:
        try:
            apply_override(merged, ov)
        except InvalidInputError as exc:
            raise UsageError(str(exc))
    if seed is not None:
        merged["seed"] = seed
    return ExperimentConfig.from_dict(merged, base_dir=path.resolve().parent)


def cmd_train(args):
    cfg = load_train_config(args.config, args.seed, args.overrides)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    mixture = cfg.load_mixture()
    (out / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
    if cfg.demo_path.resolve() != (out / "demos.csv").resolve():
        shutil.copyfile(cfg.demo_path, out / "demos.csv")

    reports_f = open(out / "reports.jsonl", "w")
    timings_f = open(out / "timings.jsonl", "w")

    def on_iteration(report, assignment):
        reports_f.write(report.to_json() + "\n")
        reports_f.flush()
        timings_f.write(json.dumps({"iteration": report.iteration, "wall_time": report.wall_time}) + "\n")
        timings_f.flush()

    weights = {}
    try:
        result = run_gps(cfg, mixture, on_iteration)
    finally:
        reports_f.close()
        timings_f.close()
    for k, a in enumerate(result.assignments, start=1):
        weights[f"iteration_{k}"] = a.a
    np.savez(out / "weights.npz", demo_ids=np.array(mixture.ids), init_ids=np.array(cfg.init_ids), **weights)
    save_controllers(result.controllers, cfg.init_ids, out / "controllers.npz")
    save_policy(result.policy, out / "policy.json")
    last = result.reports[-1]
    for c in last.controllers:
        print(f"{c.init_id}: expected cost {c.expected_cost:.4g}, sample cost {c.sample_cost:.4g}, "
              f"demo {mixture.ids[c.dominant_demo]} ({c.dominant_mass:.3f})")


def cmd_evaluate(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    inits = [s.strip() for s in args.inits.split(",") if s.strip()]
    if not inits:
        raise UsageError("--inits is empty")
    cfg = _load_checkpoint_config(args.checkpoint)
    unknown = [i for i in inits if i not in cfg.env.catalog]
    if unknown:
        raise InvalidInputError(f"unknown init ids {unknown}; known: {sorted(cfg.env.catalog)}")
    policy = load_policy(args.checkpoint / "policy.json")
    mixture = cfg.load_mixture()
    result = evaluate(policy, cfg.env, inits, args.trials, cfg.seed, mixture)
    emit_results(result, args.out)
    for init_id, s in result.summary().items():
        print(f"{init_id}: final error {s['mean']:.4g} +- {s['stddev']:.4g} "
              f"(demo {mixture.ids[result.demo[init_id]]})")


def cmd_inspect_weights(args):
    path = args.checkpoint / "weights.npz"
    if not path.is_file():
        raise InvalidInputError(f"{path} not found")
    with np.load(path) as z:
        key = f"iteration_{args.iteration}"
        if key not in z.files:
            n = len([f for f in z.files if f.startswith("iteration_")])
            raise InvalidInputError(f"iteration {args.iteration} out of range 1..{n}")
        a = z[key]
        demo_ids = [str(i) for i in z["demo_ids"]]
        init_ids = [str(i) for i in z["init_ids"]]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["demo", "controller", "t", "weight"])
        D, C, T = a.shape
        for i in range(D):
            for j in range(C):
                for t in range(T):
                    w.writerow([demo_ids[i], init_ids[j], t + 1, repr(float(a[i, j, t]))])


COMMANDS = {
    "gen-demos": cmd_gen_demos,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "inspect-weights": cmd_inspect_weights,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"objgps: error: {exc}", file=sys.stderr)
        return 1
    except GPSError as exc:
        print(f"objgps: {exc} ({len(exc.reports)} iterations completed)", file=sys.stderr)
        return 2
    except (InvalidInputError, OSError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"objgps: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
