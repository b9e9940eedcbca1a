"""Command-line entry point: train, eval, bench, inspect-checkpoint."""
import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, replace

import numpy as np

from . import baselines as bs
from . import config as cfgmod
from . import evaluation as ev
from . import kernels
from . import policy as pol
from . import ppo

log = logging.getLogger("activecls")

POLICIES = ("attention", "deepsets", "handcrafted", "single-target")


def _pair(text):
    parts = [int(x) for x in text.split(",")]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2 or not 1 <= parts[0] <= parts[1]:
        raise argparse.ArgumentTypeError(f"expected LO,HI with 1 <= LO <= HI, got {text!r}")
    return tuple(parts)


def _arena(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2 or min(parts) <= 0:
        raise argparse.ArgumentTypeError(f"expected W or W,H, got {text!r}")
    return tuple(parts)


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None, help="logical rollout/eval workers")
    p.add_argument("--processes", type=int, default=1, help="OS processes used to run workers")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _scenario_args(p):
    p.add_argument("--num-targets", type=_pair, help="LO,HI targets per episode")
    p.add_argument("--arena", type=_arena, help="arena size W or W,H in meters")
    p.add_argument("--dynamics", choices=("cv", "social"))
    p.add_argument("--timeout", type=float, help="episode timeout in seconds")


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="activecls", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a policy with PPO")
    t.add_argument("--budget", type=float, help="total environment steps (default 4e5)")
    t.add_argument("--phase-boundary", type=float,
                   help="fraction of the budget spent in curriculum phase one (default 0.75)")
    t.add_argument("--policy", choices=("attention", "deepsets", "single-target"))
    t.add_argument("--phase2-targets", type=_pair, help="LO,HI targets in phase two")
    t.add_argument("--steps-per-update", type=int)
    t.add_argument("--seeds", type=int,
                   help="train this many consecutive seeds into OUT/seed_<n> (default 1)")
    _scenario_args(t)

    e = sub.add_parser("eval", parents=[common], help="paired evaluation of several methods")
    e.add_argument("--policy", default="attention,handcrafted",
                   help=f"comma-separated subset of {','.join(POLICIES)}")
    e.add_argument("--checkpoint", action="append", default=[], metavar="METHOD=PATH",
                   help="checkpoint for a learned method (repeatable)")
    e.add_argument("--episodes", type=int)
    e.add_argument("--mpc", action="store_true", help="track viewpoints with the MPC controller")
    e.add_argument("--trace", action="store_true", help="write per-step traces")
    e.add_argument("--stochastic", action="store_true", help="sample actions instead of the mean")
    _scenario_args(e)

    b = sub.add_parser("bench", parents=[common], help="compare kernel backends")
    b.add_argument("--repeat", type=int, default=200)
    b.add_argument("--targets", type=int, default=40)

    i = sub.add_parser("inspect-checkpoint", parents=[common], help="print a checkpoint summary")
    i.add_argument("path")
    return parser


def _load_config(args):
    return cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()


def _apply_scenario(spec, args):
    ep, world = spec.episode, spec.world
    if args.num_targets:
        ep = replace(ep, num_targets_range=args.num_targets)
    if args.dynamics:
        ep = replace(ep, dynamics_mode=args.dynamics)
    if args.timeout:
        ep = replace(ep, timeout=args.timeout)
    if args.arena:
        world = replace(world, arena_width=args.arena[0], arena_height=args.arena[1])
    return replace(spec, episode=ep, world=world)


def _pick(*values):
    for v in values:
        if v is not None:
            return v
    return None


def cmd_train(args):
    ec = _load_config(args)
    tc = ec.train
    spec = _apply_scenario(ec.spec, args)
    policy = _pick(args.policy, tc.get("policy"), "attention")
    # the scenario range drives phase one; phase two narrows the default curriculum only
    base = tuple(spec.episode.num_targets_range)
    phase1 = tuple(_pick(args.num_targets, tc.get("phase1_targets"), base))
    phase2 = tuple(_pick(args.phase2_targets, tc.get("phase2_targets"),
                         (1, 6) if phase1 == (1, 12) else phase1))
    if policy == "single-target":
        phase1 = phase2 = (1, 1)
    hp = ec.ppo
    if args.steps_per_update:
        hp = replace(hp, steps_per_update=args.steps_per_update)
    cfg = ppo.TrainConfig(
        budget=int(_pick(args.budget, tc.get("budget"), 400_000)),
        phase_boundary=float(_pick(args.phase_boundary, tc.get("phase_boundary"), 0.75)),
        workers=int(_pick(args.workers, tc.get("workers"), 4)),
        processes=args.processes,
        seed=int(_pick(args.seed, tc.get("seed"), 0)),
        pooling="mean" if policy == "deepsets" else "attention",
        phase1_targets=phase1,
        phase2_targets=phase2,
        hp=hp,
        spec=spec,
        dims=ec.dims,
    )
    root = args.out or "runs/train"
    seeds = int(_pick(args.seeds, tc.get("seeds"), 1))
    if seeds < 1:
        raise SystemExit("--seeds must be positive")
    status = 0
    for k in range(seeds):
        run = replace(cfg, seed=cfg.seed + k)
        out = root if seeds == 1 else os.path.join(root, f"seed_{run.seed}")
        status |= _train_one(run, policy, out)
    return status


def _train_one(cfg, policy, out):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "train_config.json"), "w") as fh:
        json.dump({"policy": policy, **ppo.config_dict(cfg)}, fh, indent=2, sort_keys=True,
                  default=str)
        fh.write("\n")
    t0 = time.time()

    def progress(row):
        log.info("update %d  steps %d  return %.2f  len %.1f  kl %.4f  (%.0fs)", row["update"],
                 row["env_steps"], row["mean_return"], row["mean_length"], row["kl"],
                 time.time() - t0)

    res = ppo.train(cfg, out, progress=progress)
    print(f"{res.status}: {len(res.metrics)} updates, checkpoint {os.path.join(out, 'policy.bin')}")
    return 0 if res.status == "ok" else 1


def _agent_factories(methods, checkpoints, world):
    ckpt = {}
    for item in checkpoints:
        name, _, path = item.partition("=")
        if not path:
            raise SystemExit(f"--checkpoint expects METHOD=PATH, got {item!r}")
        ckpt[name] = path
    factories = {}
    for m in methods:
        if m not in POLICIES:
            raise SystemExit(f"unknown policy {m!r}; choose from {', '.join(POLICIES)}")
        if m == "handcrafted":
            factories[m] = _Factory(bs.HandcraftedAgent, world)
            continue
        if m not in ckpt:
            raise SystemExit(f"missing checkpoint for {m}: pass --checkpoint {m}=PATH")
        if not os.path.exists(ckpt[m]):
            raise SystemExit(f"checkpoint not found: {ckpt[m]}")
        params = pol.load(ckpt[m])
        if m == "single-target":
            factories[m] = _Factory(bs.SingleTargetAgent, params, world)
        else:
            factories[m] = _Factory(bs.LearnedAgent, params, "mean" if m == "deepsets" else "attention",
                                    world)
    return factories


class _Factory:
    """Picklable zero-argument agent constructor."""

    def __init__(self, cls, *args, **kwargs):
        self.cls, self.args, self.kwargs = cls, args, kwargs

    def __call__(self):
        return self.cls(*self.args, **self.kwargs)


def cmd_eval(args):
    ec = _load_config(args)
    spec = _apply_scenario(ec.spec, args)
    if args.mpc:
        spec = replace(spec, episode=replace(spec.episode, transition="mpc"), mpc=ec.mpc)
    methods = [m.strip() for m in args.policy.split(",") if m.strip()]
    factories = _agent_factories(methods, args.checkpoint, spec.world)
    if args.stochastic:
        for f in factories.values():
            if f.cls is not bs.HandcraftedAgent:
                f.kwargs["stochastic"] = True
    episodes = int(_pick(args.episodes, ec.eval.get("episodes"), 50))
    seed = int(_pick(args.seed, ec.eval.get("seed"), 0))
    processes = max(args.processes, 1)
    results = ev.run_eval(factories, spec, episodes, seed=seed, trace=args.trace,
                          processes=processes)
    out = args.out or "runs/eval"
    summary = ev.write_report(results, out, spec, extra={
        "episodes": episodes, "seed": seed, "transition": spec.episode.transition,
        "dynamics": spec.episode.dynamics_mode,
        "num_targets_range": list(spec.episode.num_targets_range)})
    for name, s in summary["methods"].items():
        print(f"{name:14s} classified@75s {s['classified_at_mark']['mean']:.3f}  "
              f"return {s['return']['mean']:8.2f}  "
              f"simultaneous {s['simultaneous_first_half']['mean']:.3f}")
    complete = len(results) == episodes * len(factories)
    return 0 if complete else 1


def _time(fn, repeat):
    fn()
    t = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t) / repeat


def bench(repeat=200, targets=40, seed=0):
    """Time the hot kernels on every available backend; returns a dict of seconds per call."""
    from .mpc import MPCConfig
    from .sensor import CameraModel
    from .world import WorldConfig

    rng = np.random.default_rng(seed)
    world, cam, mcfg = WorldConfig(), CameraModel(), MPCConfig()
    pos = rng.uniform(1, 49, (targets, 2))
    vel = rng.normal(0, 1, (targets, 2))
    facing = rng.uniform(-math.pi, math.pi, targets)
    static = np.zeros(targets, dtype=np.uint8)
    cam_pos = np.array([25.0, 25.0, world.drone_altitude])
    p0 = np.array([0.0, 0.0, 2.0, 0.0])
    v0 = np.zeros(4)
    goal = np.array([3.0, 0.0, 2.0, 0.5])
    umax = np.asarray(mcfg.u_max, dtype=np.float64)
    out = {}
    for name in kernels.available_backends():
        k = kernels.load_backend(name)
        out[name] = {
            "scan_targets": _time(lambda: k.scan_targets(
                cam_pos, 0.3, cam.pitch, pos, facing, world.target_radius, world.target_height,
                cam.focal_px, float(cam.image_width), float(cam.image_height), cam.arc_samples),
                repeat),
            "advance_cv": _time(lambda: k.advance_cv(
                pos.copy(), vel.copy(), static, world.tau_h, world.target_radius,
                world.arena_width, world.arena_height), repeat),
            "mpc_solve": _time(lambda: k.mpc_solve(
                p0, v0, goal, np.zeros((mcfg.horizon, 4)), world.tau_l, mcfg.w_u, mcfg.w_g, umax,
                mcfg.iterations, mcfg.step_size, mcfg.tol, mcfg.eps), max(1, repeat // 10)),
        }
    return out


def cmd_bench(args):
    res = bench(args.repeat, args.targets, args.seed or 0)
    names = sorted(res)
    kernels_ = sorted(next(iter(res.values())))
    print(f"{'kernel':14s}" + "".join(f"{n:>14s}" for n in names)
          + ("     speedup" if len(names) > 1 else ""))
    for k in kernels_:
        line = f"{k:14s}" + "".join(f"{res[n][k] * 1e6:12.1f}us" for n in names)
        if "python" in res and "cython" in res:
            line += f"{res['python'][k] / res['cython'][k]:11.1f}x"
        print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bench.json"), "w") as fh:
            json.dump(res, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_inspect(args):
    params = pol.load(args.path)
    d = params.dims
    print(f"{args.path}: d_in={d.d_in} d_h={d.d_h} d_enc={d.d_enc} heads={d.heads} "
          f"parameters={params.size}")
    for name, t in params.items():
        print(f"  {name:10s} {str(t.shape):16s} norm {np.linalg.norm(t):10.4f}  "
              f"max|w| {np.abs(t).max():.4f}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench,
            "inspect-checkpoint": cmd_inspect}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
