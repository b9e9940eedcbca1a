"""Paired evaluation of several agents on identical episode seeds."""
import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .env import ActiveClassificationEnv

ROW_FIELDS = ("method", "episode", "seed", "num_targets", "dynamics", "transition", "steps",
              "completion_time", "timeout", "classified_at_mark", "classified_final", "return",
              "simultaneous_mean", "simultaneous_first_half", "misclassified",
              "mean_tracking_error")
TRACE_FIELDS = ("method", "step", "time", "drone_x", "drone_y", "drone_yaw", "reward",
                "visible", "simultaneous", "classified", "tracking_error", "tracking_yaw_error",
                "mpc_cost", "mpc_iterations")
SENSOR_FIELDS = ("method", "step", "target", "visible", "area", "skew", "p_true", "belief_max",
                 "classified")
MARK_SECONDS = 75.0


def episode_seed(base_seed, index):
    """Seed shared by every method for episode ``index``."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def simultaneous_observations(visible, unclassified):
    """Per-step count of targets that are both visible and still unclassified."""
    v = np.asarray(visible, dtype=bool)
    u = np.asarray(unclassified, dtype=bool)
    return (v & u).sum(axis=-1)


def classified_at(flag_history, seconds=MARK_SECONDS, tau_h=0.25):
    """Fraction classified at the step nearest ``seconds`` (or the last step if earlier)."""
    flags = np.asarray(flag_history, dtype=bool)
    if flags.shape[0] == 0:
        return 0.0
    k = min(int(math.floor(seconds / tau_h)), flags.shape[0] - 1)
    return float(flags[k].mean()) if flags.shape[1] else 0.0


@dataclass
class EpisodeResult:
    row: dict
    trace: list
    sensor: list
    curve: np.ndarray   # fraction classified after each step


def run_episode(agent, spec, seed, index, trace=False):
    env = ActiveClassificationEnv(spec)
    env.reset(seed=seed)
    agent.reset()
    st = env.state
    tau_h = spec.world.tau_h
    # row 0 holds the flags before the first step
    flags_hist = [st.classified.copy()]
    sim, rows, sensor = [], [], []
    total = 0.0
    done = False
    while not done:
        before = st.classified.copy()
        a = agent.act(st)
        _, r, done, info = env.step(a)
        st = env.state
        total += r
        s = int(simultaneous_observations(info["visible"], ~before))
        sim.append(s)
        flags_hist.append(st.classified.copy())
        if trace:
            te = env.tracking_log[-1] if env.tracking_log else (float("nan"),) * 4
            rows.append({"method": agent.name, "step": st.step_count,
                         "time": st.step_count * tau_h, "drone_x": st.drone.position[0],
                         "drone_y": st.drone.position[1], "drone_yaw": st.drone.yaw,
                         "reward": r, "visible": int(info["visible"].sum()), "simultaneous": s,
                         "classified": int(st.classified.sum()), "tracking_error": te[0],
                         "tracking_yaw_error": te[1], "mpc_cost": te[2], "mpc_iterations": te[3]})
            for j in range(len(st.targets)):
                sensor.append({"method": agent.name, "step": st.step_count, "target": j,
                               "visible": int(info["visible"][j]), "area": info["area"][j],
                               "skew": info["skew"][j], "p_true": info["p_true"][j],
                               "belief_max": float(st.beliefs[j].max()),
                               "classified": int(st.classified[j])})
    m = len(st.targets)
    steps = st.step_count
    all_done = bool(st.classified.all())
    half = max(1, (len(sim) + 1) // 2)
    track = [t[0] for t in env.tracking_log]
    row = {
        "method": agent.name, "episode": index, "seed": seed, "num_targets": m,
        "dynamics": spec.episode.dynamics_mode, "transition": spec.episode.transition,
        "steps": steps, "completion_time": steps * tau_h if all_done else "",
        "timeout": int(not all_done),
        "classified_at_mark": classified_at(flags_hist[1:], MARK_SECONDS, tau_h),
        "classified_final": float(st.classified.mean()) if m else 0.0,
        "return": total,
        "simultaneous_mean": float(np.mean(sim)) if sim else 0.0,
        "simultaneous_first_half": float(np.mean(sim[:half])) if sim else 0.0,
        "misclassified": int(st.misclassified.sum()),
        "mean_tracking_error": float(np.mean(track)) if track else "",
    }
    curve = np.array([f.mean() if m else 0.0 for f in flags_hist[1:]])
    return EpisodeResult(row, rows, sensor, curve)


def _run_job(job):
    factory, spec, seed, index, trace = job
    return run_episode(factory(), spec, seed, index, trace)


def run_eval(factories, spec, episodes, seed=0, trace=False, processes=1):
    """Evaluate each ``name -> zero-arg agent factory`` on the same ``episodes`` seeds.

    Returns a list of :class:`EpisodeResult` sorted by (method, episode).
    """
    jobs = [(factories[name], spec, episode_seed(seed, i), i, trace)
            for name in sorted(factories) for i in range(episodes)]
    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    return sorted(results, key=lambda r: (r.row["method"], r.row["episode"]))


def _mean_std(values):
    v = np.asarray([x for x in values if x != ""], dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


SUMMARY_METRICS = ("classified_at_mark", "classified_final", "return", "simultaneous_mean",
                   "simultaneous_first_half", "misclassified", "completion_time", "timeout",
                   "mean_tracking_error")


def summarize(rows):
    """Per-method mean and std of every summary metric, recomputed from raw rows."""
    out = {}
    for name in sorted({r["method"] for r in rows}):
        mine = [r for r in rows if r["method"] == name]
        out[name] = {k: _mean_std([r[k] for r in mine]) for k in SUMMARY_METRICS}
        out[name]["episodes"] = len(mine)
        total = sum(r["num_targets"] for r in mine)
        wrong = sum(r["misclassified"] for r in mine)
        out[name]["misclassification_rate"] = wrong / total if total else 0.0
    return out


def speed_curves(results, tau_h, max_steps):
    """Mean cumulative fraction classified vs time per method (final value carried forward)."""
    methods = sorted({r.row["method"] for r in results})
    t = np.arange(1, max_steps + 1) * tau_h
    curves = {}
    for name in methods:
        acc = []
        for r in results:
            if r.row["method"] != name:
                continue
            c = r.curve
            pad = np.full(max_steps, c[-1] if c.size else 0.0)
            pad[:c.size] = c[:max_steps]
            acc.append(pad)
        curves[name] = np.mean(acc, axis=0)
    return t, curves


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in fieldnames})


def write_report(results, out_dir, spec, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    rows = [r.row for r in results]
    _write_csv(os.path.join(out_dir, "eval_rows.csv"), ROW_FIELDS, rows)
    summary = {"methods": summarize(rows)}
    if extra:
        summary.update(extra)
    with open(os.path.join(out_dir, "eval_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    max_steps = spec.episode.max_steps(spec.world)
    t, curves = speed_curves(results, spec.world.tau_h, max_steps)
    names = sorted(curves)
    with open(os.path.join(out_dir, "classification_speed.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + names)
        for k in range(t.size):
            w.writerow([repr(float(t[k]))] + [repr(float(curves[n][k])) for n in names])
    if any(r.trace for r in results):
        tdir = os.path.join(out_dir, "traces")
        os.makedirs(tdir, exist_ok=True)
        for i in sorted({r.row["episode"] for r in results}):
            mine = [r for r in results if r.row["episode"] == i]
            _write_csv(os.path.join(tdir, f"episode_{i}.csv"), TRACE_FIELDS,
                       [x for r in mine for x in r.trace])
            _write_csv(os.path.join(tdir, f"sensor_{i}.csv"), SENSOR_FIELDS,
                       [x for r in mine for x in r.sensor])
    return summary
