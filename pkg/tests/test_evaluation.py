import csv
import functools
import json
import math
import os
from dataclasses import replace

import numpy as np
import pytest

from activecls import baselines as bs
from activecls import evaluation as ev
from activecls.env import ActiveClassificationEnv, EnvSpec, EpisodeConfig
from activecls.sensor import SensorLaw
from activecls.world import WorldConfig

SMALL = EnvSpec(episode=EpisodeConfig(num_targets_range=(1, 3), timeout=20.0),
                world=WorldConfig(arena_width=10.0, arena_height=10.0))


class SpinAgent:
    name = "spin"

    def reset(self):
        pass

    def act(self, state):
        return np.array([0.0, 0.0, 1.0])


def test_episode_seeds_are_shared_and_distinct():
    assert ev.episode_seed(3, 0) == ev.episode_seed(3, 0)
    assert len({ev.episode_seed(3, i) for i in range(100)}) == 100
    assert ev.episode_seed(3, 0) != ev.episode_seed(4, 0)


def test_two_methods_give_paired_rows():
    res = ev.run_eval({"handcrafted": bs.HandcraftedAgent, "spin": SpinAgent}, SMALL, 6, seed=1)
    rows = [r.row for r in res]
    assert len(rows) == 12
    by = {(r["method"], r["episode"]): r for r in rows}
    for i in range(6):
        a, b = by["handcrafted", i], by["spin", i]
        assert a["seed"] == b["seed"] and a["num_targets"] == b["num_targets"]


def test_classified_at_mark():
    flags = np.zeros((400, 5), dtype=bool)
    flags[:, :3] = True
    assert ev.classified_at(flags, 75.0, 0.25) == pytest.approx(0.6)
    assert ev.classified_at(np.ones((10, 2), dtype=bool)) == 1.0   # ended early, last row used
    assert ev.classified_at(np.zeros((400, 2), dtype=bool)) == 0.0
    # the mark is step 300; later flags do not count
    late = np.zeros((400, 1), dtype=bool)
    late[301:] = True
    assert ev.classified_at(late) == 0.0


def test_simultaneous_count():
    visible = [[1, 1, 1, 1, 0]]
    unclassified = [[1, 1, 1, 0, 1]]
    assert ev.simultaneous_observations(visible, unclassified)[0] == 3
    assert ev.simultaneous_observations([[0, 0]], [[1, 1]])[0] == 0


def test_simultaneous_never_exceeds_unclassified(rng):
    v = rng.random((100, 8)) < 0.5
    u = rng.random((100, 8)) < 0.5
    assert np.all(ev.simultaneous_observations(v, u) <= u.sum(axis=1))


def test_static_visible_target_is_always_classified():
    spec = EnvSpec(episode=EpisodeConfig(num_targets_range=(1, 1), static_fraction_range=(1.0, 1.0)),
                   world=WorldConfig(arena_width=20.0, arena_height=20.0))
    agent = functools.partial(bs.HandcraftedAgent, spec.world)
    res = ev.run_eval({"handcrafted": agent}, spec, 30, seed=2)
    open_field = 0
    for r in res:
        env = ActiveClassificationEnv(spec)
        env.reset(seed=r.row["seed"])
        x, y = env.state.targets.positions[0]
        # a target facing a wall closer than the standoff cannot be seen frontally
        if min(x, y, 20.0 - x, 20.0 - y) > 2.5:
            open_field += 1
            assert r.row["classified_final"] == 1.0
    assert open_field >= 15


def test_uninformative_sensor_times_out_cleanly():
    law = SensorLaw(area_gain=0.0)   # every measurement is uniform
    spec = replace(SMALL, law=law, episode=replace(SMALL.episode, init_measurements=(0, 0)))
    res = ev.run_eval({"handcrafted": bs.HandcraftedAgent}, spec, 3, seed=0)
    for r in res:
        assert r.row["classified_final"] == 0.0 and r.row["timeout"] == 1
        assert r.row["completion_time"] == ""
        assert r.row["steps"] == spec.episode.max_steps(spec.world)


def test_summary_is_recomputed_from_rows():
    rows = [{"method": "a", "num_targets": 2, "misclassified": 1, "return": 1.0,
             "completion_time": "", **{k: 0.0 for k in ev.SUMMARY_METRICS
                                       if k not in ("return", "completion_time", "misclassified")}},
            {"method": "a", "num_targets": 2, "misclassified": 0, "return": 3.0,
             "completion_time": 10.0, **{k: 0.0 for k in ev.SUMMARY_METRICS
                                         if k not in ("return", "completion_time", "misclassified")}}]
    s = ev.summarize(rows)["a"]
    assert s["return"] == {"mean": 2.0, "std": 1.0, "n": 2}
    assert s["completion_time"]["n"] == 1
    assert s["misclassification_rate"] == 0.25


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_report_is_byte_identical_on_rerun(tmp_path):
    outs = []
    for k in range(2):
        res = ev.run_eval({"handcrafted": bs.HandcraftedAgent, "spin": SpinAgent}, SMALL, 3,
                          seed=5, trace=True)
        d = tmp_path / f"run{k}"
        ev.write_report(res, str(d), SMALL)
        outs.append(d)
    names = sorted(os.listdir(outs[0])) + [f"traces/{n}" for n in sorted(os.listdir(outs[0] / "traces"))]
    assert "eval_rows.csv" in names and "traces/episode_0.csv" in names
    for n in names:
        if n != "traces":
            assert _read(outs[0] / n) == _read(outs[1] / n), n
    with open(outs[0] / "eval_rows.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 and set(rows[0]) == set(ev.ROW_FIELDS)
    assert all(math.isfinite(float(r["return"])) for r in rows)
    summary = json.loads((outs[0] / "eval_summary.json").read_text())
    assert set(summary["methods"]) == {"handcrafted", "spin"}


def test_process_pool_matches_serial():
    f = {"handcrafted": bs.HandcraftedAgent}
    a = ev.run_eval(f, SMALL, 4, seed=9)
    b = ev.run_eval(f, SMALL, 4, seed=9, processes=2)
    assert [r.row for r in a] == [r.row for r in b]


def test_speed_curve_is_cumulative():
    res = ev.run_eval({"handcrafted": bs.HandcraftedAgent}, SMALL, 4, seed=3)
    max_steps = SMALL.episode.max_steps(SMALL.world)
    t, curves = ev.speed_curves(res, SMALL.world.tau_h, max_steps)
    c = curves["handcrafted"]
    assert t.shape == c.shape == (max_steps,)
    assert np.all(np.diff(c) >= 0) and 0.0 <= c[0] and c[-1] <= 1.0
