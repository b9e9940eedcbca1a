"""Proximal policy optimization, written directly against the numpy policy.

Rollouts are collected by logical workers, each owning an environment and a
random stream; their trajectories are concatenated in worker order so the
result depends only on the seed and the worker count, not on whether the
workers ran in separate processes.
"""
import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import policy as pol
from .env import ActiveClassificationEnv, CurriculumSchedule, EnvSpec, action_bounds

log = logging.getLogger(__name__)

METRIC_FIELDS = ("update", "env_steps", "phase", "episodes", "mean_return", "mean_length",
                 "kl", "entropy", "clip_frac", "kl_coeff", "policy_loss", "value_loss")


@dataclass(frozen=True)
class PPOHyperparams:
    gae_lambda: float = 0.95
    gamma: float = 0.99
    steps_per_update: int = 16000
    epochs_per_update: int = 30
    minibatch_size: int = 256
    clip_param: float = 0.3
    kl_target: float = 0.01
    learning_rate: float = 3e-4
    kl_coeff_init: float = 0.2
    value_loss_coeff: float = 1.0
    entropy_coeff: float = 0.001
    grad_clip: float = 0.1
    value_scale: float = 1.0   # critic regresses returns * value_scale

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if self.minibatch_size < 1 or self.steps_per_update < 1 or self.epochs_per_update < 1:
            raise ValueError("batch sizes and epochs must be positive")

    @property
    def gradient_steps_per_update(self):
        return math.ceil(self.steps_per_update / self.minibatch_size) * self.epochs_per_update


def compute_gae(rewards, values, dones, last_value, gamma, lam):
    """Generalized advantages and value targets for one contiguous segment.

    ``dones[t]`` cuts the bootstrap from step t to t+1; ``last_value`` is the
    value of the observation following the final step.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros(T)
    next_value = float(last_value)
    running = 0.0
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def adapt_kl_coeff(kl, kl_coeff, kl_target):
    if kl > 2.0 * kl_target:
        return kl_coeff * 2.0
    if kl < 0.5 * kl_target:
        return kl_coeff * 0.5
    return kl_coeff


class Adam:
    """Adaptive moment estimation over a flat parameter vector."""

    def __init__(self, size, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(grad, max_norm):
    """Scale ``grad`` so its L2 norm is at most ``max_norm``; returns (grad, pre-clip norm)."""
    norm = float(np.sqrt(grad @ grad))
    if norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    obs: list
    z: np.ndarray
    log_prob: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_value: float
    mu: np.ndarray
    logstd: np.ndarray
    episode_returns: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)

    def __len__(self):
        return self.rewards.shape[0]


class RolloutWorker:
    """Owns one environment and one action stream across updates."""

    def __init__(self, spec, seed_seq, pooling="attention", value_scale=1.0):
        env_seq, act_seq = seed_seq.spawn(2)
        self.env = ActiveClassificationEnv(spec, seed=np.random.default_rng(env_seq))
        self.rng = np.random.default_rng(act_seq)
        self.pooling = pooling
        self.value_scale = value_scale
        self.obs = None
        self.ep_return = 0.0
        self.ep_length = 0

    def collect(self, params, n_steps, episode_cfg):
        env = self.env
        bounds = action_bounds(env.spec.world)
        if self.obs is None:
            self.obs = env.reset(episode=episode_cfg).features()
        obs, z_buf, lp, rew, val, done_buf, mus, lss = [], [], [], [], [], [], [], []
        returns, lengths = [], []
        for _ in range(n_steps):
            x = self.obs
            mu, ls, v = pol.forward(params, x, self.pooling)
            a, z, logp = pol.sample_action(mu, ls, self.rng, bounds)
            nxt, r, done, _ = env.step(a)
            obs.append(x)
            z_buf.append(z)
            lp.append(logp)
            rew.append(r)
            val.append(v / self.value_scale)
            done_buf.append(done)
            mus.append(mu)
            lss.append(ls)
            self.ep_return += r
            self.ep_length += 1
            if done:
                returns.append(self.ep_return)
                lengths.append(self.ep_length)
                self.ep_return, self.ep_length = 0.0, 0
                self.obs = env.reset(episode=episode_cfg).features()
            else:
                self.obs = nxt.features()
        last_value = 0.0 if done_buf[-1] else pol.forward(params, self.obs, self.pooling)[2] / self.value_scale
        return Trajectory(obs, np.array(z_buf), np.array(lp), np.array(rew), np.array(val),
                          np.array(done_buf, dtype=bool), last_value, np.array(mus), np.array(lss),
                          returns, lengths)


def _collect_remote(args):
    worker, params, n, episode_cfg = args
    traj = worker.collect(params, n, episode_cfg)
    return worker, traj


def collect_rollouts(workers, params, total_steps, episode_cfg, processes=1):
    """Split ``total_steps`` over workers; results are ordered by worker index."""
    W = len(workers)
    counts = [total_steps // W + (1 if i < total_steps % W else 0) for i in range(W)]
    jobs = [(w, params, n, episode_cfg) for w, n in zip(workers, counts)]
    if processes > 1 and W > 1:
        with ProcessPoolExecutor(max_workers=min(processes, W)) as pool:
            results = list(pool.map(_collect_remote, jobs))
        for i, (w, _) in enumerate(results):
            workers[i] = w
        return [t for _, t in results]
    return [w.collect(params, n, episode_cfg) for w, params, n, episode_cfg in jobs]


@dataclass
class Batch:
    X: np.ndarray
    mask: np.ndarray
    z: np.ndarray
    log_prob: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    mu: np.ndarray
    logstd: np.ndarray

    def __len__(self):
        return self.z.shape[0]

    def take(self, idx):
        mask = self.mask[idx]
        m = int(mask.sum(axis=1).max())
        return Batch(self.X[idx, :m], mask[:, :m], self.z[idx], self.log_prob[idx],
                     self.advantages[idx], self.returns[idx], self.mu[idx], self.logstd[idx])


def build_batch(trajs, hp, normalize=True):
    advs, rets = [], []
    for t in trajs:
        a, r = compute_gae(t.rewards, t.values, t.dones, t.last_value, hp.gamma, hp.gae_lambda)
        advs.append(a)
        rets.append(r)
    adv = np.concatenate(advs)
    if normalize and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    X, mask = pol.pad_sets([o for t in trajs for o in t.obs])
    cat = lambda name: np.concatenate([getattr(t, name) for t in trajs])
    return Batch(X, mask, cat("z"), cat("log_prob"), adv, np.concatenate(rets), cat("mu"),
                 cat("logstd"))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def ppo_loss(batch, params, kl_coeff, hp=PPOHyperparams(), pooling="attention"):
    """Total loss, diagnostics and parameter gradients for one minibatch."""
    B = len(batch)
    f = pol.forward_batch(params, batch.X, batch.mask, pooling)
    mu, ls, V = f.mu, f.logstd, f.value
    z, A = batch.z, batch.advantages
    var = np.exp(2.0 * ls)
    logp = pol.gaussian_log_prob(z, mu, ls) - pol.tanh_log_det(z)
    ratio = np.exp(logp - batch.log_prob)
    surr1 = ratio * A
    surr2 = np.clip(ratio, 1.0 - hp.clip_param, 1.0 + hp.clip_param) * A
    unclipped = surr1 <= surr2
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    kl = pol.gaussian_kl(batch.mu, batch.logstd, mu, ls)
    target = batch.returns * hp.value_scale
    value_loss = float(np.mean((V - target) ** 2))
    entropy = pol.gaussian_entropy(ls)
    loss = (policy_loss + kl_coeff * float(kl.mean()) + hp.value_loss_coeff * value_loss
            - hp.entropy_coeff * float(entropy.mean()))

    d_logp = -(A * ratio * unclipped) / B
    diff = z - mu
    d_mu = d_logp[:, None] * diff / var
    d_ls = d_logp[:, None] * (diff * diff / var - 1.0)
    var_old = np.exp(2.0 * batch.logstd)
    d_mu += (kl_coeff / B) * (mu - batch.mu) / var
    d_ls += (kl_coeff / B) * (1.0 - (var_old + (batch.mu - mu) ** 2) / var)
    d_ls -= hp.entropy_coeff / B
    d_V = hp.value_loss_coeff * 2.0 * (V - target) / B
    grads = pol.backward(params, f, d_mu, d_ls, d_V)
    stats = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": float(entropy.mean()),
        "kl": float(kl.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > hp.clip_param)),
    }
    return loss, stats, grads


class NonFiniteLoss(RuntimeError):
    pass


def update(params, batch, opt, kl_coeff, hp, rng, pooling="attention"):
    """Run the epochs of shuffled minibatch steps; returns (params, stats of the last epoch)."""
    theta = params.flat()
    work = params.copy()
    n = len(batch)
    last = []
    for epoch in range(hp.epochs_per_update):
        perm = rng.permutation(n)
        epoch_stats = []
        for start in range(0, n, hp.minibatch_size):
            mb = batch.take(perm[start:start + hp.minibatch_size])
            loss, stats, grads = ppo_loss(mb, work, kl_coeff, hp, pooling)
            g = grads.flat()
            if not (math.isfinite(loss) and np.isfinite(g).all()):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}: {stats}")
            g, _ = clip_grad_norm(g, hp.grad_clip)
            theta = opt.step(theta, g)
            work.set_flat(theta)
            epoch_stats.append(stats)
        last = epoch_stats
    agg = {k: float(np.mean([s[k] for s in last])) for k in last[0]}
    return work, agg


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    budget: int = 400_000           # total environment steps over both phases
    phase_boundary: float = 0.75    # fraction of the budget spent in phase one
    workers: int = 4
    processes: int = 1
    seed: int = 0
    pooling: str = "attention"
    phase1_targets: tuple = (1, 12)
    phase2_targets: tuple = (1, 6)
    hp: PPOHyperparams = field(default_factory=PPOHyperparams)
    spec: EnvSpec = field(default_factory=EnvSpec)
    dims: pol.NetDims = field(default_factory=pol.NetDims)
    init_logstd: float = -0.5       # initial log std of the action distribution

    def __post_init__(self):
        if self.budget < 1 or self.workers < 1:
            raise ValueError("budget and workers must be positive")
        if not 0.0 <= self.phase_boundary <= 1.0:
            raise ValueError("phase_boundary must lie in [0, 1]")
        if self.pooling not in ("attention", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @property
    def schedule(self):
        return CurriculumSchedule(total_steps=self.budget, boundary_fraction=self.phase_boundary,
                                  phase1_targets=tuple(self.phase1_targets),
                                  phase2_targets=tuple(self.phase2_targets))


@dataclass
class TrainResult:
    params: pol.PolicyParams
    metrics: list
    checkpoints: list
    status: str = "ok"


def _write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for k, v in r.items()})


def train(cfg=TrainConfig(), out_dir=None, params=None, progress=None):
    """Train from scratch (or from ``params``); writes metrics and checkpoints to ``out_dir``."""
    root = np.random.SeedSequence(cfg.seed)
    init_seq, shuffle_seq, worker_seq = root.spawn(3)
    if params is None:
        params = pol.init_params(cfg.dims, np.random.default_rng(init_seq), cfg.init_logstd)
    workers = [RolloutWorker(cfg.spec, s, cfg.pooling, cfg.hp.value_scale)
               for s in worker_seq.spawn(cfg.workers)]
    shuffle_rng = np.random.default_rng(shuffle_seq)
    hp = cfg.hp
    opt = Adam(params.size, hp.learning_rate)
    kl_coeff = hp.kl_coeff_init
    schedule = cfg.schedule
    metrics, ckpts = [], []
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)

    steps, upd, status = 0, 0, "ok"
    while steps < schedule.total_steps:
        phase = 1 if steps < schedule.boundary else 2
        episode_cfg = replace(cfg.spec.episode,
                              num_targets_range=schedule.phase1_targets if phase == 1
                              else schedule.phase2_targets)
        n = min(hp.steps_per_update, schedule.total_steps - steps)
        trajs = collect_rollouts(workers, params, n, episode_cfg, cfg.processes)
        steps += n
        upd += 1
        returns = [r for t in trajs for r in t.episode_returns]
        lengths = [l for t in trajs for l in t.episode_lengths]
        mean_ret = float(np.mean(returns)) if returns else float("nan")
        if returns and not math.isfinite(mean_ret):
            status = "diverged"
            log.error("mean return is not finite at update %d; keeping the last checkpoint", upd)
            break
        batch = build_batch(trajs, hp)
        try:
            new_params, stats = update(params, batch, opt, kl_coeff, hp, shuffle_rng, cfg.pooling)
        except NonFiniteLoss as exc:
            status = "diverged"
            log.error("update %d aborted: %s", upd, exc)
            break
        if not new_params.all_finite():
            status = "diverged"
            log.error("parameters became non-finite at update %d", upd)
            break
        params = new_params
        kl_coeff = adapt_kl_coeff(stats["kl"], kl_coeff, hp.kl_target)
        row = {"update": upd, "env_steps": steps, "phase": phase, "episodes": len(returns),
               "mean_return": mean_ret,
               "mean_length": float(np.mean(lengths)) if lengths else float("nan"),
               "kl": stats["kl"], "entropy": stats["entropy"], "clip_frac": stats["clip_frac"],
               "kl_coeff": kl_coeff, "policy_loss": stats["policy_loss"],
               "value_loss": stats["value_loss"]}
        metrics.append(row)
        if out_dir is not None:
            path = os.path.join(out_dir, "checkpoints", f"update_{upd:04d}.bin")
            pol.save(params, path)
            ckpts.append(path)
            pol.save(params, os.path.join(out_dir, "policy.bin"))
            _write_metrics(os.path.join(out_dir, "train_metrics.csv"), metrics)
        if progress is not None:
            progress(row)
    return TrainResult(params, metrics, ckpts, status)


def config_dict(cfg):
    """JSON-friendly view of a :class:`TrainConfig`."""
    return asdict(cfg)
