"""Permutation-invariant actor-critic over a set of target observations.

Layer 1 is a multi-head self-attention block over the targets (affine
query/key/value maps per head, per-head output maps summed, ReLU). Layer 2
pools the latent set with multi-head attention against a learned seed query
(or a plain mean for the DeepSets ablation). A final affine layer gives the
Gaussian mean and log-std over viewpoint displacements; a bias-free linear
layer gives the state value.

Batches of variable-size sets are padded to the largest set and masked.
Attention tensors use a heads-first layout (H, B, M, ...) so every product
is a batched matmul.
"""
import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from .env import OBS_DIM

ACTION_DIM = 3
LOGSTD_MIN = -5.0
LOGSTD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)

CHECKPOINT_MAGIC = b"ACPV"
CHECKPOINT_VERSION = 1

PARAM_NAMES = (
    "sab_wq", "sab_wk", "sab_wv", "sab_wo",
    "pma_seed", "pma_wk", "pma_wv", "pma_wo",
    "mu_w", "logstd_w", "value_w",
)


@dataclass(frozen=True)
class NetDims:
    d_in: int = OBS_DIM
    d_h: int = 16
    d_enc: int = 64
    heads: int = 4

    def shapes(self):
        H, dh, de, di = self.heads, self.d_h, self.d_enc, self.d_in
        return {
            "sab_wq": (H, dh, di + 1),
            "sab_wk": (H, dh, di + 1),
            "sab_wv": (H, dh, di + 1),
            "sab_wo": (H, de, dh + 1),
            "pma_seed": (dh,),
            "pma_wk": (H, dh, de + 1),
            "pma_wv": (H, dh, de + 1),
            "pma_wo": (H, de, dh + 1),
            "mu_w": (ACTION_DIM, de + 1),
            "logstd_w": (ACTION_DIM, de + 1),
            "value_w": (de,),
        }


class PolicyParams:
    """Named float64 tensors in a fixed declaration order."""

    def __init__(self, dims, tensors):
        self.dims = dims
        shapes = dims.shapes()
        self.tensors = {}
        for name in PARAM_NAMES:
            t = np.ascontiguousarray(tensors[name], dtype=np.float64)
            if t.shape != shapes[name]:
                raise ValueError(f"{name}: expected shape {shapes[name]}, got {t.shape}")
            self.tensors[name] = t

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name][...] = value

    def items(self):
        return ((n, self.tensors[n]) for n in PARAM_NAMES)

    def copy(self):
        return PolicyParams(self.dims, {n: t.copy() for n, t in self.items()})

    def zeros_like(self):
        return PolicyParams(self.dims, {n: np.zeros_like(t) for n, t in self.items()})

    def flat(self):
        return np.concatenate([t.ravel() for _, t in self.items()])

    def set_flat(self, vec):
        off = 0
        for _, t in self.items():
            n = t.size
            t[...] = vec[off:off + n].reshape(t.shape)
            off += n

    @property
    def size(self):
        return sum(t.size for _, t in self.items())

    def all_finite(self):
        return all(np.isfinite(t).all() for _, t in self.items())


def _glorot(rng, shape):
    fan_out, fan_in = shape[-2], shape[-1] - 1
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-lim, lim, shape)
    w[..., -1] = 0.0
    return w


def init_params(dims=NetDims(), rng=None, logstd_bias=-0.5):
    rng = rng if rng is not None else np.random.default_rng(0)
    shapes = dims.shapes()
    t = {}
    for name in ("sab_wq", "sab_wk", "sab_wv", "sab_wo", "pma_wk", "pma_wv", "pma_wo",
                 "mu_w", "logstd_w"):
        t[name] = _glorot(rng, shapes[name])
    t["pma_seed"] = rng.standard_normal(dims.d_h) / math.sqrt(dims.d_h)
    lim = math.sqrt(6.0 / (dims.d_enc + 1))
    t["value_w"] = rng.uniform(-lim, lim, dims.d_enc)
    t["logstd_w"][:, -1] = logstd_bias
    return PolicyParams(dims, t)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def pad_sets(sets, d_in=OBS_DIM):
    """Stack variable-size (M_i, d_in) arrays into (B, M_max, d_in) plus a mask."""
    B = len(sets)
    if B == 0:
        raise ValueError("empty batch")
    sizes = [s.shape[0] for s in sets]
    if min(sizes) < 1:
        raise ValueError("every observation set needs at least one target")
    m = max(sizes)
    X = np.zeros((B, m, d_in))
    mask = np.zeros((B, m), dtype=bool)
    for b, s in enumerate(sets):
        X[b, :s.shape[0]] = s
        mask[b, :s.shape[0]] = True
    return X, mask


def _affine_in(x):
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def _masked_softmax(scores, mask):
    s = np.where(mask, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(s), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Forward:
    mu: np.ndarray
    logstd: np.ndarray
    value: np.ndarray
    cache: dict

    @property
    def latents(self):
        """Per-target SAB outputs, (B, M, d_enc)."""
        return self.cache["E1"]

    @property
    def pooled(self):
        return self.cache["E2"]

    @property
    def sab_attention(self):
        """(H, B, M, M) attention weights of the self-attention block."""
        return self.cache["A"]

    @property
    def pma_attention(self):
        """(H, B, M) pooling weights (None for mean pooling)."""
        return self.cache.get("lam")


def sab_forward_batch(params, X, mask, cache):
    dims = params.dims
    H, dh = dims.heads, dims.d_h
    B, M, _ = X.shape
    scale = 1.0 / math.sqrt(dh)
    Xa = _affine_in(X).reshape(B * M, -1)
    Q = np.matmul(Xa, params["sab_wq"].transpose(0, 2, 1)).reshape(H, B, M, dh)
    K = np.matmul(Xa, params["sab_wk"].transpose(0, 2, 1)).reshape(H, B, M, dh)
    V = np.matmul(Xa, params["sab_wv"].transpose(0, 2, 1)).reshape(H, B, M, dh)
    S = np.matmul(Q, K.transpose(0, 1, 3, 2)) * scale
    A = _masked_softmax(S, mask[None, :, None, :])
    Z = np.matmul(A, V)
    Za = _affine_in(Z).reshape(H, B * M, dh + 1)
    Y = np.matmul(Za, params["sab_wo"].transpose(0, 2, 1)).sum(axis=0).reshape(B, M, -1)
    E1 = np.maximum(Y, 0.0)
    cache.update(Xa=Xa, Q=Q, K=K, V=V, A=A, Za=Za, Y=Y, E1=E1)
    return E1


def pma_forward_batch(params, E1, mask, cache):
    dims = params.dims
    H, dh = dims.heads, dims.d_h
    B, M, _ = E1.shape
    scale = 1.0 / math.sqrt(dh)
    E1a = _affine_in(E1).reshape(B * M, -1)
    K2 = np.matmul(E1a, params["pma_wk"].transpose(0, 2, 1)).reshape(H, B, M, dh)
    V2 = np.matmul(E1a, params["pma_wv"].transpose(0, 2, 1)).reshape(H, B, M, dh)
    s = np.matmul(K2, params["pma_seed"]) * scale
    lam = _masked_softmax(s, mask[None, :, :])
    P = np.matmul(lam[:, :, None, :], V2)[:, :, 0, :]
    Pa = _affine_in(P)
    Y2 = np.matmul(Pa, params["pma_wo"].transpose(0, 2, 1)).sum(axis=0)
    E2 = np.maximum(Y2, 0.0)
    cache.update(E1a=E1a, K2=K2, V2=V2, lam=lam, Pa=Pa, Y2=Y2)
    return E2


def mean_pool_batch(E1, mask):
    w = mask / mask.sum(axis=1, keepdims=True)
    return np.einsum("bm,bme->be", w, E1)


def heads_forward(params, E2, cache=None):
    E2a = _affine_in(E2)
    mu = E2a @ params["mu_w"].T
    raw = E2a @ params["logstd_w"].T
    logstd = np.clip(raw, LOGSTD_MIN, LOGSTD_MAX)
    value = E2 @ params["value_w"]
    if cache is not None:
        cache.update(E2=E2, E2a=E2a, logstd_raw=raw)
    return mu, logstd, value


def forward_batch(params, X, mask, pooling="attention"):
    """Forward pass over a padded batch; returns :class:`Forward` with a cache for backward."""
    cache = {"mask": mask, "pooling": pooling}
    E1 = sab_forward_batch(params, X, mask, cache)
    if pooling == "attention":
        E2 = pma_forward_batch(params, E1, mask, cache)
    elif pooling == "mean":
        E2 = mean_pool_batch(E1, mask)
    else:
        raise ValueError(f"unknown pooling {pooling!r}")
    mu, logstd, value = heads_forward(params, E2, cache)
    return Forward(mu, logstd, value, cache)


def forward(params, obs, pooling="attention"):
    """Single observation set (M, d_in) -> (mu, logstd, value)."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 1:
        raise ValueError("observation set must be a non-empty (M, d_in) array")
    out = forward_batch(params, obs[None], np.ones((1, obs.shape[0]), dtype=bool), pooling)
    return out.mu[0], out.logstd[0], float(out.value[0])


def sab_forward(obs, params):
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[0] < 1:
        raise ValueError("empty observation set")
    return sab_forward_batch(params, obs[None], np.ones((1, obs.shape[0]), dtype=bool), {})[0]


def pma_forward(latents, params):
    latents = np.asarray(latents, dtype=np.float64)
    if latents.shape[0] < 1:
        raise ValueError("empty latent set")
    return pma_forward_batch(params, latents[None], np.ones((1, latents.shape[0]), dtype=bool), {})[0]


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(params, fwd, d_mu, d_logstd, d_value):
    """Reverse-mode gradients of sum(d_mu*mu + d_logstd*logstd + d_value*value)."""
    dims = params.dims
    H, dh = dims.heads, dims.d_h
    c = fwd.cache
    mask = c["mask"]
    B, M = mask.shape
    scale = 1.0 / math.sqrt(dh)
    g = {}

    raw = c["logstd_raw"]
    d_ls = d_logstd * ((raw > LOGSTD_MIN) & (raw < LOGSTD_MAX))
    E2, E2a = c["E2"], c["E2a"]
    g["mu_w"] = d_mu.T @ E2a
    g["logstd_w"] = d_ls.T @ E2a
    g["value_w"] = d_value @ E2
    dE2 = d_mu @ params["mu_w"][:, :-1] + d_ls @ params["logstd_w"][:, :-1] \
        + d_value[:, None] * params["value_w"][None, :]

    if c["pooling"] == "attention":
        dY2 = dE2 * (c["Y2"] > 0.0)
        Pa, lam, K2, V2 = c["Pa"], c["lam"], c["K2"], c["V2"]
        g["pma_wo"] = np.matmul(dY2.T[None], Pa)                        # (H, e, dh+1)
        dP = np.matmul(dY2[None], params["pma_wo"])[:, :, :-1]           # (H, B, dh)
        dlam = np.matmul(V2, dP[:, :, :, None])[..., 0]                  # (H, B, M)
        dV2 = lam[..., None] * dP[:, :, None, :]
        ds = lam * (dlam - (lam * dlam).sum(axis=-1, keepdims=True))
        seed = params["pma_seed"]
        dK2 = ds[..., None] * (seed * scale)
        g["pma_seed"] = np.einsum("hbm,hbmk->k", ds, K2) * scale
        E1a = c["E1a"]
        dK2r = dK2.reshape(H, B * M, dh)
        dV2r = dV2.reshape(H, B * M, dh)
        g["pma_wk"] = np.matmul(dK2r.transpose(0, 2, 1), E1a)
        g["pma_wv"] = np.matmul(dV2r.transpose(0, 2, 1), E1a)
        dE1a = (np.matmul(dK2r, params["pma_wk"]) + np.matmul(dV2r, params["pma_wv"])).sum(axis=0)
        dE1 = dE1a[:, :-1].reshape(B, M, -1)
    else:
        g["pma_seed"] = np.zeros_like(params["pma_seed"])
        for n in ("pma_wk", "pma_wv", "pma_wo"):
            g[n] = np.zeros_like(params[n])
        w = mask / mask.sum(axis=1, keepdims=True)
        dE1 = w[..., None] * dE2[:, None, :]

    dY = (dE1 * (c["Y"] > 0.0) * mask[..., None]).reshape(B * M, -1)
    Za, A, Q, K, V, Xa = c["Za"], c["A"], c["Q"], c["K"], c["V"], c["Xa"]
    g["sab_wo"] = np.matmul(dY.T[None], Za)                              # (H, e, dh+1)
    dZ = np.matmul(dY[None], params["sab_wo"])[:, :, :-1].reshape(H, B, M, dh)
    dA = np.matmul(dZ, V.transpose(0, 1, 3, 2))
    dV = np.matmul(A.transpose(0, 1, 3, 2), dZ)
    dS = A * (dA - (A * dA).sum(axis=-1, keepdims=True)) * scale
    dQ = np.matmul(dS, K)
    dK = np.matmul(dS.transpose(0, 1, 3, 2), Q)
    for name, d in (("sab_wq", dQ), ("sab_wk", dK), ("sab_wv", dV)):
        g[name] = np.matmul(d.reshape(H, B * M, dh).transpose(0, 2, 1), Xa)
    return PolicyParams(dims, g)


# ---------------------------------------------------------------------------
# Gaussian head utilities
# ---------------------------------------------------------------------------

def gaussian_log_prob(z, mu, logstd):
    """Log density of pre-squash samples under the diagonal Gaussian (last axis summed)."""
    var = np.exp(2.0 * logstd)
    return np.sum(-0.5 * (z - mu) ** 2 / var - logstd - 0.5 * LOG_2PI, axis=-1)


def tanh_log_det(z):
    """sum log(1 - tanh(z)^2), computed stably."""
    return np.sum(2.0 * (math.log(2.0) - z - np.logaddexp(0.0, -2.0 * z)), axis=-1)


def gaussian_entropy(logstd):
    return np.sum(logstd + 0.5 * (LOG_2PI + 1.0), axis=-1)


def gaussian_kl(mu_old, logstd_old, mu_new, logstd_new):
    """KL(old || new) between diagonal Gaussians, summed over the last axis."""
    var_old = np.exp(2.0 * logstd_old)
    var_new = np.exp(2.0 * logstd_new)
    return np.sum(logstd_new - logstd_old + (var_old + (mu_old - mu_new) ** 2) / (2.0 * var_new) - 0.5,
                  axis=-1)


def squash(z, bounds):
    return np.asarray(bounds) * np.tanh(z)


def sample_action(mu, logstd, rng, bounds):
    """Draw z ~ N(mu, sigma^2) and squash it into the action box.

    Returns (action, z, log_prob) where log_prob includes the tanh
    change-of-variables correction (the constant box scaling is omitted).
    """
    mu = np.asarray(mu, dtype=np.float64)
    logstd = np.asarray(logstd, dtype=np.float64)
    z = mu + np.exp(logstd) * rng.standard_normal(mu.shape)
    logp = gaussian_log_prob(z, mu, logstd) - tanh_log_det(z)
    return squash(z, bounds), z, float(logp)


def deterministic_action(mu, bounds):
    return squash(np.asarray(mu, dtype=np.float64), bounds)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIII")


def dumps(params):
    d = params.dims
    buf = io.BytesIO()
    buf.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, d.d_in, d.d_h, d.d_enc, d.heads))
    for _, t in params.items():
        buf.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(data):
    if len(data) < _HEADER.size:
        raise ValueError("checkpoint too short")
    magic, version, d_in, d_h, d_enc, heads = _HEADER.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not a policy checkpoint (bad magic)")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    dims = NetDims(d_in=d_in, d_h=d_h, d_enc=d_enc, heads=heads)
    off = _HEADER.size
    tensors = {}
    for name, shape in dims.shapes().items():
        n = int(np.prod(shape))
        end = off + 8 * n
        if end > len(data):
            raise ValueError("checkpoint truncated")
        tensors[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off = end
    if off != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return PolicyParams(dims, tensors)


def save(params, path):
    with open(path, "wb") as fh:
        fh.write(dumps(params))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
