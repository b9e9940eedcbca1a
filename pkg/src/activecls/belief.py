"""Conflation of class-probability measurements into per-target beliefs."""
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_B_MAX = 0.95


def uniform(C):
    return np.full(C, 1.0 / C)


def conflate(b, p):
    """Product-then-normalize fusion of a belief with one measurement.

    If the two vectors have disjoint support the fusion is skipped and ``b``
    is returned unchanged.
    """
    b = np.asarray(b, dtype=np.float64)
    prod = b * np.asarray(p, dtype=np.float64)
    z = prod.sum()
    if not z > 0.0:
        log.warning("conflation skipped: belief and measurement have disjoint support")
        return b.copy()
    return prod / z


def conflate_weighted(b, p, w=1.0):
    """Conflation with the measurement raised to the non-negative power ``w``."""
    if w < 0:
        raise ValueError("weight must be non-negative")
    p = np.asarray(p, dtype=np.float64)
    if w == 1.0:
        return conflate(b, p)
    return conflate(b, np.power(p, w))


def conflate_many(beliefs, probs):
    """Row-wise conflation of (M, C) beliefs with (M, C) measurements."""
    prod = np.asarray(beliefs) * np.asarray(probs)
    z = prod.sum(axis=1, keepdims=True)
    ok = z[:, 0] > 0.0
    if not ok.all():
        log.warning("conflation skipped for %d targets with disjoint support", int((~ok).sum()))
    out = np.array(beliefs, dtype=np.float64, copy=True)
    out[ok] = prod[ok] / z[ok]
    return out


def normalized_entropy(dist, C=None):
    """Shannon entropy divided by ln(C); accepts a vector or an (M, C) array."""
    d = np.asarray(dist, dtype=np.float64)
    C = d.shape[-1] if C is None else C
    terms = np.where(d > 0.0, -d * np.log(np.where(d > 0.0, d, 1.0)), 0.0)
    h = terms.sum(axis=-1) / np.log(C)
    return np.clip(h, 0.0, 1.0)


@dataclass
class ClassificationStatus:
    classified: bool = False
    b_max: float = DEFAULT_B_MAX


def update_status(b, status):
    """Latch ``classified`` once the largest belief reaches ``b_max``."""
    hit = bool(np.max(b) >= status.b_max)
    return ClassificationStatus(classified=status.classified or hit, b_max=status.b_max)


def update_flags(beliefs, flags, b_max=DEFAULT_B_MAX):
    """Vectorized :func:`update_status` over an (M, C) belief array."""
    return np.asarray(flags, dtype=bool) | (np.max(beliefs, axis=1) >= b_max)
