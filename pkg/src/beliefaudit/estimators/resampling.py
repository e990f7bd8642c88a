"""Bootstrap intervals and local permutation p-values."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .. import _rng
from .cmi import knn_cmi

MAX_RETRIES = 10


@dataclass(frozen=True)
class BootstrapCI:
    lower: float
    upper: float
    level: float = 0.95
    replicates: int = 500

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.lower > self.upper:
            raise ValueError("lower bound exceeds upper bound")

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_json(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "level": self.level,
                "replicates": self.replicates}

    @classmethod
    def from_json(cls, obj) -> "BootstrapCI":
        return cls(float(obj["lower"]), float(obj["upper"]), float(obj["level"]),
                   int(obj["replicates"]))


def _take(data, idx: np.ndarray):
    if isinstance(data, tuple):
        return tuple(np.asarray(col)[idx] for col in data)
    return np.asarray(data)[idx]


def _length(data) -> int:
    return len(data[0]) if isinstance(data, tuple) else len(data)


def bootstrap_ci(stat: Callable, data, replicates: int = 500, level: float = 0.95,
                 rng_seed: int = 0, groups: Sequence | None = None) -> BootstrapCI:
    """Percentile interval of ``stat`` over resamples of ``data``.

    ``data`` is an array or a tuple of equal-length arrays. When ``groups`` is
    given, whole groups are drawn with replacement. A replicate whose statistic
    raises or is non-finite is redrawn, at most ``MAX_RETRIES`` times.
    """
    n = _length(data)
    if n == 0:
        raise ValueError("bootstrap needs non-empty data")
    if groups is not None:
        _, inverse = np.unique(np.asarray(groups), return_inverse=True)
        members = [np.flatnonzero(inverse == g) for g in range(inverse.max() + 1)]
    else:
        members = None

    values = np.empty(replicates)
    for r in range(replicates):
        for attempt in range(MAX_RETRIES + 1):
            rng = _rng.substream(rng_seed, _rng.BOOTSTRAP, r, attempt)
            if members is None:
                idx = rng.integers(0, n, size=n)
            else:
                pick = rng.integers(0, len(members), size=len(members))
                idx = np.concatenate([members[g] for g in pick])
            try:
                v = float(stat(_take(data, idx)))
            except (ValueError, ZeroDivisionError, FloatingPointError):
                continue
            if np.isfinite(v):
                values[r] = v
                break
        else:
            raise RuntimeError(f"bootstrap statistic failed on replicate {r} after {MAX_RETRIES} retries")
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(values, [tail, 100.0 - tail])
    return BootstrapCI(float(lo), float(hi), level, replicates)


def _local_neighbors(p: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Each record's ``size`` nearest records in p (itself included), ties broken at random."""
    n = len(p)
    size = min(size, n)
    key = rng.random(n)
    order = np.lexsort((key, p))
    sp = p[order]
    offsets = np.arange(-(size - 1), size)
    pos = np.arange(n)[:, None] + offsets[None, :]
    valid = (pos >= 0) & (pos < n)
    pos_c = np.clip(pos, 0, n - 1)
    dist = np.abs(sp[pos_c] - sp[:, None])
    dist[~valid] = np.inf
    jitter = rng.random(dist.shape)
    jitter[:, offsets == 0] = -1.0  # self always first
    pick = np.lexsort((jitter, dist), axis=1)[:, :size]
    local = order[np.take_along_axis(pos_c, pick, axis=1)]
    out = np.empty_like(local)
    out[order] = local
    return out


def restricted_permutation(p: np.ndarray, neighbors: int, rng: np.random.Generator) -> np.ndarray:
    """Permutation index mapping each record to an unused record from its p-neighbourhood."""
    n = len(p)
    local = _local_neighbors(p, neighbors + 1, rng)
    perm = np.arange(n)
    used = np.zeros(n, dtype=bool)
    for i in rng.permutation(n):
        cands = local[i][rng.permutation(local.shape[1])]
        choice = cands[0]
        for c in cands:
            if not used[c]:
                choice = c
                break
        perm[i] = choice
        used[choice] = True
    return perm


def local_permutation_pvalue(a, theta, p, k: int = 3, n_perm: int = 199, rng_seed: int = 0,
                             shuffle_neighbors: int = 5, observed: float | None = None) -> float:
    """Permutation p-value for I(A; theta | p) = 0.

    Each permutation moves theta only within small neighbourhoods in p, which
    keeps the theta | p relationship while breaking any A-theta link.
    """
    if n_perm < 99:
        raise ValueError("n_perm must be >= 99")
    a = np.asarray(a)
    theta = np.asarray(theta)
    p = np.asarray(p, dtype=float)
    if observed is None:
        observed = knn_cmi(a, theta, p, k).value
    exceed = 0
    for r in range(n_perm):
        rng = _rng.substream(rng_seed, _rng.PERMUTATION, r)
        perm = restricted_permutation(p, shuffle_neighbors, rng)
        if knn_cmi(a, theta[perm], p, k).value >= observed:
            exceed += 1
    return (1 + exceed) / (n_perm + 1)
