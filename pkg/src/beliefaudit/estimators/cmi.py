"""Conditional mutual information I(A; theta | p) for discrete A, theta and scalar p."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

_TOL = 1e-12


@dataclass(frozen=True)
class CmiEstimate:
    value: float  # nats
    k: int
    n: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n <= self.k:
            raise ValueError("n must exceed k")

    def to_json(self) -> dict:
        return {"value": self.value, "k": self.k, "n": self.n}

    @classmethod
    def from_json(cls, obj) -> "CmiEstimate":
        return cls(float(obj["value"]), int(obj["k"]), int(obj["n"]))


def _codes(x) -> np.ndarray:
    return np.unique(np.asarray(x), return_inverse=True)[1].ravel()


def _count_within(sorted_values: np.ndarray, centers: np.ndarray, radius: np.ndarray) -> np.ndarray:
    """Points within a closed radius of each center, excluding the center itself."""
    hi = np.searchsorted(sorted_values, centers + radius + _TOL, side="right")
    lo = np.searchsorted(sorted_values, centers - radius - _TOL, side="left")
    return hi - lo - 1


def _group_counts(codes: np.ndarray, p: np.ndarray, radius: np.ndarray) -> np.ndarray:
    out = np.empty(len(p), dtype=np.int64)
    for c in np.unique(codes):
        mask = codes == c
        out[mask] = _count_within(np.sort(p[mask]), p[mask], radius[mask])
    return out


def knn_cmi(a, theta, p, k: int = 3, origin=None) -> CmiEstimate:
    """Mixed discrete/continuous kNN estimate of I(A; theta | p) in nats.

    Distances use the max-metric with discrete coordinates contributing 0 on a
    match and infinity otherwise, so the joint-space neighbours of a record are
    the records sharing its (A, theta) cell, ranked by |p_i - p_j|. Tied
    distances are all counted (Mesner-Shalizi), which handles repeated beliefs.

    ``origin`` labels resampled copies of one source record; copies are not
    neighbours of each other, so a bootstrap replicate is not dominated by
    zero-distance duplicates.
    """
    p = np.asarray(p, dtype=float).ravel()
    n = len(p)
    if len(a) != n or len(theta) != n:
        raise ValueError("a, theta and p must have equal lengths")
    if k < 1 or n <= k:
        raise ValueError(f"need n > k >= 1, got n={n}, k={k}")
    if not np.all(np.isfinite(p)):
        raise ValueError("p contains non-finite values")
    a_codes, t_codes = _codes(a), _codes(theta)
    cell = a_codes * (t_codes.max() + 1) + t_codes
    if origin is None:
        extra = np.zeros(n, dtype=np.int64)
    else:
        # copies share p and the (A, theta) cell, so they sit inside every ball
        _, inverse, mult = np.unique(np.asarray(origin), return_inverse=True, return_counts=True)
        extra = mult[inverse.ravel()] - 1

    radius = np.zeros(n)
    k_tilde = np.zeros(n, dtype=np.int64)
    for c in np.unique(cell):
        idx = np.flatnonzero(cell == c)
        # a cell with <= k distinct others uses all of them as the neighbourhood
        k_eff = np.minimum(k, len(idx) - 1 - extra[idx])
        live = k_eff > 0
        if not live.any():
            continue
        idx = idx[live]
        order = np.argsort(p[idx], kind="stable")
        idx, k_eff = idx[order], k_eff[live][order]
        all_in_cell = np.sort(p[cell == c])
        rank = k_eff + extra[idx]
        rho = _kth_neighbor_distance_among(all_in_cell, p[idx], rank)
        radius[idx] = rho
        k_tilde[idx] = _count_within(all_in_cell, p[idx], rho) - extra[idx]

    active = k_tilde > 0
    if not active.any():
        return CmiEstimate(0.0, k, n)
    n_xz = _group_counts(a_codes, p, radius) - extra
    n_yz = _group_counts(t_codes, p, radius) - extra
    n_z = _count_within(np.sort(p), p, radius) - extra
    terms = digamma(k_tilde[active]) - digamma(n_xz[active]) - digamma(n_yz[active]) + digamma(n_z[active])
    return CmiEstimate(float(terms.sum() / n), k, n)


def _kth_neighbor_distance_among(sorted_values: np.ndarray, centers: np.ndarray,
                                 rank: np.ndarray) -> np.ndarray:
    """rank-th smallest |v - center| over v in sorted_values, skipping the center's own entry."""
    m = len(sorted_values)
    width = int(rank.max())
    pos = np.searchsorted(sorted_values, centers, side="left")
    offsets = np.arange(-width, width + 2)
    idx = pos[:, None] + offsets[None, :]
    valid = (idx >= 0) & (idx < m)
    dist = np.abs(sorted_values[np.clip(idx, 0, m - 1)] - centers[:, None])
    dist[~valid] = np.inf
    # rank + 1 because the center itself is in the array at distance 0
    return np.take_along_axis(np.sort(dist, axis=1), rank[:, None], axis=1)[:, 0]


def plugin_cmi(a, theta, p_discrete) -> float:
    """Empirical-table CMI in nats for fully discrete variables."""
    a_codes, t_codes, z_codes = _codes(a), _codes(theta), _codes(p_discrete)
    n = len(a_codes)
    if n == 0:
        raise ValueError("empty input")
    joint = np.zeros((a_codes.max() + 1, t_codes.max() + 1, z_codes.max() + 1))
    np.add.at(joint, (a_codes, t_codes, z_codes), 1.0)
    joint /= n
    pz = joint.sum(axis=(0, 1))
    paz = joint.sum(axis=1)
    ptz = joint.sum(axis=0)
    a_i, t_i, z_i = np.nonzero(joint)
    pj = joint[a_i, t_i, z_i]
    return float(np.sum(pj * np.log(pj * pz[z_i] / (paz[a_i, z_i] * ptz[t_i, z_i]))))
