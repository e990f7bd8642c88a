"""Discrete Bayesian networks: CPT fitting, exact inference, context sampling.

Ground-truth posteriors for the simulated environments come from here. CPT
rows with too little data are stored as NaN and any query that depends on
them raises :class:`InsufficientSupport` instead of being smoothed.
"""
from __future__ import annotations

import itertools
import json
import math
import string
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _rng

ContextAssignment = tuple[tuple[str, str], ...]

MAX_JOINT_ENTRIES = 2 ** 20


class InsufficientSupport(ValueError):
    pass


class ImpossibleEvidence(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BayesNet:
    """A discrete DAG with one CPT per node.

    ``cpts[name]`` has shape ``(*parent_cards, card)`` with parents in the
    order given by ``parents[name]``. The target must be binary; its second
    level is the positive state (theta = 1).
    """

    nodes: tuple[tuple[str, tuple[str, ...]], ...]
    parents: Mapping[str, tuple[str, ...]]
    cpts: Mapping[str, np.ndarray]
    target: str
    min_support: int = 0
    observed: tuple[str, ...] | None = None

    def __post_init__(self):
        names = [n for n, _ in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate node names")
        levels = dict(self.nodes)
        if self.target not in levels:
            raise ValueError(f"target {self.target!r} is not a node")
        if len(levels[self.target]) != 2:
            raise ValueError("target must have exactly 2 levels")
        parents = {n: tuple(self.parents.get(n, ())) for n in names}
        for child, ps in parents.items():
            for p in ps:
                if p not in levels:
                    raise ValueError(f"unknown parent {p!r} of {child!r}")
        try:
            order = tuple(TopologicalSorter(parents).static_order())
        except CycleError as exc:
            raise ValueError(f"parent graph has a cycle: {exc.args[1]}") from None
        cpts = {}
        for n in names:
            table = np.asarray(self.cpts[n], dtype=float)
            shape = tuple(len(levels[p]) for p in parents[n]) + (len(levels[n]),)
            if table.shape != shape:
                raise ValueError(f"CPT for {n!r} has shape {table.shape}, expected {shape}")
            rows = table.reshape(-1, shape[-1])
            valid = ~np.isnan(rows).any(axis=1)
            if (rows[valid] < 0).any():
                raise ValueError(f"CPT for {n!r} has negative entries")
            if valid.any() and np.abs(rows[valid].sum(axis=1) - 1.0).max() > 1e-12:
                raise ValueError(f"CPT rows for {n!r} do not sum to 1")
            table.setflags(write=False)
            cpts[n] = table
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "cpts", cpts)
        object.__setattr__(self, "_order", tuple(n for n in order))
        object.__setattr__(self, "_levels", levels)
        if self.observed is not None:
            obs = tuple(self.observed)
            for n in obs:
                if n not in levels or n == self.target:
                    raise ValueError(f"observed node {n!r} invalid")
            object.__setattr__(self, "observed", obs)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.nodes)

    @property
    def topological_order(self) -> tuple[str, ...]:
        return self._order

    def levels(self, name: str) -> tuple[str, ...]:
        return self._levels[name]

    def card(self, name: str) -> int:
        return len(self._levels[name])

    @property
    def evidence_nodes(self) -> tuple[str, ...]:
        if self.observed is not None:
            return self.observed
        return tuple(n for n in self.names if n != self.target)

    def children(self, name: str) -> tuple[str, ...]:
        return tuple(c for c in self.names if name in self.parents[c])

    def excluded_rows(self, name: str) -> list[tuple[str, ...]]:
        rows = self.cpts[name].reshape(-1, self.card(name))
        combos = itertools.product(*(self.levels(p) for p in self.parents[name]))
        return [c for c, row in zip(combos, rows) if np.isnan(row).any()]

    # ---------------------------------------------------------------- JSON io

    def to_json(self) -> dict:
        edges = [[p, c] for c in self.names for p in self.parents[c]]
        cpts = {}
        for n in self.names:
            rows = self.cpts[n].reshape(-1, self.card(n))
            combos = itertools.product(*(self.levels(p) for p in self.parents[n]))
            cpts[n] = {
                "|".join(c): (None if np.isnan(r).any() else [float(v) for v in r])
                for c, r in zip(combos, rows)
            }
        out = {
            "nodes": [{"name": n, "levels": list(lv)} for n, lv in self.nodes],
            "edges": edges,
            "cpts": cpts,
            "target": self.target,
            "min_support": self.min_support,
        }
        if self.observed is not None:
            out["observed"] = list(self.observed)
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "BayesNet":
        nodes = tuple((d["name"], tuple(str(v) for v in d["levels"])) for d in obj["nodes"])
        levels = dict(nodes)
        parents: dict[str, list[str]] = {n: [] for n, _ in nodes}
        for p, c in obj["edges"]:
            parents[c].append(p)
        cpts = {}
        for n, lv in nodes:
            shape = tuple(len(levels[p]) for p in parents[n]) + (len(lv),)
            table = np.full(shape, np.nan)
            given = obj["cpts"][n]
            for combo in itertools.product(*(range(len(levels[p])) for p in parents[n])):
                key = "|".join(levels[p][i] for p, i in zip(parents[n], combo))
                if key not in given:
                    raise ValueError(f"CPT for {n!r} is missing parent combination {key!r}")
                if given[key] is not None:
                    table[combo] = given[key]
            cpts[n] = table
        return cls(nodes, {k: tuple(v) for k, v in parents.items()}, cpts,
                   obj["target"], int(obj.get("min_support", 0)),
                   tuple(obj["observed"]) if obj.get("observed") is not None else None)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "BayesNet":
        return cls.from_json(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------- factors


@dataclass
class _Factor:
    vars: tuple[str, ...]
    values: np.ndarray


def _multiply(factors: Sequence[_Factor]) -> _Factor:
    all_vars: list[str] = []
    for f in factors:
        for v in f.vars:
            if v not in all_vars:
                all_vars.append(v)
    letters = dict(zip(all_vars, string.ascii_letters))
    spec = ",".join("".join(letters[v] for v in f.vars) for f in factors)
    spec += "->" + "".join(letters[v] for v in all_vars)
    return _Factor(tuple(all_vars), np.einsum(spec, *(f.values for f in factors)))


def _min_fill_order(hidden: Iterable[str], scopes: Iterable[tuple[str, ...]]) -> list[str]:
    hidden = set(hidden)
    adj = {v: set() for v in hidden}
    for scope in scopes:
        hs = [v for v in scope if v in hidden]
        for a in hs:
            adj[a].update(b for b in hs if b != a)
    order = []
    while adj:
        def fill(v):
            nb = sorted(adj[v])
            return sum(1 for i, a in enumerate(nb) for b in nb[i + 1:] if b not in adj[a])
        v = min(sorted(adj), key=fill)
        nb = adj.pop(v)
        for a in nb:
            adj[a].discard(v)
            adj[a].update(b for b in nb if b != a)
        order.append(v)
    return order


def _ancestral_set(net: BayesNet, names: Iterable[str]) -> set[str]:
    keep = set()
    stack = list(names)
    while stack:
        n = stack.pop()
        if n in keep:
            continue
        keep.add(n)
        stack.extend(net.parents[n])
    return keep


def _check_evidence(net: BayesNet, evidence) -> dict[str, int]:
    ev = {}
    for name, level in (evidence.items() if isinstance(evidence, Mapping) else evidence):
        if name not in net._levels:
            raise ValueError(f"unknown evidence node {name!r}")
        if name in ev:
            raise ValueError(f"evidence node {name!r} given twice")
        levels = net.levels(name)
        level = str(level)
        if level not in levels:
            raise ValueError(f"level {level!r} is not valid for {name!r}")
        ev[name] = levels.index(level)
    return ev


def eliminate(net: BayesNet, query: str, evidence=()) -> np.ndarray:
    """Exact posterior P(query | evidence) by variable elimination.

    Barren nodes (not ancestors of the query or evidence) are pruned first;
    the remaining hidden variables are summed out in min-fill order with
    ties broken by name.
    """
    ev = _check_evidence(net, evidence)
    if query not in net._levels:
        raise ValueError(f"unknown query node {query!r}")
    if query in ev:
        raise ValueError("query node is part of the evidence")

    relevant = _ancestral_set(net, [query, *ev])
    factors = []
    for n in net.topological_order:
        if n not in relevant:
            continue
        scope = net.parents[n] + (n,)
        table = net.cpts[n]
        index = tuple(ev[v] if v in ev else slice(None) for v in scope)
        reduced = table[index]
        if np.isnan(reduced).any():
            free = [v for v in scope if v not in ev]
            bad = np.argwhere(np.isnan(reduced))[0]
            combo = {v: net.levels(v)[ev[v]] for v in net.parents[n] if v in ev}
            combo.update({v: net.levels(v)[i] for v, i in zip(free, bad) if v != n})
            raise InsufficientSupport(
                f"insufficient support: CPT of {n!r} is excluded for parent combination {combo}")
        factors.append(_Factor(tuple(v for v in scope if v not in ev), np.asarray(reduced)))

    hidden = relevant - set(ev) - {query}
    for var in _min_fill_order(hidden, [f.vars for f in factors]):
        touching = [f for f in factors if var in f.vars]
        rest = [f for f in factors if var not in f.vars]
        prod = _multiply(touching)
        factors = rest + [_Factor(tuple(v for v in prod.vars if v != var),
                                  prod.values.sum(axis=prod.vars.index(var)))]
    result = _multiply(factors)
    vec = result.values if result.vars == (query,) else np.ones(net.card(query))
    total = vec.sum()
    if not total > 0:
        raise ImpossibleEvidence(f"impossible evidence: {dict(evidence)}")
    return vec / total


@dataclass(frozen=True)
class JointTable:
    names: tuple[str, ...]
    levels: tuple[tuple[str, ...], ...]
    probs: np.ndarray

    def as_dict(self) -> dict[tuple[str, ...], float]:
        out = {}
        for idx in itertools.product(*(range(len(lv)) for lv in self.levels)):
            out[tuple(lv[i] for lv, i in zip(self.levels, idx))] = float(self.probs[idx])
        return out

    def posterior(self, query: str, evidence=()) -> np.ndarray:
        items = evidence.items() if isinstance(evidence, Mapping) else evidence
        index = [slice(None)] * len(self.names)
        for name, level in items:
            pos = self.names.index(name)
            index[pos] = self.levels[pos].index(str(level))
        sub = self.probs[tuple(index)]
        kept = [n for n, ix in zip(self.names, index) if isinstance(ix, slice)]
        axes = tuple(i for i, n in enumerate(kept) if n != query)
        vec = sub.sum(axis=axes)
        total = vec.sum()
        if not total > 0:
            raise ImpossibleEvidence("impossible evidence")
        return vec / total


def enumerate_joint(net: BayesNet) -> JointTable:
    """Brute-force joint distribution as the product of all CPTs."""
    size = math.prod(net.card(n) for n in net.names)
    if size > MAX_JOINT_ENTRIES:
        raise ValueError(f"state space of {size} entries exceeds {MAX_JOINT_ENTRIES}")
    names = net.names
    joint = np.ones([net.card(n) for n in names])
    for n in names:
        scope = net.parents[n] + (n,)
        shape = [1] * len(names)
        table = net.cpts[n]
        perm = sorted(range(len(scope)), key=lambda i: names.index(scope[i]))
        table = np.transpose(table, perm)
        for v in scope:
            shape[names.index(v)] = net.card(v)
        joint = joint * table.reshape(shape)
    return JointTable(names, tuple(net.levels(n) for n in names), joint)


# --------------------------------------------------------------------------- fitting


def fit_cpts_mle(samples, nodes: Sequence[tuple[str, Sequence[str]]],
                 parents: Mapping[str, Sequence[str]], target: str,
                 min_support: int = 100, observed: Sequence[str] | None = None) -> BayesNet:
    """Empirical-frequency CPTs; parent combinations seen fewer than
    ``min_support`` times are stored as excluded (NaN) rows."""
    nodes = tuple((n, tuple(str(v) for v in lv)) for n, lv in nodes)
    levels = dict(nodes)
    names = [n for n, _ in nodes]
    if isinstance(samples, np.ndarray):
        codes = np.asarray(samples, dtype=int)
    else:
        rows = list(samples)
        codes = np.empty((len(rows), len(names)), dtype=int)
        for i, row in enumerate(rows):
            for j, n in enumerate(names):
                if n not in row:
                    raise ValueError(f"sample {i} does not assign node {n!r}")
                codes[i, j] = levels[n].index(str(row[n]))
    cpts = {}
    for j, n in enumerate(names):
        ps = tuple(parents.get(n, ()))
        pcols = [names.index(p) for p in ps]
        shape = tuple(len(levels[p]) for p in ps) + (len(levels[n]),)
        counts = np.zeros(shape)
        np.add.at(counts, tuple(codes[:, c] for c in pcols) + (codes[:, j],), 1)
        support = counts.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            table = counts / support
        table = np.where((support >= max(min_support, 1)), table, np.nan)
        cpts[n] = table
    return BayesNet(nodes, {n: tuple(parents.get(n, ())) for n in names}, cpts, target,
                    min_support, tuple(observed) if observed is not None else None)


def forward_sample(net: BayesNet, n: int, rng_seed: int) -> np.ndarray:
    """Ancestral sampling; returns level codes with columns in ``net.names`` order."""
    rng = _rng.substream(rng_seed, _rng.CONTEXTS, 1)
    names = net.names
    out = np.zeros((n, len(names)), dtype=int)
    for node in net.topological_order:
        j = names.index(node)
        table = net.cpts[node]
        pcodes = tuple(out[:, names.index(p)] for p in net.parents[node])
        rows = table[pcodes] if pcodes else np.broadcast_to(table, (n, table.shape[-1]))
        if np.isnan(rows).any():
            raise InsufficientSupport(f"cannot sample {node!r}: excluded CPT rows reached")
        cum = np.cumsum(rows, axis=1)
        u = rng.random(n)[:, None]
        out[:, j] = np.minimum((u >= cum).sum(axis=1), table.shape[-1] - 1)
    return out


# --------------------------------------------------------------------------- sampling


@dataclass(frozen=True)
class StratifiedSample:
    contexts: tuple[ContextAssignment, ...]
    posteriors: tuple[float, ...]
    bin_counts: tuple[int, ...]
    quotas: tuple[int, ...]
    redistributed: tuple[tuple[int, int, int], ...] = field(default=())  # (from_bin, to_bin, count)

    def __len__(self):
        return len(self.contexts)

    def __iter__(self):
        return iter(self.contexts)

    def __getitem__(self, i):
        return self.contexts[i]


def candidate_contexts(net: BayesNet, rng_seed: int, max_enumerate: int = 2 ** 16,
                       n_draws: int = 20000) -> list[ContextAssignment]:
    names = net.evidence_nodes
    size = math.prod(net.card(n) for n in names)
    if size <= max_enumerate:
        combos = itertools.product(*(net.levels(n) for n in names))
        return [tuple(zip(names, c)) for c in combos]
    codes = forward_sample(net, n_draws, rng_seed)
    cols = [net.names.index(n) for n in names]
    unique = np.unique(codes[:, cols], axis=0)
    return [tuple((n, net.levels(n)[i]) for n, i in zip(names, row)) for row in unique]


def sample_contexts_stratified(net: BayesNet, n: int, bins: int = 20, rng_seed: int = 0,
                               candidates: Sequence[ContextAssignment] | None = None
                               ) -> StratifiedSample:
    """Draw ``n`` distinct contexts spread across equal-width posterior bins.

    Each bin gets ``n // bins`` contexts (the remainder going to the
    best-stocked bins); a bin without enough supported contexts hands its
    shortfall to the nearest bins with spare stock, and the moves are
    recorded in ``redistributed``.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if candidates is None:
        candidates = candidate_contexts(net, rng_seed)
    pool: list[list[tuple[ContextAssignment, float]]] = [[] for _ in range(bins)]
    for ctx in candidates:
        try:
            p = float(eliminate(net, net.target, ctx)[1])
        except (InsufficientSupport, ImpossibleEvidence):
            continue
        b = min(int(p * bins), bins - 1)
        pool[b].append((ctx, p))
    total = sum(len(b) for b in pool)
    if total == 0:
        raise ValueError("no supported contexts")
    if total < n:
        raise ValueError(f"only {total} supported contexts, {n} requested")

    rng = _rng.substream(rng_seed, _rng.CONTEXTS, 0)
    for b in pool:
        rng.shuffle(b)

    stock = [len(b) for b in pool]
    quotas = [n // bins] * bins
    # remainder goes to the bins with most stock, ties to lower index
    for b in sorted(range(bins), key=lambda i: (-stock[i], i))[: n % bins]:
        quotas[b] += 1
    take = [min(q, s) for q, s in zip(quotas, stock)]
    moves = []
    for b in range(bins):
        short = quotas[b] - take[b]
        for d in range(1, bins):
            if short == 0:
                break
            for nb in (b - d, b + d):
                if 0 <= nb < bins and short > 0:
                    spare = stock[nb] - take[nb]
                    give = min(spare, short)
                    if give > 0:
                        take[nb] += give
                        short -= give
                        moves.append((b, nb, give))

    chosen = [item for b in range(bins) for item in pool[b][: take[b]]]
    return StratifiedSample(
        contexts=tuple(c for c, _ in chosen),
        posteriors=tuple(p for _, p in chosen),
        bin_counts=tuple(take),
        quotas=tuple(quotas),
        redistributed=tuple(moves),
    )


def sample_outcome(net: BayesNet, x: ContextAssignment, rng_seed: int, draw_index: int) -> int:
    p = float(eliminate(net, net.target, x)[1])
    return bernoulli(p, rng_seed, draw_index)


def bernoulli(p: float, rng_seed: int, draw_index: int) -> int:
    u = _rng.substream(rng_seed, _rng.OUTCOME, draw_index).random()
    return int(u < p)


# --------------------------------------------------------------------------- generators


def _logistic_rows(rng, parent_cards, card, scale):
    """CPT whose logits are additive in the parent levels."""
    shape = tuple(parent_cards) + (card,)
    logits = np.zeros(shape)
    for axis, pc in enumerate(parent_cards):
        effect = rng.normal(0.0, scale, size=(pc, card))
        bshape = [1] * len(shape)
        bshape[axis] = pc
        bshape[-1] = card
        logits = logits + effect.reshape(bshape)
    # centre across parent combinations so no node is nearly constant
    if parent_cards:
        logits -= logits.mean(axis=tuple(range(len(parent_cards))), keepdims=True)
    logits = logits + rng.normal(0.0, 0.3, size=card)
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    table = w / w.sum(axis=-1, keepdims=True)
    # guarantee exact row sums
    table[..., -1] = 1.0 - table[..., :-1].sum(axis=-1)
    return np.clip(table, 0.0, 1.0)


def layered_network(n_demographic: int = 4, n_finding: int = 5, n_indicator: int = 4,
                    demographic_levels: Sequence[int] = (3, 3, 2, 2), max_parents: int = 3,
                    effect_scale: float = 1.5, target_effect: float = 3.0,
                    target_mode: str = "child", seed: int = 0,
                    target: str = "Target") -> BayesNet:
    """Synthetic three-tier network: demographics -> findings -> indicators -> target.

    ``target_mode="child"`` makes the target a child of every indicator (the
    heart-disease shape); ``"hub"`` makes it a child of the demographics and a
    parent of the findings and indicators, so posteriors require inverting edges out of
    the target. Demographics and findings are the observed context nodes.
    """
    if target_mode not in ("child", "hub"):
        raise ValueError("target_mode must be 'child' or 'hub'")
    rng = np.random.default_rng(seed)
    nodes: list[tuple[str, tuple[str, ...]]] = []
    parents: dict[str, tuple[str, ...]] = {}
    demo = [f"D{i}" for i in range(n_demographic)]
    finds = [f"F{i}" for i in range(n_finding)]
    inds = [f"I{i}" for i in range(n_indicator)]
    for i, d in enumerate(demo):
        k = demographic_levels[i % len(demographic_levels)]
        nodes.append((d, tuple(str(v) for v in range(k))))
        parents[d] = ()
    if target_mode == "hub":
        nodes.append((target, ("0", "1")))
        parents[target] = tuple(demo[:max_parents])
    hub = target_mode == "hub"
    for i, f in enumerate(finds):
        nodes.append((f, ("0", "1")))
        pool = demo + finds[:i]
        picks = rng.choice(len(pool), size=min(max_parents - hub, len(pool)), replace=False)
        parents[f] = tuple(pool[j] for j in sorted(picks)) + ((target,) if hub else ())
    for i, ind in enumerate(inds):
        nodes.append((ind, ("0", "1")))
        pool = demo + finds
        picks = rng.choice(len(pool), size=min(max_parents - hub, len(pool)), replace=False)
        parents[ind] = tuple(pool[j] for j in sorted(picks)) + ((target,) if hub else ())
    if target_mode == "child":
        nodes.append((target, ("0", "1")))
        parents[target] = tuple(inds)
    levels = dict(nodes)
    cpts = {}
    for name, lv in nodes:
        pcards = [len(levels[p]) for p in parents[name]]
        scale = target_effect if name == target or target in parents[name] else effect_scale
        cpts[name] = _logistic_rows(rng, pcards, len(lv), scale)
    return BayesNet(tuple(nodes), parents, cpts, target, 0, tuple(demo + finds))


def random_binary_dag(n_nodes: int, edge_prob: float = 0.4, max_parents: int = 3,
                      seed: int = 0) -> BayesNet:
    """Random binary DAG with Dirichlet CPT rows; the last node is the target."""
    rng = np.random.default_rng(seed)
    names = [f"V{i:02d}" for i in range(n_nodes)]
    parents = {}
    for i, n in enumerate(names):
        cands = [names[j] for j in range(i) if rng.random() < edge_prob]
        if len(cands) > max_parents:
            cands = [cands[j] for j in sorted(rng.choice(len(cands), max_parents, replace=False))]
        parents[n] = tuple(cands)
    cpts = {}
    for n in names:
        shape = tuple(2 for _ in parents[n]) + (2,)
        rows = rng.dirichlet([0.8, 0.8], size=int(np.prod(shape[:-1]))).reshape(shape)
        rows[..., -1] = 1.0 - rows[..., 0]
        cpts[n] = rows
    nodes = tuple((n, ("0", "1")) for n in names)
    return BayesNet(nodes, parents, cpts, names[-1])
