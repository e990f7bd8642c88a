"""Simulated random-utility agents used as known-answer controls.

A truthful RUM or PT-RUM agent satisfies every null hypothesis the audit
battery tests, so its rejection rates measure test size. The non-RUM action
policies (``theta_leak``, ``rank_flip``) and the non-truthful report policies
break specific implications and measure power.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import _rng
from .bayesnet import BayesNet, bernoulli, sample_contexts_stratified
from .core import ACTIONS, ActionLabel, CovariateSchema, Dataset, DecisionRecord

# rows: Yes, No, Defer; columns: theta = 0, theta = 1
DEFAULT_UTILITIES = ((-1.0, 1.0), (1.0, -1.0), (0.0, 0.0))


@dataclass(frozen=True)
class Noise:
    kind: str = "gumbel_iid"  # gumbel_iid | logistic | none
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gumbel_iid", "logistic", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind != "none" and not self.scale > 0:
            raise ValueError("noise scale must be > 0")


@dataclass(frozen=True)
class Weighting:
    kind: str = "identity"  # identity | power | prelec
    param: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "power", "prelec"):
            raise ValueError(f"unknown weighting kind {self.kind!r}")
        if not self.param > 0:
            raise ValueError("weighting parameter must be > 0")

    def __call__(self, p: float) -> float:
        if self.kind == "identity":
            return p
        if self.kind == "power":
            return p ** self.param
        if p <= 0.0:
            return 0.0
        if p >= 1.0:
            return 1.0
        return math.exp(-((-math.log(p)) ** self.param))


@dataclass(frozen=True)
class ReportPolicy:
    kind: str = "truthful"  # truthful | constant | gaussian_noise | uniform_random | coarsened
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        kinds = ("truthful", "constant", "gaussian_noise", "uniform_random", "coarsened")
        if self.kind not in kinds:
            raise ValueError(f"unknown report policy {self.kind!r}")
        if self.kind == "constant" and not 0.0 <= self.params.get("c", 0.5) <= 1.0:
            raise ValueError("constant report must lie in [0, 1]")
        if self.kind == "gaussian_noise" and self.params.get("sigma", 0.0) < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class ActionPolicy:
    """How actions are produced.

    ``rum`` is the random-utility rule. ``theta_leak(q)`` answers Yes/No to
    match the realized outcome with probability ``q``. ``rank_flip(lo, hi,
    margin)`` forces No above Yes by at least ``margin`` for beliefs in
    ``[lo, hi)``, which breaks monotone pairwise shares.
    """

    kind: str = "rum"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("rum", "theta_leak", "rank_flip"):
            raise ValueError(f"unknown action policy {self.kind!r}")


@dataclass(frozen=True)
class AgentSpec:
    utilities: tuple[tuple[float, float], ...] = DEFAULT_UTILITIES
    noise: Noise = Noise()
    weighting: Weighting = Weighting()
    report_policy: ReportPolicy = ReportPolicy()
    action_policy: ActionPolicy = ActionPolicy()
    # subjective belief distortion: p_S = sharpen(clip(p* + bias), temperature)
    bias: float = 0.0
    temperature: float = 1.0
    menu: tuple[ActionLabel, ...] = ACTIONS

    def __post_init__(self):
        u = np.asarray(self.utilities, dtype=float)
        if u.shape != (3, 2):
            raise ValueError("utilities must be a 3x2 table (Yes, No, Defer) x (theta=0, theta=1)")
        object.__setattr__(self, "utilities", tuple(tuple(float(v) for v in row) for row in u))
        menu = tuple(sorted((ActionLabel(a) for a in self.menu), key=lambda a: a.order))
        if len(menu) < 2 or len(set(menu)) != len(menu):
            raise ValueError("menu needs at least two distinct actions")
        object.__setattr__(self, "menu", menu)
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")

    def to_json(self) -> dict:
        return {
            "utilities": [list(r) for r in self.utilities],
            "noise": {"kind": self.noise.kind, "scale": self.noise.scale},
            "weighting": {"kind": self.weighting.kind, "param": self.weighting.param},
            "report_policy": {"kind": self.report_policy.kind, "params": dict(self.report_policy.params)},
            "action_policy": {"kind": self.action_policy.kind, "params": dict(self.action_policy.params)},
            "bias": self.bias,
            "temperature": self.temperature,
            "menu": [a.value for a in self.menu],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AgentSpec":
        kw = {}
        if "utilities" in obj:
            kw["utilities"] = tuple(tuple(r) for r in obj["utilities"])
        if "noise" in obj:
            kw["noise"] = Noise(**obj["noise"])
        if obj.get("weighting"):
            kw["weighting"] = Weighting(**obj["weighting"])
        if "report_policy" in obj:
            rp = obj["report_policy"]
            kw["report_policy"] = ReportPolicy(rp["kind"], dict(rp.get("params", {})))
        if "action_policy" in obj:
            ap = obj["action_policy"]
            kw["action_policy"] = ActionPolicy(ap["kind"], dict(ap.get("params", {})))
        for key in ("bias", "temperature"):
            if key in obj:
                kw[key] = float(obj[key])
        if "menu" in obj:
            kw["menu"] = tuple(ActionLabel(a) for a in obj["menu"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "AgentSpec":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


# --------------------------------------------------------------------------- choice


def expected_utilities(spec: AgentSpec, p: float) -> dict[ActionLabel, float]:
    """Value of each action at belief ``p`` using the weighted probability w(p)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    w = spec.weighting(p)
    return {a: w * spec.utilities[a.order][1] + (1.0 - w) * spec.utilities[a.order][0]
            for a in ACTIONS}


def _menu_values(spec: AgentSpec, p: float) -> np.ndarray:
    eu = expected_utilities(spec, p)
    values = np.array([eu[a] for a in spec.menu])
    ap = spec.action_policy
    if ap.kind == "rank_flip" and ap.params.get("lo", 0.4) <= p < ap.params.get("hi", 0.6):
        if ActionLabel.YES in spec.menu and ActionLabel.NO in spec.menu:
            iy, ino = spec.menu.index(ActionLabel.YES), spec.menu.index(ActionLabel.NO)
            hi, lo = max(values[iy], values[ino]), min(values[iy], values[ino])
            values[ino] = hi
            values[iy] = lo - ap.params.get("margin", 4.0)
    return values


def choice_probabilities(spec: AgentSpec, p: float) -> dict[ActionLabel, float]:
    values = _menu_values(spec, p)
    if spec.noise.kind == "none":
        best = np.flatnonzero(values == values.max())
        if len(best) > 1:
            raise ValueError("deterministic agent has degenerate choice probabilities")
        probs = np.zeros(len(values))
        probs[best[0]] = 1.0
    else:
        if spec.noise.kind == "logistic" and len(spec.menu) != 2:
            raise ValueError("logistic noise has closed-form choice probabilities only for binary menus")
        z = values / spec.noise.scale
        z = np.exp(z - z.max())
        probs = z / z.sum()
    out = {a: 0.0 for a in ACTIONS}
    out.update({a: float(q) for a, q in zip(spec.menu, probs)})
    return out


def _shocks(spec: AgentSpec, rng: np.random.Generator) -> np.ndarray:
    m = len(spec.menu)
    if spec.noise.kind == "gumbel_iid":
        return rng.gumbel(0.0, spec.noise.scale, size=m)
    if spec.noise.kind == "logistic":
        if m == 2:
            # a single logistic shock on the difference gives the logit form exactly
            return np.array([0.0, rng.logistic(0.0, spec.noise.scale)])
        return rng.logistic(0.0, spec.noise.scale, size=m)
    return np.zeros(m)


def _argmax_first(values: np.ndarray) -> int:
    return int(np.flatnonzero(values == values.max())[0])


def rum_choose(spec: AgentSpec, p: float, rng_seed: int, draw_index: int) -> ActionLabel:
    """Argmax of value plus shock; shocks depend only on (seed, draw_index)."""
    rng = _rng.substream(rng_seed, _rng.ACTION, draw_index)
    values = _menu_values(spec, p) + _shocks(spec, rng)
    return spec.menu[_argmax_first(values)]


def choose_action(spec: AgentSpec, p: float, theta: int, rng_seed: int,
                  draw_index: int) -> tuple[ActionLabel, ActionLabel]:
    """Action under the agent's policy plus the forced Yes/No answer.

    The forced answer reuses the same shocks restricted to {Yes, No}.
    """
    rng = _rng.substream(rng_seed, _rng.ACTION, draw_index)
    values = _menu_values(spec, p) + _shocks(spec, rng)
    action = spec.menu[_argmax_first(values)]
    binary = [i for i, a in enumerate(spec.menu) if a is not ActionLabel.DEFER]
    forced = spec.menu[binary[_argmax_first(values[binary])]]
    if spec.action_policy.kind == "theta_leak":
        if rng.random() < spec.action_policy.params.get("q", 0.9):
            action = forced = ActionLabel.YES if theta == 1 else ActionLabel.NO
    return action, forced


# --------------------------------------------------------------------------- reporting


def subjective_belief(spec: AgentSpec, p_true: float) -> float:
    p = min(1.0, max(0.0, p_true + spec.bias))
    if spec.temperature != 1.0 and 0.0 < p < 1.0:
        a = p ** (1.0 / spec.temperature)
        b = (1.0 - p) ** (1.0 / spec.temperature)
        p = a / (a + b)
    return p


def elicit_report(spec: AgentSpec, p_subjective: float, rng_seed: int, draw_index: int) -> float:
    if not 0.0 <= p_subjective <= 1.0:
        raise ValueError("p_subjective must lie in [0, 1]")
    policy = spec.report_policy
    if policy.kind == "truthful":
        return p_subjective
    if policy.kind == "constant":
        return float(policy.params.get("c", 0.5))
    if policy.kind == "coarsened":
        return round(p_subjective, int(policy.params.get("decimals", 1)))
    rng = _rng.substream(rng_seed, _rng.REPORT, draw_index)
    if policy.kind == "uniform_random":
        return float(rng.random())
    sigma = float(policy.params.get("sigma", 0.1))
    return float(min(1.0, max(0.0, p_subjective + rng.normal(0.0, sigma))))


def run_episode(net: BayesNet, spec: AgentSpec, n_contexts: int, repetitions: int,
                rng_seed: int, bins: int = 20, prompt_id: str = "std") -> Dataset:
    """Simulate one audit dataset: stratified contexts x repetitions.

    Outcome, report and action draws use separate substreams keyed by the
    record's draw index, so beliefs and actions never share randomness.
    """
    sample = sample_contexts_stratified(net, n_contexts, bins, rng_seed)
    schema = CovariateSchema(tuple((n, net.levels(n)) for n in net.evidence_nodes))
    width = max(4, len(str(n_contexts - 1)))
    records = []
    for i, (ctx, p_star) in enumerate(zip(sample.contexts, sample.posteriors)):
        p_s = subjective_belief(spec, p_star)
        for j in range(repetitions):
            draw = i * repetitions + j
            theta = bernoulli(p_star, rng_seed, draw)
            belief = elicit_report(spec, p_s, rng_seed, draw)
            action, forced = choose_action(spec, p_s, theta, rng_seed, draw)
            records.append(DecisionRecord(
                context_id=f"x{i:0{width}d}",
                covariates=tuple(ctx),
                belief=belief,
                action=action,
                outcome=theta,
                prompt_id=prompt_id,
                repetition=j,
                ground_truth=p_star,
                forced_decision=forced,
            ))
    return Dataset(tuple(records), schema)


# --------------------------------------------------------------------------- presets


def truthful_logit(scale: float = 1.0, **kw) -> AgentSpec:
    return AgentSpec(noise=Noise("gumbel_iid", scale), **kw)


def constant_reporter(c: float = 0.5, scale: float = 1.0) -> AgentSpec:
    return AgentSpec(noise=Noise("gumbel_iid", scale), report_policy=ReportPolicy("constant", {"c": c}))


def theta_leaky(q: float = 0.9, c: float = 0.5, scale: float = 1.0) -> AgentSpec:
    return AgentSpec(noise=Noise("gumbel_iid", scale),
                     report_policy=ReportPolicy("constant", {"c": c}),
                     action_policy=ActionPolicy("theta_leak", {"q": q}))


def rank_flipper(lo: float = 0.4, hi: float = 0.6, margin: float = 4.0, scale: float = 1.0) -> AgentSpec:
    return AgentSpec(noise=Noise("gumbel_iid", scale),
                     action_policy=ActionPolicy("rank_flip", {"lo": lo, "hi": hi, "margin": margin}))
