"""Audit procedures: belief sufficiency, monotone shares, prompt stability, LIE.

Each procedure returns a frozen result that serializes to JSON and back
without loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bayesnet import BayesNet, eliminate
from .core import ActionLabel, Dataset, group_by_context
from .estimators.cmi import CmiEstimate, knn_cmi
from .estimators.exact import EXACT_TESTS, ContingencyTable2x2
from .estimators.gbdt import GbdtParams, gbdt_oof_losses, grouped_folds
from .estimators.isotonic import isotonic_fit
from .estimators.resampling import BootstrapCI, bootstrap_ci, local_permutation_pvalue

VARIANTS = ("raw", "isotonic")
CONDITIONINGS = ("belief_only", "belief_plus_context")


class UnderpoweredError(ValueError):
    pass


def _check_choice(value, allowed, what):
    if value not in allowed:
        raise ValueError(f"{what} must be one of {allowed}, got {value!r}")


def _require_records(d: Dataset, floor: int):
    if len(d) < floor:
        raise UnderpoweredError(f"underpowered: {len(d)} records, need at least {floor}")


def calibrated_beliefs(d: Dataset) -> np.ndarray:
    """Beliefs mapped through a monotone fit against realized outcomes."""
    p = d.beliefs()
    return np.clip(isotonic_fit(p, d.outcomes())(p), 0.0, 1.0)


# --------------------------------------------------------------------------- CI test


@dataclass(frozen=True)
class CiTestResult:
    cmi: CmiEstimate
    ci: BootstrapCI
    perm_pvalue: float
    variant: str = "raw"
    conditioning: str = "belief_only"

    def __post_init__(self):
        if not 0.0 <= self.perm_pvalue <= 1.0:
            raise ValueError("perm_pvalue must lie in [0, 1]")

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.perm_pvalue <= alpha

    def to_json(self) -> dict:
        return {"test": "ci", "cmi": self.cmi.to_json(), "ci": self.ci.to_json(),
                "perm_pvalue": self.perm_pvalue, "variant": self.variant,
                "conditioning": self.conditioning}

    @classmethod
    def from_json(cls, obj) -> "CiTestResult":
        return cls(CmiEstimate.from_json(obj["cmi"]), BootstrapCI.from_json(obj["ci"]),
                   float(obj["perm_pvalue"]), obj["variant"], obj["conditioning"])


def ci_test(d: Dataset, k: int = 3, bootstraps: int = 500, n_perm: int = 199,
            variant: str = "raw", conditioning: str = "belief_only", rng_seed: int = 0,
            min_records: int = 50, shuffle_neighbors: int = 5,
            resample: str = "group") -> CiTestResult:
    """kNN estimate of I(A; theta | p) with a bootstrap CI and a permutation p-value."""
    _check_choice(variant, VARIANTS, "variant")
    _check_choice(conditioning, CONDITIONINGS, "conditioning")
    _check_choice(resample, ("group", "record"), "resample")
    if conditioning != "belief_only":
        raise ValueError("context conditioning is covered by predictive_sufficiency_test")
    _require_records(d, min_records)
    a, theta = d.action_codes(), d.outcomes()
    p = calibrated_beliefs(d) if variant == "isotonic" else d.beliefs()

    est = knn_cmi(a, theta, p, k)
    ci = bootstrap_ci(lambda s: knn_cmi(s[0], s[1], s[2], k, origin=s[3]).value,
                      (a, theta, p, np.arange(len(p))),
                      replicates=bootstraps, rng_seed=rng_seed,
                      groups=d.group_codes() if resample == "group" else None)
    pval = local_permutation_pvalue(a, theta, p, k, n_perm, rng_seed,
                                    shuffle_neighbors=shuffle_neighbors, observed=est.value)
    return CiTestResult(est, ci, pval, variant, conditioning)


# --------------------------------------------------------------------------- predictive test


@dataclass(frozen=True)
class PredictiveTestResult:
    baseline_logloss: float
    augmented_logloss: float
    pct_improvement: float
    ci: BootstrapCI
    conditioning: str = "belief_only"

    def excludes_zero(self) -> bool:
        return not self.ci.contains(0.0)

    def to_json(self) -> dict:
        return {"test": "predictive", "baseline_logloss": self.baseline_logloss,
                "augmented_logloss": self.augmented_logloss,
                "pct_improvement": self.pct_improvement, "ci": self.ci.to_json(),
                "conditioning": self.conditioning}

    @classmethod
    def from_json(cls, obj) -> "PredictiveTestResult":
        return cls(float(obj["baseline_logloss"]), float(obj["augmented_logloss"]),
                   float(obj["pct_improvement"]), BootstrapCI.from_json(obj["ci"]),
                   obj["conditioning"])


def _pct_improvement(base: float, aug: float) -> float:
    return 100.0 * (base - aug) / base if base > 0 else 0.0


def predictive_sufficiency_test(d: Dataset, conditioning: str = "belief_only", folds: int = 5,
                                depth: int = 6, iterations: int = 1000, bootstraps: int = 500,
                                rng_seed: int = 0, params: GbdtParams | None = None,
                                min_records: int = 50) -> PredictiveTestResult:
    """Does adding theta to the belief features lower out-of-fold action log-loss?

    Both models share the same grouped folds. The interval resamples context
    groups of the fixed out-of-fold losses rather than refitting.
    """
    _check_choice(conditioning, CONDITIONINGS, "conditioning")
    _require_records(d, min_records)
    base = d.beliefs()[:, None]
    if conditioning == "belief_plus_context":
        base = np.hstack([base, d.covariate_matrix()])
    augmented = np.hstack([base, d.outcomes()[:, None].astype(float)])
    labels, groups = d.action_codes(), d.group_codes()

    l_base = gbdt_oof_losses(base, labels, groups, folds, depth, iterations, rng_seed, params)
    l_aug = gbdt_oof_losses(augmented, labels, groups, folds, depth, iterations, rng_seed, params)
    pct = _pct_improvement(l_base.mean, l_aug.mean)
    ci = bootstrap_ci(lambda s: _pct_improvement(s[0].mean(), s[1].mean()),
                      (l_base.per_record, l_aug.per_record), replicates=bootstraps,
                      rng_seed=rng_seed, groups=groups)
    return PredictiveTestResult(l_base.mean, l_aug.mean, pct, ci, conditioning)


# --------------------------------------------------------------------------- monotone test


@dataclass(frozen=True)
class BeliefBin:
    lower: float
    upper: float
    center: float  # mean belief of the bin's records
    count_first: int
    count_second: int

    @property
    def share(self) -> float:
        return self.count_first / (self.count_first + self.count_second)

    def to_json(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "center": self.center,
                "count_first": self.count_first, "count_second": self.count_second}


@dataclass(frozen=True)
class MonotoneTestResult:
    pair: tuple[str, str]
    bins: tuple[BeliefBin, ...]
    shares: tuple[float, ...]
    flagged: tuple[tuple[int, int, float], ...]
    significant_violation_rate: float
    alpha: float = 0.05
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if any(j >= k for j, k, _ in self.flagged):
            raise ValueError("flagged pairs must satisfy j < k")

    @property
    def n_comparisons(self) -> int:
        return len(self.bins) * (len(self.bins) - 1) // 2

    @property
    def significant(self) -> tuple[tuple[int, int, float], ...]:
        return tuple(f for f in self.flagged if f[2] < self.alpha)

    def to_json(self) -> dict:
        return {"test": "monotone", "pair": list(self.pair),
                "bins": [b.to_json() for b in self.bins], "shares": list(self.shares),
                "flagged": [list(f) for f in self.flagged],
                "significant_violation_rate": self.significant_violation_rate,
                "alpha": self.alpha, "notes": list(self.notes)}

    @classmethod
    def from_json(cls, obj) -> "MonotoneTestResult":
        return cls(tuple(obj["pair"]), tuple(BeliefBin(**b) for b in obj["bins"]),
                   tuple(float(s) for s in obj["shares"]),
                   tuple((int(j), int(k), float(p)) for j, k, p in obj["flagged"]),
                   float(obj["significant_violation_rate"]), float(obj["alpha"]),
                   tuple(obj["notes"]))


def monotone_from_bins(pair, bins: Sequence[BeliefBin], alpha: float = 0.05,
                       exact: str = "fisher", notes: Sequence[str] = ()) -> MonotoneTestResult:
    """Flag every j < k with share_j > share_k and test each with a one-sided exact test."""
    test = EXACT_TESTS[exact]
    shares = tuple(b.share for b in bins)
    flagged = []
    for j in range(len(bins)):
        for k in range(j + 1, len(bins)):
            if shares[j] > shares[k]:
                table = ContingencyTable2x2(bins[j].count_first, bins[j].count_second,
                                            bins[k].count_first, bins[k].count_second)
                flagged.append((j, k, test(table)))
    n_cmp = len(bins) * (len(bins) - 1) // 2
    rate = sum(p < alpha for _, _, p in flagged) / n_cmp if n_cmp else 0.0
    return MonotoneTestResult(tuple(str(a) for a in pair), tuple(bins), shares, tuple(flagged),
                              rate, alpha, tuple(notes))


def monotone_pairwise_test(d: Dataset, pair=(ActionLabel.YES, ActionLabel.NO), K: int = 5,
                           alpha: float = 0.05, rng_seed: int = 0,
                           exact: str = "fisher") -> MonotoneTestResult:
    """Pairwise action shares across K belief-quantile bins.

    Bins are built from the beliefs of records whose action is in ``pair``.
    Empty bins (from tied quantile edges) are merged into their neighbour and
    noted. Binning is deterministic; ``rng_seed`` is accepted for a uniform
    call signature.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    first, second = (ActionLabel(a) for a in pair)
    if first == second:
        raise ValueError("pair needs two distinct actions")
    _check_choice(exact, tuple(EXACT_TESTS), "exact")
    keep = [r for r in d.records if r.action in (first, second)]
    if not keep:
        raise UnderpoweredError(f"no records chose {first.value} or {second.value}")
    b = np.array([r.belief for r in keep])
    is_first = np.array([r.action == first for r in keep])

    edges = np.quantile(b, np.linspace(0.0, 1.0, K + 1))
    idx = np.clip(np.searchsorted(edges[1:-1], b, side="left"), 0, K - 1)
    bins, notes = [], []
    lower = float(edges[0])
    for j in range(K):
        members = idx == j
        if not members.any():
            notes.append(f"bin {j + 1} of {K} empty; merged into neighbour")
            continue
        bins.append(BeliefBin(lower, float(edges[j + 1]), float(b[members].mean()),
                              int(is_first[members].sum()), int((~is_first[members]).sum())))
        lower = float(edges[j + 1])
    return monotone_from_bins((first.value, second.value), bins, alpha, exact, notes)


# --------------------------------------------------------------------------- prompt consistency


@dataclass(frozen=True)
class ConsistencyResult:
    within_prompt_std: float
    rmse_by_prompt: Mapping[str, float] = field(default_factory=dict)
    rmse_vs_ground_truth: float | None = None
    reference_prompt: str = "std"

    def __post_init__(self):
        vals = [self.within_prompt_std, *self.rmse_by_prompt.values()]
        if self.rmse_vs_ground_truth is not None:
            vals.append(self.rmse_vs_ground_truth)
        if any(v < 0 for v in vals):
            raise ValueError("consistency measures must be nonnegative")
        object.__setattr__(self, "rmse_by_prompt", dict(sorted(self.rmse_by_prompt.items())))

    def to_json(self) -> dict:
        return {"test": "consistency", "within_prompt_std": self.within_prompt_std,
                "rmse_by_prompt": dict(self.rmse_by_prompt),
                "rmse_vs_ground_truth": self.rmse_vs_ground_truth,
                "reference_prompt": self.reference_prompt}

    @classmethod
    def from_json(cls, obj) -> "ConsistencyResult":
        gt = obj.get("rmse_vs_ground_truth")
        return cls(float(obj["within_prompt_std"]),
                   {k: float(v) for k, v in obj["rmse_by_prompt"].items()},
                   None if gt is None else float(gt), obj.get("reference_prompt", "std"))


def _beliefs_by_context(d: Dataset, prompt_id: str) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    for r in d.records:
        if r.prompt_id == prompt_id:
            out.setdefault(r.context_id, []).append(r.belief)
    return out


def prompt_consistency(d: Dataset, reference_prompt: str = "std",
                       per_repetition: bool = False) -> ConsistencyResult:
    """Repetition spread under the reference prompt and drift of other prompts from it.

    The spread is the population standard deviation (ddof=0) of each
    context's repeated beliefs, averaged over contexts with >= 2 repetitions.
    """
    ref = _beliefs_by_context(d, reference_prompt)
    if not ref:
        raise ValueError(f"no records for reference prompt {reference_prompt!r}")
    spreads = [float(np.std(v)) for v in ref.values() if len(v) >= 2]
    if not spreads:
        raise ValueError("reference prompt needs >= 2 repetitions in some context")
    ref_mean = {c: float(np.mean(v)) for c, v in ref.items()}

    rmse = {}
    for pid in d.prompt_ids:
        if pid == reference_prompt:
            continue
        alt = _beliefs_by_context(d, pid)
        shared = sorted(set(alt) & set(ref_mean))
        if not shared:
            raise ValueError(f"prompt {pid!r} shares no contexts with {reference_prompt!r}")
        if per_repetition:
            diffs = [b - ref_mean[c] for c in shared for b in alt[c]]
        else:
            diffs = [float(np.mean(alt[c])) - ref_mean[c] for c in shared]
        rmse[pid] = math.sqrt(float(np.mean(np.square(diffs))))

    ref_records = [r for r in d.records if r.prompt_id == reference_prompt]
    gt = None
    if all(r.ground_truth is not None for r in ref_records):
        gt = rmse_vs_ground_truth(d.for_prompt(reference_prompt))
    return ConsistencyResult(float(np.mean(spreads)), rmse, gt, reference_prompt)


def rmse_vs_ground_truth(d: Dataset) -> float:
    """RMSE over contexts between the repetition-averaged belief and p*(x)."""
    if len(d) == 0:
        raise ValueError("empty dataset")
    sq = []
    for cid, recs in group_by_context(d):
        if any(r.ground_truth is None for r in recs):
            raise ValueError(f"context {cid} is missing ground_truth")
        sq.append((np.mean([r.belief for r in recs]) - np.mean([r.ground_truth for r in recs])) ** 2)
    return math.sqrt(float(np.mean(sq)))


# --------------------------------------------------------------------------- LIE


@dataclass(frozen=True)
class LieTriple:
    """Marginal belief, per-cell conditional beliefs and cell weights for one context.

    A conditional belief may be None for a zero-weight cell.
    """

    context_id: str
    base_belief: float
    bin_beliefs: tuple[float | None, ...]
    bin_weights: tuple[float, ...]
    covariates: tuple[tuple[str, str], ...] = ()
    z_node: str = ""
    z_levels: tuple[str, ...] = ()
    true_base: float | None = None
    true_bins: tuple[float | None, ...] = ()

    def __post_init__(self):
        if len(self.bin_beliefs) != len(self.bin_weights):
            raise ValueError(f"context {self.context_id}: {len(self.bin_beliefs)} cell beliefs "
                             f"but {len(self.bin_weights)} cell weights")
        object.__setattr__(self, "bin_beliefs", tuple(self.bin_beliefs))
        object.__setattr__(self, "bin_weights", tuple(self.bin_weights))
        object.__setattr__(self, "covariates", tuple(tuple(c) for c in self.covariates))
        object.__setattr__(self, "z_levels", tuple(self.z_levels))
        object.__setattr__(self, "true_bins", tuple(self.true_bins))

    def residual(self) -> float:
        total = 0.0
        for belief, weight in zip(self.bin_beliefs, self.bin_weights):
            if weight == 0.0:
                continue
            if belief is None:
                raise ValueError(f"context {self.context_id}: missing belief for a cell with weight {weight}")
            total += belief * weight
        return abs(self.base_belief - total)

    def to_json(self) -> dict:
        return {"context_id": self.context_id, "base_belief": self.base_belief,
                "bin_beliefs": list(self.bin_beliefs), "bin_weights": list(self.bin_weights),
                "covariates": [list(c) for c in self.covariates], "z_node": self.z_node,
                "z_levels": list(self.z_levels), "true_base": self.true_base,
                "true_bins": list(self.true_bins)}

    @classmethod
    def from_json(cls, obj) -> "LieTriple":
        return cls(obj["context_id"], float(obj["base_belief"]),
                   tuple(obj["bin_beliefs"]), tuple(float(w) for w in obj["bin_weights"]),
                   tuple(tuple(c) for c in obj.get("covariates", [])), obj.get("z_node", ""),
                   tuple(obj.get("z_levels", [])), obj.get("true_base"),
                   tuple(obj.get("true_bins", [])))


@dataclass(frozen=True)
class LieBaseline:
    """Cross-validated forest regressor of p*(x) and p*(x, z) from one-hot features."""

    n_trees: int = 200
    folds: int = 5
    max_depth: int | None = None


@dataclass(frozen=True)
class LieResult:
    deltas: tuple[float, ...]
    ratios: tuple[float, ...]
    median_ratio: float
    ci: BootstrapCI
    excluded_zero_base: int = 0
    baseline_median_ratio: float | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if any(v < 0 for v in self.deltas):
            raise ValueError("LIE residuals must be nonnegative")

    def to_json(self) -> dict:
        return {"test": "lie", "deltas": list(self.deltas), "ratios": list(self.ratios),
                "median_ratio": self.median_ratio, "ci": self.ci.to_json(),
                "excluded_zero_base": self.excluded_zero_base,
                "baseline_median_ratio": self.baseline_median_ratio, "notes": list(self.notes)}

    @classmethod
    def from_json(cls, obj) -> "LieResult":
        base = obj.get("baseline_median_ratio")
        return cls(tuple(float(v) for v in obj["deltas"]), tuple(float(v) for v in obj["ratios"]),
                   float(obj["median_ratio"]), BootstrapCI.from_json(obj["ci"]),
                   int(obj["excluded_zero_base"]), None if base is None else float(base),
                   tuple(obj.get("notes", [])))


def _one_hot(rows: Sequence[Sequence[str]]) -> np.ndarray:
    cols = []
    for pos in range(len(rows[0]) if rows else 0):
        values = [r[pos] for r in rows]
        for level in sorted(set(values)):
            cols.append([1.0 if v == level else 0.0 for v in values])
    return np.array(cols, dtype=float).T if cols else np.zeros((len(rows), 0))


def _baseline_ratio(triples: Sequence[LieTriple], spec: LieBaseline, rng_seed: int) -> float:
    from sklearn.ensemble import RandomForestRegressor
    from sklearn.model_selection import cross_val_predict

    if any(t.true_base is None or len(t.true_bins) != len(t.bin_weights) for t in triples):
        raise ValueError("baseline needs true_base and true_bins on every triple")
    rows, targets, owner = [], [], []
    for i, t in enumerate(triples):
        x = [v for _, v in t.covariates]
        rows.append(x + ["*"])
        targets.append(t.true_base)
        owner.append(i)
        for level, truth in zip(t.z_levels, t.true_bins):
            if truth is None:
                continue
            rows.append(x + [level])
            targets.append(truth)
            owner.append(i)
    features = _one_hot(rows)
    owner = np.array(owner)
    folds = grouped_folds(owner, min(spec.folds, len(triples)), rng_seed)
    model = RandomForestRegressor(n_estimators=spec.n_trees, max_depth=spec.max_depth,
                                  random_state=rng_seed, n_jobs=1)
    pred = cross_val_predict(model, features, np.array(targets),
                             groups=owner, cv=[(np.flatnonzero(folds != f), np.flatnonzero(folds == f))
                                               for f in range(folds.max() + 1)])
    ratios = []
    pos = 0
    for t in triples:
        base = pred[pos]
        pos += 1
        mix = 0.0
        for truth, weight in zip(t.true_bins, t.bin_weights):
            if truth is None:
                continue
            mix += pred[pos] * weight
            pos += 1
        if base > 0:
            ratios.append(abs(base - mix) / base)
    return float(np.median(ratios))


def lie_test(triples: Sequence[LieTriple], baseline: LieBaseline | None = None,
             rng_seed: int = 0, bootstraps: int = 500) -> LieResult:
    """Residuals of the marginal belief against the weight-averaged cell beliefs."""
    if not triples:
        raise ValueError("lie_test needs at least one triple")
    deltas = np.array([t.residual() for t in triples])
    base = np.array([t.base_belief for t in triples])
    positive = base > 0
    ratios = deltas[positive] / base[positive]
    notes = []
    if not positive.all():
        notes.append(f"{int((~positive).sum())} contexts with zero marginal belief excluded from ratios")
    if len(ratios) == 0:
        raise ValueError("every context has a zero marginal belief")
    median = float(np.median(ratios))
    ci = bootstrap_ci(np.median, ratios, replicates=bootstraps, rng_seed=rng_seed)
    base_ratio = _baseline_ratio(triples, baseline, rng_seed) if baseline is not None else None
    return LieResult(tuple(float(v) for v in deltas), tuple(float(v) for v in ratios), median, ci,
                     int((~positive).sum()), base_ratio, tuple(notes))


def lie_oracle_triples(net: BayesNet, contexts, z_node: str) -> list[LieTriple]:
    """Exact marginal and conditional posteriors of the target, read from the network."""
    triples = []
    z_levels = net.levels(z_node)
    for i, ctx in enumerate(contexts):
        ctx = tuple(tuple(c) for c in ctx)
        if z_node in dict(ctx):
            raise ValueError(f"z node {z_node!r} is already assigned in context {i}")
        if z_node == net.target:
            raise ValueError("z node must differ from the target")
        base = float(eliminate(net, net.target, ctx)[1])
        weights = eliminate(net, z_node, ctx)
        beliefs = []
        for j, w in enumerate(weights):
            if w == 0.0:
                beliefs.append(None)
                continue
            beliefs.append(float(eliminate(net, net.target, ctx + ((z_node, z_levels[j]),))[1]))
        triples.append(LieTriple(f"x{i:04d}", base, tuple(beliefs), tuple(float(w) for w in weights),
                                 ctx, z_node, z_levels, base, tuple(beliefs)))
    return triples


RESULT_TYPES = {"ci": CiTestResult, "predictive": PredictiveTestResult,
                "monotone": MonotoneTestResult, "consistency": ConsistencyResult,
                "lie": LieResult}


def result_from_json(obj) -> object:
    return RESULT_TYPES[obj["test"]].from_json(obj)
