"""Run configurations and the audit / power-study pipelines behind the CLI."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import audits, reports, schema
from .agents import AgentSpec, run_episode
from .audits import LieBaseline, LieTriple
from .bayesnet import BayesNet, layered_network, random_binary_dag
from .core import ActionLabel, Dataset
from .estimators.gbdt import GbdtParams

TESTS = ("ci", "predictive", "monotone", "consistency", "lie")
DEFAULT_PAIRS = tuple(tuple(p) for p in reports.PAIR_COLUMNS)
CONDITIONING_FLAGS = {"belief": "belief_only", "belief+context": "belief_plus_context"}


@dataclass(frozen=True)
class AuditConfig:
    tests: tuple[str, ...] = TESTS
    k: int = 3
    bootstraps: int = 500
    n_perm: int = 199
    bins: int = 5
    alpha: float = 0.05
    folds: int = 5
    depth: int = 6
    iterations: int = 1000
    pairs: tuple[tuple[str, str], ...] = DEFAULT_PAIRS
    variant: str = "raw"
    # None runs the predictive test under both conditionings
    conditioning: str | None = None
    prompt: str = "std"
    exact: str = "fisher"
    lie_baseline: bool = False
    seed: int = 0

    def __post_init__(self):
        unknown = [t for t in self.tests if t not in TESTS]
        if unknown:
            raise ValueError(f"unknown tests {unknown}; choose from {TESTS}")
        for pair in self.pairs:
            for a in pair:
                ActionLabel(a)
        if self.conditioning is not None and self.conditioning not in audits.CONDITIONINGS:
            raise ValueError(f"unknown conditioning {self.conditioning!r}")

    def to_json(self) -> dict:
        out = asdict(self)
        out["tests"] = list(self.tests)
        out["pairs"] = [list(p) for p in self.pairs]
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "AuditConfig":
        names = {f.name for f in fields(cls)}
        kw = {k: v for k, v in obj.items() if k in names}
        if "tests" in kw:
            kw["tests"] = tuple(kw["tests"])
        if "pairs" in kw:
            kw["pairs"] = tuple(tuple(p) for p in kw["pairs"])
        return cls(**kw)


def _error(exc: Exception) -> dict:
    return {"error": f"{type(exc).__name__}: {exc}"}


def _audit_units(d: Dataset, cfg: AuditConfig, triples: Sequence[LieTriple] | None) -> list[tuple[str, Callable]]:
    """(name, thunk) per result file; thunks are independent and pure."""
    main = d.for_prompt(cfg.prompt) if cfg.prompt in d.prompt_ids else d
    units: list[tuple[str, Callable]] = []
    if "ci" in cfg.tests:
        units.append(("ci", lambda: audits.ci_test(main, cfg.k, cfg.bootstraps, cfg.n_perm, cfg.variant,
                                                     cfg.conditioning or "belief_only", cfg.seed)))
    if "predictive" in cfg.tests:
        conds = [cfg.conditioning] if cfg.conditioning else list(audits.CONDITIONINGS)
        for cond in conds:
            units.append((f"predictive_{cond}", lambda cond=cond: audits.predictive_sufficiency_test(
                main, cond, cfg.folds, cfg.depth, cfg.iterations, cfg.bootstraps, cfg.seed,
                GbdtParams())))
    if "monotone" in cfg.tests:
        for pair in cfg.pairs:
            units.append((f"monotone_{pair[0]}_{pair[1]}", lambda pair=pair: audits.monotone_pairwise_test(
                main, pair, cfg.bins, cfg.alpha, cfg.seed, cfg.exact)))
    if "consistency" in cfg.tests:
        units.append(("consistency", lambda: audits.prompt_consistency(d, cfg.prompt)))
    if "lie" in cfg.tests:
        if triples:
            units.append(("lie", lambda: audits.lie_test(
                triples, LieBaseline() if cfg.lie_baseline else None, cfg.seed, cfg.bootstraps)))
        else:
            units.append(("lie", lambda: (_ for _ in ()).throw(ValueError("no LIE triples supplied"))))
    return units


def run_audit(d: Dataset, cfg: AuditConfig, triples: Sequence[LieTriple] | None = None,
              jobs: int = 1) -> dict[str, object]:
    """Run the selected tests; a failing test yields an error entry, not an exception."""
    units = _audit_units(d, cfg, triples)

    def call(unit):
        name, thunk = unit
        try:
            return name, thunk()
        except (ValueError, RuntimeError) as exc:
            return name, _error(exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return dict(pool.map(call, units))
    return dict(call(u) for u in units)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n"


def result_json(result) -> dict:
    return result if isinstance(result, dict) else result.to_json()


def write_bundle(results: Mapping[str, object], cfg: AuditConfig, out_dir, formats: Sequence[str],
                 label: str = "run") -> list[Path]:
    """One JSON file per result, an index, and the requested tables.

    Everything is checked against the shipped schemas before the first write.
    """
    docs = {name: result_json(res) for name, res in results.items()}
    index = {"config": cfg.to_json(),
             "results": {n: doc.get("test", "error") for n, doc in docs.items()},
             "errors": {n: doc["error"] for n, doc in docs.items() if "error" in doc}}
    for doc in docs.values():
        schema.validate("result", doc)
    schema.validate("bundle", index)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, doc in docs.items():
        path = out / f"{name}.json"
        path.write_text(_dumps(doc), encoding="utf-8")
        written.append(path)
    (out / "bundle.json").write_text(_dumps(index), encoding="utf-8")
    written.append(out / "bundle.json")
    tables = render_tables(results, label)
    for fmt in formats:
        if fmt == "json":
            continue
        path = out / f"tables.{fmt}"
        path.write_text(tables[fmt], encoding="utf-8")
        written.append(path)
    return written


def _ok(results, name):
    r = results.get(name)
    return None if r is None or isinstance(r, dict) else r


def render_tables(results: Mapping[str, object], label: str) -> dict[str, str]:
    suff = reports.SufficiencyRow.from_results(label, _ok(results, "ci"),
                                              _ok(results, "predictive_belief_only"),
                                              _ok(results, "predictive_belief_plus_context"))
    mono = reports.MonotoneRow.from_results(
        label, [r for n, r in results.items() if n.startswith("monotone_") and not isinstance(r, dict)])
    cons = _ok(results, "consistency")
    md = ["## Belief sufficiency\n", reports.sufficiency_markdown([suff]),
          "\n## Monotone pairwise shares (% significant violations)\n", reports.monotone_markdown([mono])]
    csv = [reports.sufficiency_csv([suff]), "\n", reports.monotone_csv([mono])]
    if cons is not None:
        row = reports.ConsistencyRow.from_result(label, cons)
        md += ["\n## Prompt consistency\n", reports.consistency_markdown([row])]
        csv += ["\n", reports.consistency_csv([row])]
    return {"md": "".join(md), "csv": "".join(csv)}


# --------------------------------------------------------------------------- networks and agents


def load_net(spec) -> BayesNet:
    """A network from a JSON file path or a preset mapping like {"preset": "layered", "seed": 0}."""
    if isinstance(spec, (str, Path)):
        return BayesNet.load(spec)
    spec = dict(spec)
    preset = spec.pop("preset")
    if preset == "layered":
        return layered_network(**spec)
    if preset == "random":
        return random_binary_dag(**spec)
    raise ValueError(f"unknown network preset {preset!r}")


def load_agent(spec) -> AgentSpec:
    if isinstance(spec, (str, Path)):
        return AgentSpec.load(spec)
    return AgentSpec.from_json(spec)


# --------------------------------------------------------------------------- power study


@dataclass(frozen=True)
class PowerStudyConfig:
    net: object
    agents: Mapping[str, object]
    sizes: tuple[int, ...] = (200,)
    repetitions: int = 5
    seeds: int = 20
    first_seed: int = 0
    audit: AuditConfig = field(default_factory=lambda: AuditConfig(tests=("ci", "predictive", "monotone")))

    @classmethod
    def from_json(cls, obj: Mapping, base_dir: Path | None = None) -> "PowerStudyConfig":
        """File references in ``net`` and ``agents`` resolve against ``base_dir``."""
        def resolve(ref):
            if isinstance(ref, str) and base_dir is not None:
                return str(Path(base_dir) / ref)
            return ref
        audit = AuditConfig.from_json({"tests": ["ci", "predictive", "monotone"], **obj.get("audit", {})})
        agents = {name: resolve(ref) for name, ref in obj["agents"].items()}
        return cls(resolve(obj["net"]), agents, tuple(obj.get("sizes", [200])),
                   int(obj.get("repetitions", 5)), int(obj.get("seeds", 20)),
                   int(obj.get("first_seed", 0)), audit)


def rejections(results: Mapping[str, object], alpha: float) -> dict[str, bool | None]:
    """Per-test rejection flags used to tabulate size and power."""
    out: dict[str, bool | None] = {}
    for name, r in results.items():
        if isinstance(r, dict):
            out[name] = None
        elif isinstance(r, audits.CiTestResult):
            out[name] = r.perm_pvalue <= alpha
        elif isinstance(r, audits.PredictiveTestResult):
            out[name] = r.excludes_zero()
        elif isinstance(r, audits.MonotoneTestResult):
            out[name] = len(r.significant) > 0
    return out


def _study_cell(args):
    net_spec, agent_name, agent_spec, n, reps, seed, audit = args
    net = load_net(net_spec)
    d = run_episode(net, load_agent(agent_spec), n, reps, seed)
    cfg = AuditConfig.from_json({**audit.to_json(), "seed": seed})
    return agent_name, n, seed, rejections(run_audit(d, cfg), cfg.alpha)


def power_study(cfg: PowerStudyConfig, jobs: int = 1) -> dict:
    """Rejection rate of each test for every (agent, n) cell over the seed range."""
    cells = [(cfg.net, name, spec, n, cfg.repetitions, seed, cfg.audit)
             for name, spec in cfg.agents.items() for n in cfg.sizes
             for seed in range(cfg.first_seed, cfg.first_seed + cfg.seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_study_cell, cells))
    else:
        rows = [_study_cell(c) for c in cells]
    table: dict[str, dict[str, dict[str, float | None]]] = {}
    for name, n, _, flags in rows:
        cell = table.setdefault(name, {}).setdefault(str(n), {})
        for test, flag in flags.items():
            cell.setdefault(test, []).append(flag)
    rates = {name: {n: {t: (None if any(f is None for f in fl) else sum(fl) / len(fl))
                        for t, fl in tests.items()} for n, tests in by_n.items()}
             for name, by_n in table.items()}
    return {"seeds": cfg.seeds, "first_seed": cfg.first_seed, "repetitions": cfg.repetitions,
            "rejection_rates": rates}


def power_study_markdown(study: Mapping) -> str:
    tests = sorted({t for by_n in study["rejection_rates"].values() for cell in by_n.values() for t in cell})
    header = "| Agent | n | " + " | ".join(tests) + " |"
    lines = [header, "|:---|---:|" + "---:|" * len(tests)]
    for name, by_n in study["rejection_rates"].items():
        for n, cell in by_n.items():
            vals = ["--" if cell.get(t) is None else f"{cell[t]:.2f}" for t in tests]
            lines.append(f"| {name} | {n} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"


def power_study_csv(study: Mapping) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["agent", "n", "test", "rejection_rate"])
    for name, by_n in study["rejection_rates"].items():
        for n, cell in by_n.items():
            for t in sorted(cell):
                w.writerow([name, n, t, "" if cell[t] is None else f"{cell[t]:.4f}"])
    return buf.getvalue()
