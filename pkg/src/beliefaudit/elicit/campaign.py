"""Resumable elicitation campaigns against a chat-completion endpoint.

Beliefs and decisions are requested in separate single-turn exchanges. Every
output file is append-only JSONL, so an interrupted run can be resumed by
skipping keys that are already on disk.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from ..audits import LieTriple
from ..bayesnet import bernoulli
from ..core import (ActionLabel, CovariateSchema, Dataset, DecisionRecord, load_records,
                    validate_dataset)
from .client import EndpointConfig, EndpointError, ExchangeLog, chat_complete
from .parsing import ParseError, parse_decision_response, parse_probability_response
from .prompts import STANDARD_TEMPLATES, Phrasebook, describe_context, render_prompt

PROBABILITY_PROMPTS = ("std", "mse_rule", "abs_rule", "bayes")


@dataclass(frozen=True)
class CampaignContext:
    context_id: str
    covariates: tuple[tuple[str, str], ...]
    ground_truth: float | None = None
    # realized outcome: one value for all repetitions or one per repetition
    outcome: int | tuple[int, ...] | None = None

    def outcome_for(self, index: int, repetition: int, repetitions: int, rng_seed: int) -> int:
        """Recorded outcome; drawn from ground_truth like simulated episodes when not given."""
        if isinstance(self.outcome, tuple):
            return int(self.outcome[repetition])
        if self.outcome is not None:
            return int(self.outcome)
        if self.ground_truth is None:
            raise ValueError(f"context {self.context_id} needs an outcome or a ground_truth")
        return bernoulli(self.ground_truth, rng_seed, index * repetitions + repetition)


@dataclass(frozen=True)
class LieSpec:
    """Auxiliary variable z used for the iterated-expectation check."""

    z_node: str
    name: str  # phrase used for <auxiliary_variable_name>
    levels: tuple[str, ...]
    labels: tuple[str, ...]  # category names shown to the model
    conditions: tuple[str, ...]  # phrase per level for <auxiliary_variable_condition>

    @classmethod
    def from_json(cls, obj: Mapping) -> "LieSpec":
        levels = tuple(obj["levels"])
        labels = tuple(obj.get("labels", levels))
        conditions = tuple(obj["conditions"][lv] for lv in levels)
        return cls(obj["z_node"], obj.get("name", obj["z_node"]), levels, labels, conditions)


@dataclass(frozen=True)
class Campaign:
    contexts: tuple[CampaignContext, ...]
    clinical_question: str
    prompts: tuple[str, ...] = ("std",)
    repetitions: int = 5
    phrasebook: Phrasebook = field(default_factory=Phrasebook)
    lie: LieSpec | None = None
    max_in_flight: int = 4
    normalize: bool = True  # False quarantines answers that do not sum to 1

    def __post_init__(self):
        unknown = [p for p in self.prompts if p not in PROBABILITY_PROMPTS]
        if unknown:
            raise ValueError(f"unknown probability prompts {unknown}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        ids = [c.context_id for c in self.contexts]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate context ids in campaign")
        for c in self.contexts:
            if c.outcome is None and c.ground_truth is None:
                raise ValueError(f"context {c.context_id} needs an outcome or a ground_truth")
            if isinstance(c.outcome, tuple) and len(c.outcome) != self.repetitions:
                raise ValueError(f"context {c.context_id} lists {len(c.outcome)} outcomes "
                                 f"for {self.repetitions} repetitions")

    @classmethod
    def from_json(cls, obj: Mapping, base_dir: Path | None = None) -> "Campaign":
        raw = obj["contexts"]
        if isinstance(raw, Mapping) and "file" in raw:
            path = Path(raw["file"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            raw = [json.loads(x) for x in path.read_text().splitlines() if x.strip()]
        contexts = tuple(CampaignContext(c["context_id"], tuple((k, str(v)) for k, v in c["covariates"].items()),
                                         c.get("ground_truth"), _outcome(c.get("outcome")))
                         for c in raw)
        return cls(contexts, obj["clinical_question"], tuple(obj.get("prompts", ["std"])),
                   int(obj.get("repetitions", 5)), Phrasebook.from_json(obj.get("phrasebook", {})),
                   LieSpec.from_json(obj["lie"]) if obj.get("lie") else None,
                   int(obj.get("max_in_flight", 4)), bool(obj.get("normalize", True)))


def _outcome(value):
    return tuple(int(v) for v in value) if isinstance(value, list) else value


@dataclass(frozen=True)
class CampaignPaths:
    root: Path

    @property
    def records(self) -> Path:
        return self.root / "records.jsonl"

    @property
    def decisions(self) -> Path:
        return self.root / "decisions.jsonl"

    @property
    def lie_triples(self) -> Path:
        return self.root / "lie_triples.jsonl"

    @property
    def exchanges(self) -> Path:
        return self.root / "exchanges.jsonl"

    @property
    def quarantine(self) -> Path:
        return self.root / "quarantine.jsonl"


@dataclass(frozen=True)
class CampaignOutcome:
    dataset: Dataset
    triples: tuple[LieTriple, ...]
    new_records: int
    new_decisions: int
    quarantined: int


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [json.loads(x) for x in path.read_text(encoding="utf-8").splitlines() if x.strip()]


def _append(path: Path, obj: Mapping) -> None:
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=False) + "\n")


class _Requester:
    """Issues one prompt, parses it, retries once on a parse failure."""

    def __init__(self, cfg: EndpointConfig, log: ExchangeLog, rng_seed: int, session, sleep):
        self.cfg, self.log, self.seed, self.session, self.sleep = cfg, log, rng_seed, session, sleep

    def __call__(self, task):
        exchange_id, prompt, parse, seed_index = task
        errors = []
        for attempt in range(2):
            try:
                text = chat_complete(self.cfg, prompt, rng_seed=self.seed * 1_000_003 + seed_index * 2 + attempt,
                                     log=self.log, exchange_id=f"{exchange_id}#{attempt + 1}",
                                     session=self.session, sleep=self.sleep)
            except EndpointError as exc:
                return None, {"error": str(exc), "text": getattr(exc, "body", None)}
            try:
                return parse(text), None
            except ParseError as exc:
                errors.append({"error": str(exc), "text": text})
        return None, errors[-1]


def run_elicitation(campaign: Campaign, cfg: EndpointConfig, output_dir, rng_seed: int = 0,
                    session=None, sleep: Callable[[float], None] | None = None,
                    progress: Callable[[str], None] | None = None) -> CampaignOutcome:
    """Run or resume a campaign and return the persisted dataset and LIE triples."""
    cfg.token()  # fail before any work if the credential is missing
    paths = CampaignPaths(Path(output_dir))
    paths.root.mkdir(parents=True, exist_ok=True)
    log = ExchangeLog(paths.exchanges)
    requester = _Requester(cfg, log, rng_seed, session, sleep or time.sleep)
    say = progress or (lambda msg: None)

    done_records = {(r["context_id"], r["prompt_id"], r["repetition"]) for r in _read_jsonl(paths.records)}
    decisions = {(d["context_id"], d["repetition"]): d for d in _read_jsonl(paths.decisions)}
    done_triples = {t["context_id"] for t in _read_jsonl(paths.lie_triples)}
    quarantined = 0

    def quarantine(kind, cid, pid, rep, info):
        nonlocal quarantined
        quarantined += 1
        _append(paths.quarantine, {"kind": kind, "context_id": cid, "prompt_id": pid,
                                   "repetition": rep, **info})

    def describe(ctx):
        return describe_context(ctx.covariates, campaign.phrasebook)

    def probability_parser(labels):
        def parse(text):
            parsed = parse_probability_response(text, labels)
            if parsed.was_normalized and not campaign.normalize:
                raise ParseError(f"probabilities sum to {sum(parsed.raw)}, not 1")
            return parsed
        return parse

    # decisions: one per (context, repetition) still needing a record
    position = {ctx.context_id: i for i, ctx in enumerate(campaign.contexts)}
    needed = [(ctx, pid, rep) for ctx in campaign.contexts for rep in range(campaign.repetitions)
              for pid in campaign.prompts if (ctx.context_id, pid, rep) not in done_records]
    decision_tasks = []
    for ctx, _, rep in needed:
        key = (ctx.context_id, rep)
        if key in decisions or any(t[0] == key for t in decision_tasks):
            continue
        prompt = render_prompt(STANDARD_TEMPLATES["decision"],
                               {"patient_description": describe(ctx),
                                "clinical_question": campaign.clinical_question})
        decision_tasks.append((key, (f"decision:{ctx.context_id}:{rep}", prompt,
                                     parse_decision_response, len(decision_tasks))))
    new_decisions = 0
    with ThreadPoolExecutor(max_workers=max(1, campaign.max_in_flight)) as pool:
        for (key, _), (parsed, err) in zip(decision_tasks, pool.map(requester, [t for _, t in decision_tasks])):
            if parsed is None:
                quarantine("decision", key[0], "decision", key[1], err)
                continue
            action, forced = parsed
            row = {"context_id": key[0], "repetition": key[1], "action": action.value,
                   "forced_decision": forced.value}
            _append(paths.decisions, row)
            decisions[key] = row
            new_decisions += 1
    say(f"decisions: {new_decisions} new, {len(decisions)} total")

    belief_tasks = []
    for ctx, pid, rep in needed:
        prompt = render_prompt(STANDARD_TEMPLATES[pid], {"patient_description": describe(ctx),
                                                          "clinical_question": campaign.clinical_question})
        belief_tasks.append(((ctx, pid, rep), (f"belief:{ctx.context_id}:{pid}:{rep}", prompt,
                                               probability_parser(("No", "Yes")),
                                               100_000 + len(belief_tasks))))
    new_records = 0
    with ThreadPoolExecutor(max_workers=max(1, campaign.max_in_flight)) as pool:
        for ((ctx, pid, rep), _), (parsed, err) in zip(belief_tasks, pool.map(requester, [t for _, t in belief_tasks])):
            if parsed is None:
                quarantine("belief", ctx.context_id, pid, rep, err)
                continue
            decision = decisions.get((ctx.context_id, rep))
            if decision is None:
                quarantine("belief", ctx.context_id, pid, rep, {"error": "no decision for this repetition"})
                continue
            outcome = ctx.outcome_for(position[ctx.context_id], rep, campaign.repetitions, rng_seed)
            rec = DecisionRecord(ctx.context_id, ctx.covariates, parsed.value("Yes"),
                                 ActionLabel(decision["action"]), outcome, pid, rep, ctx.ground_truth,
                                 ActionLabel(decision["forced_decision"]))
            _append(paths.records, rec.to_json())
            new_records += 1
    say(f"records: {new_records} new")

    if campaign.lie is not None:
        _run_lie(campaign, paths, requester, done_triples, quarantine, probability_parser)

    dataset = load_records(paths.records) if paths.records.exists() else Dataset((), CovariateSchema(()))
    report = validate_dataset(dataset)
    if not report.ok:
        raise ValueError(f"campaign records have inconsistent covariates in contexts {report.flags}")
    triples = tuple(LieTriple.from_json(t) for t in _read_jsonl(paths.lie_triples))
    say(f"quarantined: {quarantined}")
    return CampaignOutcome(dataset, triples, new_records, new_decisions, quarantined)


def _run_lie(campaign, paths, requester, done_triples, quarantine, probability_parser):
    spec: LieSpec = campaign.lie
    records = _read_jsonl(paths.records)
    for i, ctx in enumerate(campaign.contexts):
        if ctx.context_id in done_triples:
            continue
        if spec.z_node in dict(ctx.covariates):
            raise ValueError(f"z node {spec.z_node!r} is part of context {ctx.context_id}")
        desc = describe_context(ctx.covariates, campaign.phrasebook)
        base_vals = [r["belief"] for r in records if r["context_id"] == ctx.context_id and r["prompt_id"] == "std"]
        tasks = [(f"next_state:{ctx.context_id}",
                  render_prompt(STANDARD_TEMPLATES["next_state"],
                                {"patient_description": desc, "auxiliary_variable_name": spec.name,
                                 "labels": spec.labels}),
                  probability_parser(spec.labels), 200_000 + i * 64)]
        for j, condition in enumerate(spec.conditions):
            tasks.append((f"conditional:{ctx.context_id}:{spec.levels[j]}",
                          render_prompt(STANDARD_TEMPLATES["conditional"],
                                        {"patient_description": desc, "auxiliary_variable_condition": condition,
                                         "clinical_question": campaign.clinical_question}),
                          probability_parser(("No", "Yes")), 200_000 + i * 64 + 1 + j))
        if not base_vals:
            tasks.append((f"belief:{ctx.context_id}:std:lie",
                          render_prompt(STANDARD_TEMPLATES["std"],
                                        {"patient_description": desc,
                                         "clinical_question": campaign.clinical_question}),
                          probability_parser(("No", "Yes")), 200_000 + i * 64 + 63))
        results = [requester(t) for t in tasks]
        failed = [(t[0], err) for t, (parsed, err) in zip(tasks, results) if parsed is None]
        if failed:
            quarantine("lie", ctx.context_id, failed[0][0], 0, failed[0][1])
            continue
        weights = results[0][0].normalized
        cond = [r[0].value("Yes") for r in results[1:1 + len(spec.levels)]]
        base = float(np.mean(base_vals)) if base_vals else results[-1][0].value("Yes")
        triple = LieTriple(ctx.context_id, base, tuple(cond), tuple(weights), ctx.covariates,
                           spec.z_node, spec.levels)
        _append(paths.lie_triples, triple.to_json())
