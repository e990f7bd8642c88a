"""Record types, on-disk formats and dataset validation."""
from __future__ import annotations

import csv
import enum
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ActionLabel(str, enum.Enum):
    YES = "Yes"
    NO = "No"
    DEFER = "Defer"

    @classmethod
    def parse(cls, value: str) -> "ActionLabel":
        for label in cls:
            if label.value == value:
                return label
        raise ValueError(f"unknown action label {value!r}")

    @property
    def order(self) -> int:
        return _ACTION_ORDER[self]


ACTIONS: tuple[ActionLabel, ...] = (ActionLabel.YES, ActionLabel.NO, ActionLabel.DEFER)
_ACTION_ORDER = {a: i for i, a in enumerate(ACTIONS)}

# Fields of the JSONL record schema, in canonical output order.
RECORD_FIELDS = (
    "context_id", "covariates", "belief", "action", "outcome",
    "prompt_id", "repetition", "ground_truth", "forced_decision",
)


@dataclass(frozen=True)
class DecisionRecord:
    context_id: str
    covariates: tuple[tuple[str, str], ...]
    belief: float
    action: ActionLabel
    outcome: int
    prompt_id: str = "std"
    repetition: int = 0
    ground_truth: float | None = None
    forced_decision: ActionLabel | None = None

    def __post_init__(self):
        if not (0.0 <= self.belief <= 1.0):
            raise ValueError("belief out of range")
        if self.ground_truth is not None and not (0.0 <= self.ground_truth <= 1.0):
            raise ValueError("ground_truth out of range")
        if self.outcome not in (0, 1):
            raise ValueError("outcome must be 0 or 1")
        if self.repetition < 0:
            raise ValueError("repetition must be >= 0")
        if self.forced_decision is ActionLabel.DEFER:
            raise ValueError("forced_decision must be Yes or No")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.context_id, self.prompt_id, self.repetition)

    def to_json(self) -> dict:
        out = OrderedDict()
        out["context_id"] = self.context_id
        out["covariates"] = OrderedDict(self.covariates)
        out["belief"] = self.belief
        out["action"] = self.action.value
        out["outcome"] = self.outcome
        out["prompt_id"] = self.prompt_id
        out["repetition"] = self.repetition
        if self.ground_truth is not None:
            out["ground_truth"] = self.ground_truth
        if self.forced_decision is not None:
            out["forced_decision"] = self.forced_decision.value
        return out


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariate names, each with its declared level set."""

    variables: tuple[tuple[str, tuple[str, ...]], ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.variables)

    def levels(self, name: str) -> tuple[str, ...]:
        return dict(self.variables)[name]

    @classmethod
    def from_mapping(cls, mapping) -> "CovariateSchema":
        return cls(tuple((str(k), tuple(str(v) for v in levels)) for k, levels in mapping.items()))

    @classmethod
    def infer(cls, records: Iterable[DecisionRecord]) -> "CovariateSchema":
        names: list[str] = []
        levels: dict[str, set[str]] = {}
        for rec in records:
            for name, level in rec.covariates:
                if name not in levels:
                    names.append(name)
                    levels[name] = set()
                levels[name].add(level)
        return cls(tuple((n, tuple(sorted(levels[n]))) for n in names))

    def to_json(self) -> dict:
        return OrderedDict((n, list(lv)) for n, lv in self.variables)


@dataclass(frozen=True)
class Dataset:
    records: tuple[DecisionRecord, ...]
    schema: CovariateSchema = field(default_factory=lambda: CovariateSchema(()))

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        declared = dict(self.schema.variables)
        for rec in self.records:
            names = tuple(n for n, _ in rec.covariates)
            if names != self.schema.names:
                raise ValueError(
                    f"record {rec.key} covariates {names} do not match schema {self.schema.names}")
            for name, level in rec.covariates:
                if level not in declared[name]:
                    raise ValueError(f"record {rec.key}: level {level!r} not declared for {name!r}")

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_records(cls, records: Iterable[DecisionRecord],
                     schema: CovariateSchema | None = None) -> "Dataset":
        records = tuple(records)
        return cls(records, schema if schema is not None else CovariateSchema.infer(records))

    def sorted(self) -> "Dataset":
        """Canonical ordering: by (context_id, prompt_id, repetition)."""
        return Dataset(tuple(sorted(self.records, key=lambda r: r.key)), self.schema)

    def for_prompt(self, prompt_id: str) -> "Dataset":
        return Dataset(tuple(r for r in self.records if r.prompt_id == prompt_id), self.schema)

    @property
    def prompt_ids(self) -> list[str]:
        return sorted({r.prompt_id for r in self.records})

    def beliefs(self) -> np.ndarray:
        return np.array([r.belief for r in self.records], dtype=float)

    def outcomes(self) -> np.ndarray:
        return np.array([r.outcome for r in self.records], dtype=int)

    def action_codes(self) -> np.ndarray:
        """Actions as integers 0=Yes, 1=No, 2=Defer."""
        return np.array([r.action.order for r in self.records], dtype=int)

    def group_codes(self) -> np.ndarray:
        """Integer group index per record, numbered in sorted context_id order."""
        ids = sorted({r.context_id for r in self.records})
        index = {c: i for i, c in enumerate(ids)}
        return np.array([index[r.context_id] for r in self.records], dtype=int)

    def covariate_matrix(self) -> np.ndarray:
        """One-hot encoding of covariates following the schema's level order."""
        cols = []
        for name, levels in self.schema.variables:
            pos = self.schema.names.index(name)
            values = [r.covariates[pos][1] for r in self.records]
            for level in levels:
                cols.append([1.0 if v == level else 0.0 for v in values])
        if not cols:
            return np.zeros((len(self.records), 0))
        return np.array(cols, dtype=float).T


# --------------------------------------------------------------------------- errors


@dataclass(frozen=True)
class RowIssue:
    line: int
    field: str
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.field}: {self.message}"


class RecordError(ValueError):
    """Raised when an input file contains malformed or conflicting rows."""

    def __init__(self, issues: Sequence[RowIssue]):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


class DuplicateRecordError(RecordError):
    pass


# --------------------------------------------------------------------------- parsing


def _parse_row(row: dict, line: int, issues: list[RowIssue]) -> DecisionRecord | None:
    before = len(issues)

    def need(name):
        if name not in row or row[name] is None or row[name] == "":
            issues.append(RowIssue(line, name, "field missing"))
            return None
        return row[name]

    context_id = need("context_id")
    covariates = row.get("covariates", {})
    if not isinstance(covariates, dict):
        issues.append(RowIssue(line, "covariates", "must be an object of string to string"))
        covariates = {}

    belief = need("belief")
    if belief is not None:
        try:
            belief = float(belief)
        except (TypeError, ValueError):
            issues.append(RowIssue(line, "belief", "not a number"))
            belief = None
        else:
            if not math.isfinite(belief) or not 0.0 <= belief <= 1.0:
                issues.append(RowIssue(line, "belief", "belief out of range"))

    action = need("action")
    if action is not None:
        try:
            action = ActionLabel.parse(str(action))
        except ValueError:
            issues.append(RowIssue(line, "action", f"unknown action label {action!r}"))

    outcome = need("outcome")
    if outcome is not None:
        try:
            outcome = int(outcome)
        except (TypeError, ValueError):
            outcome = -1
        if outcome not in (0, 1):
            issues.append(RowIssue(line, "outcome", "outcome must be 0 or 1"))

    prompt_id = need("prompt_id")
    repetition = need("repetition")
    if repetition is not None:
        try:
            repetition = int(repetition)
            if repetition < 0:
                raise ValueError
        except (TypeError, ValueError):
            issues.append(RowIssue(line, "repetition", "must be an integer >= 0"))

    ground_truth = row.get("ground_truth")
    if ground_truth in ("", None):
        ground_truth = None
    else:
        try:
            ground_truth = float(ground_truth)
            if not 0.0 <= ground_truth <= 1.0:
                issues.append(RowIssue(line, "ground_truth", "ground_truth out of range"))
        except (TypeError, ValueError):
            issues.append(RowIssue(line, "ground_truth", "not a number"))

    forced = row.get("forced_decision")
    if forced in ("", None):
        forced = None
    elif forced not in ("Yes", "No"):
        issues.append(RowIssue(line, "forced_decision", "must be Yes or No"))
    else:
        forced = ActionLabel.parse(forced)

    if len(issues) > before:
        return None
    return DecisionRecord(
        context_id=str(context_id),
        covariates=tuple((str(k), str(v)) for k, v in covariates.items()),
        belief=belief,
        action=action,
        outcome=outcome,
        prompt_id=str(prompt_id),
        repetition=repetition,
        ground_truth=ground_truth,
        forced_decision=forced,
    )


def _read_jsonl(path: Path) -> list[tuple[int, dict | None]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError:
                obj = None
            rows.append((lineno, obj if isinstance(obj, dict) else None))
    return rows


def _read_csv(path: Path) -> list[tuple[int, dict | None]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for i, raw in enumerate(reader, start=2):
            row = {k: v for k, v in raw.items() if k in RECORD_FIELDS}
            row["covariates"] = {k: v for k, v in raw.items() if k not in RECORD_FIELDS}
            rows.append((i, row))
    return rows


def load_records(path, format: str | None = None,
                 schema: CovariateSchema | None = None) -> Dataset:
    """Read a JSONL or CSV decision-record file.

    All malformed rows are collected and raised together as a
    :class:`RecordError`; duplicate (context_id, prompt_id, repetition) keys
    raise :class:`DuplicateRecordError`. When ``schema`` is omitted it is
    inferred from the data (levels sorted).
    """
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    if fmt not in ("jsonl", "csv"):
        raise ValueError(f"unsupported format {fmt!r}")
    rows = _read_jsonl(path) if fmt == "jsonl" else _read_csv(path)

    issues: list[RowIssue] = []
    parsed: list[tuple[int, DecisionRecord]] = []
    for line, row in rows:
        if row is None:
            issues.append(RowIssue(line, "<row>", "not a JSON object"))
            continue
        rec = _parse_row(row, line, issues)
        if rec is not None:
            parsed.append((line, rec))

    if schema is not None:
        declared = dict(schema.variables)
        checked = []
        for line, rec in parsed:
            cov = dict(rec.covariates)
            bad = False
            if set(cov) != set(declared):
                issues.append(RowIssue(line, "covariates",
                                       f"names {sorted(cov)} do not match schema {list(schema.names)}"))
                bad = True
            else:
                for name, level in cov.items():
                    if level not in declared[name]:
                        issues.append(RowIssue(line, f"covariates.{name}", f"undeclared level {level!r}"))
                        bad = True
            if not bad:
                ordered = tuple((n, cov[n]) for n in schema.names)
                rec = DecisionRecord(**{**rec.__dict__, "covariates": ordered})
                checked.append((line, rec))
        parsed = checked
    if issues:
        raise RecordError(issues)

    seen: dict[tuple, int] = {}
    dups = []
    for line, rec in parsed:
        if rec.key in seen:
            dups.append(RowIssue(line, "key", f"duplicate key {rec.key} (first at line {seen[rec.key]})"))
        else:
            seen[rec.key] = line
    if dups:
        raise DuplicateRecordError(dups)

    records = tuple(rec for _, rec in parsed)
    if schema is None:
        schema = CovariateSchema.infer(records)
        # inferred order follows the first record; reorder the rest to match
        records = tuple(
            DecisionRecord(**{**r.__dict__,
                              "covariates": tuple((n, dict(r.covariates).get(n, "")) for n in schema.names)})
            for r in records)
    return Dataset(records, schema)


def dump_records(dataset: Dataset, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for rec in dataset.records:
                fh.write(json.dumps(rec.to_json()) + "\n")
    elif fmt == "csv":
        cov_names = list(dataset.schema.names)
        header = [f for f in RECORD_FIELDS if f != "covariates"] + cov_names
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for rec in dataset.records:
                d = rec.to_json()
                cov = d.pop("covariates")
                row = [repr(d.get(f)) if isinstance(d.get(f), float) else d.get(f, "")
                       for f in header[: len(header) - len(cov_names)]]
                writer.writerow(row + [cov[n] for n in cov_names])
    else:
        raise ValueError(f"unsupported format {fmt!r}")


# --------------------------------------------------------------------------- validation


@dataclass(frozen=True)
class GroupSummary:
    context_id: str
    n_records: int
    repetitions: int
    prompt_ids: tuple[str, ...]
    consistent: bool


@dataclass(frozen=True)
class ValidationReport:
    groups: tuple[GroupSummary, ...]
    flags: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.flags


def group_by_context(d: Dataset) -> list[tuple[str, list[DecisionRecord]]]:
    groups: dict[str, list[DecisionRecord]] = {}
    for rec in d.records:
        groups.setdefault(rec.context_id, []).append(rec)
    return [(cid, sorted(groups[cid], key=lambda r: (r.prompt_id, r.repetition)))
            for cid in sorted(groups)]


def validate_dataset(d: Dataset) -> ValidationReport:
    summaries = []
    flags = []
    for cid, recs in group_by_context(d):
        consistent = len({r.covariates for r in recs}) == 1
        if not consistent:
            flags.append(cid)
        summaries.append(GroupSummary(
            context_id=cid,
            n_records=len(recs),
            repetitions=len({r.repetition for r in recs}),
            prompt_ids=tuple(sorted({r.prompt_id for r in recs})),
            consistent=consistent,
        ))
    return ValidationReport(tuple(summaries), tuple(flags))
