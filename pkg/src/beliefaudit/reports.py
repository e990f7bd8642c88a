"""Markdown and CSV tables in the layouts used for published audit summaries.

Every emitter has a parser so that a formatted table reads back to the same
numbers and re-emits byte-identically.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from typing import Sequence

from .audits import CiTestResult, ConsistencyResult, MonotoneTestResult, PredictiveTestResult

PAIR_COLUMNS = {("Yes", "No"): "Y/(N+Y)", ("Yes", "Defer"): "Y/(D+Y)", ("Defer", "No"): "D/(N+D)"}
CONSISTENCY_COLUMNS = ("Std", "MSE", "Abs", "Bayes")
# prompt ids whose drift fills the MSE / Abs / Bayes columns
CONSISTENCY_PROMPTS = {"MSE": "mse_rule", "Abs": "abs_rule", "Bayes": "bayes"}
GROUND_TRUTH_COLUMNS = ("Standard", "MSE", "Bayesian", "Absolute")
MISSING = "--"


def _fmt(value: float | None, digits: int) -> str:
    return MISSING if value is None else f"{value:.{digits}f}"


def _fmt_ci(ci: tuple[float, float] | None, digits: int) -> str:
    return MISSING if ci is None else f"[{ci[0]:.{digits}f}, {ci[1]:.{digits}f}]"


def _fmt_short(value: float | None) -> str:
    """Four decimals without the leading zero, e.g. .0591."""
    if value is None:
        return MISSING
    text = f"{value:.4f}"
    return text[1:] if text.startswith("0.") else text


def _num(text: str) -> float | None:
    text = text.strip()
    return None if text == MISSING else float(text)


def _ci(text: str) -> tuple[float, float] | None:
    text = text.strip()
    if text == MISSING:
        return None
    m = re.fullmatch(r"\[\s*(-?[\d.]+),\s*(-?[\d.]+)\]", text)
    if not m:
        raise ValueError(f"malformed interval {text!r}")
    return float(m.group(1)), float(m.group(2))


def _md_rows(text: str) -> list[list[str]]:
    rows = []
    for line in text.strip().splitlines():
        line = line.strip()
        if not line.startswith("|") or set(line) <= set("|-: "):
            continue
        rows.append([c.strip() for c in line.strip("|").split("|")])
    return rows


def _md(header: Sequence[str], body: Sequence[Sequence[str]], aligns: Sequence[str]) -> str:
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join(":---" if a == "l" else "---:" for a in aligns) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"


def _csv(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(body)
    return buf.getvalue()


# --------------------------------------------------------------------------- sufficiency table

SUFFICIENCY_BLOCKS = ("kNN CMI: I(A;θ \\| p)", "CB: A~p v. A~(p,θ)", "CB: A~(p,x) v. A~(p,x,θ)")
SUFFICIENCY_HEADER = ("Dataset / Model", "CMI", "95% CI", "% Impr", "95% CI", "% Impr", "95% CI")


@dataclass(frozen=True)
class SufficiencyRow:
    label: str
    cmi: float | None = None
    cmi_ci: tuple[float, float] | None = None
    impr: float | None = None
    impr_ci: tuple[float, float] | None = None
    impr_context: float | None = None
    impr_context_ci: tuple[float, float] | None = None

    @classmethod
    def from_results(cls, label: str, ci: CiTestResult | None = None,
                     predictive: PredictiveTestResult | None = None,
                     predictive_context: PredictiveTestResult | None = None) -> "SufficiencyRow":
        def pair(r):
            return None if r is None else (r.ci.lower, r.ci.upper)
        return cls(label,
                   None if ci is None else ci.cmi.value, pair(ci),
                   None if predictive is None else predictive.pct_improvement, pair(predictive),
                   None if predictive_context is None else predictive_context.pct_improvement,
                   pair(predictive_context))

    def cells(self) -> list[str]:
        return [self.label, _fmt(self.cmi, 4), _fmt_ci(self.cmi_ci, 4),
                _fmt(self.impr, 2), _fmt_ci(self.impr_ci, 2),
                _fmt(self.impr_context, 2), _fmt_ci(self.impr_context_ci, 2)]

    @classmethod
    def from_cells(cls, cells: Sequence[str]) -> "SufficiencyRow":
        return cls(cells[0], _num(cells[1]), _ci(cells[2]), _num(cells[3]), _ci(cells[4]),
                   _num(cells[5]), _ci(cells[6]))


def sufficiency_markdown(rows: Sequence[SufficiencyRow]) -> str:
    """Three blocks: kNN CMI, predictive test on belief, predictive test on belief and context."""
    block_line = "| | " + " | ".join(f"**{b}** | " for b in SUFFICIENCY_BLOCKS) + "|"
    table = _md(SUFFICIENCY_HEADER, [r.cells() for r in rows], "lrlrlrl")
    header, rule, *body = table.splitlines()
    return "\n".join([block_line.replace("|  |", "| |"), rule, header, *body]) + "\n"


def parse_sufficiency_markdown(text: str) -> list[SufficiencyRow]:
    rows = _md_rows(text)
    start = next(i for i, r in enumerate(rows) if r[0] == SUFFICIENCY_HEADER[0]) + 1
    return [SufficiencyRow.from_cells(r) for r in rows[start:]]


def sufficiency_csv(rows: Sequence[SufficiencyRow]) -> str:
    header = ("label", "cmi", "cmi_ci", "impr", "impr_ci", "impr_context", "impr_context_ci")
    return _csv(header, [r.cells() for r in rows])


# --------------------------------------------------------------------------- monotone table


@dataclass(frozen=True)
class MonotoneRow:
    label: str
    rates: tuple[float | None, float | None, float | None]  # percent, PAIR_COLUMNS order

    @classmethod
    def from_results(cls, label: str, results: Sequence[MonotoneTestResult]) -> "MonotoneRow":
        by_pair = {tuple(r.pair): 100.0 * r.significant_violation_rate for r in results}
        return cls(label, tuple(by_pair.get(p) for p in PAIR_COLUMNS))

    def cells(self) -> list[str]:
        return [self.label, *(_fmt(v, 1) for v in self.rates)]


def monotone_markdown(rows: Sequence[MonotoneRow]) -> str:
    return _md(("Dataset/Model", *PAIR_COLUMNS.values()), [r.cells() for r in rows], "lrrr")


def parse_monotone_markdown(text: str) -> list[MonotoneRow]:
    return [MonotoneRow(r[0], tuple(_num(c) for c in r[1:4])) for r in _md_rows(text)[1:]]


def monotone_csv(rows: Sequence[MonotoneRow]) -> str:
    return _csv(("label", *PAIR_COLUMNS.values()), [r.cells() for r in rows])


# --------------------------------------------------------------------------- consistency tables


@dataclass(frozen=True)
class ConsistencyRow:
    label: str
    values: tuple[float | None, ...]  # CONSISTENCY_COLUMNS order

    @classmethod
    def from_result(cls, label: str, r: ConsistencyResult) -> "ConsistencyRow":
        return cls(label, (r.within_prompt_std,
                           *(r.rmse_by_prompt.get(CONSISTENCY_PROMPTS[c]) for c in CONSISTENCY_COLUMNS[1:])))

    def cells(self) -> list[str]:
        return [self.label, *(_fmt_short(v) for v in self.values)]


def consistency_markdown(rows: Sequence[ConsistencyRow]) -> str:
    return _md(("Dataset/Model", *CONSISTENCY_COLUMNS), [r.cells() for r in rows], "lrrrr")


def parse_consistency_markdown(text: str) -> list[ConsistencyRow]:
    return [ConsistencyRow(r[0], tuple(_num(c) for c in r[1:])) for r in _md_rows(text)[1:]]


def consistency_csv(rows: Sequence[ConsistencyRow]) -> str:
    return _csv(("label", *CONSISTENCY_COLUMNS), [r.cells() for r in rows])


@dataclass(frozen=True)
class GroundTruthRow:
    label: str
    values: tuple[float | None, ...]  # GROUND_TRUTH_COLUMNS order

    def cells(self) -> list[str]:
        return [self.label, *(_fmt_short(v) for v in self.values)]


def ground_truth_markdown(rows: Sequence[GroundTruthRow]) -> str:
    return _md(("Model", *GROUND_TRUTH_COLUMNS), [r.cells() for r in rows], "lrrrr")


def parse_ground_truth_markdown(text: str) -> list[GroundTruthRow]:
    return [GroundTruthRow(r[0], tuple(_num(c) for c in r[1:])) for r in _md_rows(text)[1:]]
