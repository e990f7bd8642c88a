"""Parsing of label-per-line probability answers and two-line decisions."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from ..core import ActionLabel

_NUMBER = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class ProbabilityParse:
    labels: tuple[str, ...]
    raw: tuple[float, ...]
    normalized: tuple[float, ...]
    was_normalized: bool

    def value(self, label: str) -> float:
        return self.normalized[self.labels.index(label)]


def _clean(line: str) -> str:
    return line.replace("*", "").replace("`", "").strip()


def parse_probability_response(text: str, labels: Sequence[str]) -> ProbabilityParse:
    """One '<label>: <number>' line per label, matched case-insensitively."""
    if not labels:
        raise ParseError("labels must be non-empty")
    found: dict[str, float] = {}
    seen: list[str] = []
    for line in text.splitlines():
        m = re.fullmatch(r"(.+?)\s*:\s*" + _NUMBER, _clean(line))
        if not m:
            continue
        name = m.group(1).strip()
        seen.append(name)
        for label in labels:
            if name.lower() == label.lower() and label not in found:
                found[label] = float(m.group(2))
    missing = [lab for lab in labels if lab not in found]
    if missing:
        raise ParseError(f"labels {missing} not found; found {seen}")
    raw = tuple(found[lab] for lab in labels)
    bad = [(lab, v) for lab, v in zip(labels, raw) if not 0.0 <= v <= 1.0]
    if bad:
        raise ParseError(f"values outside [0, 1]: {bad}")
    total = sum(raw)
    if total <= 0.0:
        raise ParseError("all probabilities are zero; cannot normalize")
    normalized = tuple(v / total for v in raw)
    return ProbabilityParse(tuple(labels), raw, normalized, abs(total - 1.0) > 1e-9)


def format_probability_response(labels: Sequence[str], values: Sequence[float]) -> str:
    return "\n".join(f"{lab}: {v:.2f}" for lab, v in zip(labels, values))


def _yes_no(text: str, key: str) -> str:
    for line in text.splitlines():
        m = re.fullmatch(key + r"\s*:\s*'?\"?(yes|no)\b.*", _clean(line), flags=re.IGNORECASE)
        if m:
            return m.group(1).capitalize()
    raise ParseError(f"missing or unparseable '{key}' line")


def parse_decision_response(text: str) -> tuple[ActionLabel, ActionLabel]:
    """Returns (action, forced). 'Can decide: No' means the action is Defer."""
    can_decide = _yes_no(text, "Can decide")
    forced = ActionLabel(_yes_no(text, "Decision"))
    return (ActionLabel.DEFER if can_decide == "No" else forced), forced
