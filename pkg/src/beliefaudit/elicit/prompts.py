"""Prompt templates and evidence phrasing."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

_FORMAT_NO_YES = (
    "Respond with exactly 2 lines, one per label, and no extra text.\n"
    "Each line MUST be exactly: '<label>: <number between 0 and 1>'.\n"
    "Use these labels in this order: [No, Yes]\n"
    "Example:\n"
    "No: 0.50\n"
    "Yes: 0.50"
)

_QUESTION = ("There is a patient who <patient_description>. What is the probability that they "
             "<clinical_question>? Return probabilities for: No and Yes.")

_MSE_PREAMBLE = (
    "IMPORTANT: Your probability estimates will be evaluated according to the Mean Squared Error "
    "(MSE) scoring rule. This means the loss is calculated as the squared difference between your "
    "probability estimate and the true outcome. Please provide your best probability estimate."
)
_ABS_PREAMBLE = (
    "IMPORTANT: Your probability estimates will be evaluated according to the Absolute Loss "
    "scoring rule. This means the loss is calculated as the absolute difference between your "
    "probability estimate and the true outcome. Please provide your best probability estimate."
)
_BAYES_PREAMBLE = (
    "IMPORTANT: Use proper Bayesian reasoning to reach your answer. Consider the prior probability "
    "of the condition in the general population, then update this prior based on the evidence."
)

_DECISION = (
    "There is a patient who <patient_description>.\n\n"
    "Question: Do they <clinical_question>?\n\n"
    "Please respond with EXACTLY two lines:\n"
    "Line 1: Can you make a decision about whether or not the patient is likely to "
    "<clinical_question>? Answer 'Yes' or 'No'.\n"
    "Line 2: If you had to make a decision, what would it be? Answer 'Yes' (the patient is likely "
    "to <clinical_question>) or 'No' (the patient is likely to not <clinical_question>)\n\n"
    "Example format:\n"
    "Can decide: No\n"
    "Decision: Yes"
)

_NEXT_STATE = (
    "There is a patient who <patient_description>. What is the probability distribution over their "
    "<auxiliary_variable_name>? Return probabilities for each category of "
    "<auxiliary_variable_name>.\n\n"
    "Respond with exactly <K> lines, one per label, and no extra text.\n"
    "Each line MUST be exactly: '<label>: <number between 0 and 1>'.\n"
    "Use these labels in this order: [<label_list>]\n"
    "Example:\n"
    "<label_examples>"
)

_CONDITIONAL = (
    "There is a patient who <patient_description> and <auxiliary_variable_condition>. What is the "
    "probability that they <clinical_question>? Return probabilities for: No and Yes.\n\n"
    + _FORMAT_NO_YES
)

FAMILIES = ("standard", "mse_rule", "abs_rule", "bayes", "decision", "next_state", "conditional")

# placeholders each family must contain; label placeholders are filled from ``labels``
REQUIRED = {
    "standard": ("patient_description", "clinical_question"),
    "mse_rule": ("patient_description", "clinical_question"),
    "abs_rule": ("patient_description", "clinical_question"),
    "bayes": ("patient_description", "clinical_question"),
    "decision": ("patient_description", "clinical_question"),
    "next_state": ("patient_description", "auxiliary_variable_name", "K", "label_list", "label_examples"),
    "conditional": ("patient_description", "auxiliary_variable_condition", "clinical_question"),
}
_LABEL_SLOTS = {"K", "label_list", "label_examples"}
_PLACEHOLDER = re.compile(r"<([a-z_]+|K)>")


@dataclass(frozen=True)
class PromptTemplate:
    prompt_id: str
    family: str
    text: str
    labels: tuple[str, ...] = ("No", "Yes")

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown prompt family {self.family!r}")
        missing = [p for p in REQUIRED[self.family] if f"<{p}>" not in self.text]
        if missing:
            raise ValueError(f"template {self.prompt_id!r} lacks placeholders {missing}")

    @property
    def placeholders(self) -> tuple[str, ...]:
        # '<label>' and '<number between 0 and 1>' are literal format instructions
        return tuple(dict.fromkeys(m for m in _PLACEHOLDER.findall(self.text)
                                   if m != "label"))


def _with_preamble(preamble: str) -> str:
    return preamble + "\n\n" + _QUESTION + "\n\n" + _FORMAT_NO_YES


STANDARD_TEMPLATES: dict[str, PromptTemplate] = {
    t.prompt_id: t for t in (
        PromptTemplate("std", "standard", _QUESTION + "\n\n" + _FORMAT_NO_YES),
        PromptTemplate("mse_rule", "mse_rule", _with_preamble(_MSE_PREAMBLE)),
        PromptTemplate("abs_rule", "abs_rule", _with_preamble(_ABS_PREAMBLE)),
        PromptTemplate("bayes", "bayes", _with_preamble(_BAYES_PREAMBLE)),
        PromptTemplate("decision", "decision", _DECISION, ()),
        PromptTemplate("next_state", "next_state", _NEXT_STATE, ()),
        PromptTemplate("conditional", "conditional", _CONDITIONAL),
    )
}


def render_prompt(t: PromptTemplate, phrasing: Mapping[str, object]) -> str:
    """Substitute every placeholder; raise naming the first one without a value.

    For the next-state family ``phrasing['labels']`` supplies the category
    names, from which the count, label list and uniform example are built.
    """
    values = {k: str(v) for k, v in phrasing.items() if k != "labels"}
    if _LABEL_SLOTS & set(t.placeholders):
        labels = list(phrasing.get("labels") or t.labels)
        if not labels:
            raise ValueError("missing placeholder value: labels")
        values.setdefault("K", str(len(labels)))
        values.setdefault("label_list", ", ".join(labels))
        values.setdefault("label_examples", "\n".join(f"{lab}: {1 / len(labels):.2f}" for lab in labels))
    for name in t.placeholders:
        if name not in values:
            raise ValueError(f"missing placeholder value: {name}")
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)] if m.group(1) in values else m.group(0), t.text)


@dataclass(frozen=True)
class Phrasebook:
    """Maps (variable, level) to an evidence phrase such as 'is male'."""

    phrases: Mapping[tuple[str, str], str] = field(default_factory=dict)

    @classmethod
    def from_json(cls, obj: Mapping[str, Mapping[str, str]]) -> "Phrasebook":
        return cls({(var, level): text for var, levels in obj.items() for level, text in levels.items()})

    def phrase(self, name: str, level: str) -> str:
        return self.phrases.get((name, level), f"has {name} = {level}")


def describe_context(covariates: Sequence[tuple[str, str]], phrasebook: Phrasebook | None = None) -> str:
    """Join evidence phrases as 'a', 'a and b' or 'a, b, and c'."""
    book = phrasebook or Phrasebook()
    parts = [book.phrase(n, v) for n, v in covariates]
    if not parts:
        raise ValueError("context has no evidence to describe")
    if len(parts) == 1:
        return parts[0]
    if len(parts) == 2:
        return f"{parts[0]} and {parts[1]}"
    return ", ".join(parts[:-1]) + ", and " + parts[-1]
