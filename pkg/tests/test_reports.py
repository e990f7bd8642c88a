from pathlib import Path

import pytest

from beliefaudit import reports
from beliefaudit.audits import CiTestResult, ConsistencyResult, PredictiveTestResult, monotone_from_bins, BeliefBin
from beliefaudit.estimators import BootstrapCI, CmiEstimate

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.mark.parametrize("name,parse,emit", [
    ("sufficiency", reports.parse_sufficiency_markdown, reports.sufficiency_markdown),
    ("monotone", reports.parse_monotone_markdown, reports.monotone_markdown),
    ("consistency", reports.parse_consistency_markdown, reports.consistency_markdown),
])
def test_fixture_tables_round_trip_byte_identical(name, parse, emit):
    text = (FIXTURES / f"{name}.md").read_text(encoding="utf-8")
    assert emit(parse(text)) == text


def test_sufficiency_row_values_parse_exactly():
    rows = reports.parse_sufficiency_markdown((FIXTURES / "sufficiency.md").read_text(encoding="utf-8"))
    first = rows[0]
    assert first.label == "Heart--GPT-Min"
    assert first.cmi == 0.1454 and first.cmi_ci == (0.1119, 0.1789)
    assert first.impr == 16.37 and first.impr_ci == (11.85, 20.90)
    assert first.impr_context == 13.05 and first.impr_context_ci == (9.16, 17.54)
    assert rows[-1].impr_ci == (-3.01, -1.90)


def test_sufficiency_block_layout():
    text = reports.sufficiency_markdown([reports.SufficiencyRow("m")])
    lines = text.splitlines()
    assert lines[0].count("**") == 6
    assert "I(A;θ \\| p)" in lines[0]
    assert lines[2].startswith("| Dataset / Model | CMI | 95% CI | % Impr")
    assert lines[3] == "| m | -- | -- | -- | -- | -- | -- |"


def test_rows_from_results_format_digits():
    ci = CiTestResult(CmiEstimate(0.14544, 3, 1000), BootstrapCI(0.11191, 0.17886, 0.95, 500), 0.005)
    pred = PredictiveTestResult(1.0, 0.8363, 16.3749, BootstrapCI(11.849, 20.901, 0.95, 500))
    row = reports.SufficiencyRow.from_results("Heart--GPT-Min", ci, pred)
    assert row.cells()[:5] == ["Heart--GPT-Min", "0.1454", "[0.1119, 0.1789]", "16.37", "[11.85, 20.90]"]


def test_monotone_row_in_percent():
    bins = [BeliefBin(0, 0.5, 0.25, 10, 10), BeliefBin(0.5, 1, 0.75, 1, 19)]
    res = monotone_from_bins(("Yes", "Defer"), bins)
    row = reports.MonotoneRow.from_results("m", [res])
    assert row.cells() == ["m", "--", "100.0", "--"]


def test_consistency_row_short_format():
    res = ConsistencyResult(0.0591, {"mse_rule": 0.0456, "abs_rule": 0.0436, "bayes": 0.0682})
    row = reports.ConsistencyRow.from_result("Heart--GPT-High", res)
    assert row.cells() == ["Heart--GPT-High", ".0591", ".0456", ".0436", ".0682"]


def test_csv_outputs_have_headers():
    rows = reports.parse_monotone_markdown((FIXTURES / "monotone.md").read_text(encoding="utf-8"))
    csv = reports.monotone_csv(rows)
    assert csv.splitlines()[0] == "label,Y/(N+Y),Y/(D+Y),D/(N+D)"
    assert csv.splitlines()[2] == "Heart--DeepSeek,0.0,20.0,30.0"
