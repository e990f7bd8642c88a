import json

import pytest

from beliefaudit.core import ActionLabel, validate_dataset
from beliefaudit.elicit import (Campaign, EndpointConfig, EndpointError, ExchangeLog, ResponseSchemaError,
                                chat_complete, run_elicitation)
from beliefaudit.elicit.parsing import (ParseError, format_probability_response, parse_decision_response,
                                        parse_probability_response)
from beliefaudit.elicit.prompts import STANDARD_TEMPLATES, Phrasebook, describe_context, render_prompt
from stub_endpoint import StubServer

NO_SLEEP = lambda s: None  # noqa: E731


# --------------------------------------------------------------------------- prompts


def test_standard_prompt_renders_verbatim():
    text = render_prompt(STANDARD_TEMPLATES["std"], {"patient_description": "is male and is 45 years old",
                                                     "clinical_question": "have heart disease"})
    assert text.startswith("There is a patient who is male and is 45 years old. What is the probability "
                           "that they have heart disease? Return probabilities for: No and Yes.\n\n")
    assert text.endswith("Example:\nNo: 0.50\nYes: 0.50")
    assert "<" not in text.replace("'<label>: <number between 0 and 1>'", "")


def test_scoring_rule_prompt_has_preamble():
    text = render_prompt(STANDARD_TEMPLATES["mse_rule"], {"patient_description": "x", "clinical_question": "y"})
    assert text.startswith("IMPORTANT: Your probability estimates will be evaluated according to the Mean Squared")


def test_missing_placeholder_named():
    with pytest.raises(ValueError, match="missing placeholder value: clinical_question"):
        render_prompt(STANDARD_TEMPLATES["std"], {"patient_description": "x"})


def test_next_state_prompt_lists_labels():
    text = render_prompt(STANDARD_TEMPLATES["next_state"], {"patient_description": "x",
                                                            "auxiliary_variable_name": "blood pressure",
                                                            "labels": ["low", "normal", "high"]})
    assert "Respond with exactly 3 lines" in text
    assert "[low, normal, high]" in text
    assert text.endswith("low: 0.33\nnormal: 0.33\nhigh: 0.33")


def test_describe_context_joins():
    book = Phrasebook.from_json({"Sex": {"1": "is male"}, "Age": {"2": "is 45 years old"}})
    assert describe_context([("Sex", "1")], book) == "is male"
    assert describe_context([("Sex", "1"), ("Age", "2")], book) == "is male and is 45 years old"
    assert describe_context([("Sex", "1"), ("Age", "2"), ("CP", "0")], book) == \
        "is male, is 45 years old, and has CP = 0"


# --------------------------------------------------------------------------- parsing


def test_parse_probability_normalizes():
    parsed = parse_probability_response("**No**: 0.6\nyes: 0.6\n", ["No", "Yes"])
    assert parsed.was_normalized and parsed.value("Yes") == pytest.approx(0.5)
    assert parsed.raw == (0.6, 0.6)


def test_parse_probability_round_trip():
    text = format_probability_response(["No", "Yes"], [0.25, 0.75])
    assert parse_probability_response(text, ["No", "Yes"]).normalized == (0.25, 0.75)


@pytest.mark.parametrize("text,match", [("No: 0.5", "not found"), ("No: 1.5\nYes: 0.1", "outside"),
                                        ("No: 0\nYes: 0", "zero")])
def test_parse_probability_errors(text, match):
    with pytest.raises(ParseError, match=match):
        parse_probability_response(text, ["No", "Yes"])


def test_parse_decision():
    assert parse_decision_response("Can decide: No\nDecision: Yes") == (ActionLabel.DEFER, ActionLabel.YES)
    assert parse_decision_response("Can decide: Yes\nDecision: No") == (ActionLabel.NO, ActionLabel.NO)
    with pytest.raises(ParseError):
        parse_decision_response("Maybe")


# --------------------------------------------------------------------------- client


@pytest.fixture
def token(monkeypatch):
    monkeypatch.setenv("STUB_TOKEN", "secret")


def _cfg(url, **kw):
    return EndpointConfig(url, "stub-model", token_env="STUB_TOKEN", backoff_base=0.0, **kw)


def test_chat_complete_retries_transient_errors(tmp_path, token):
    with StubServer(fail_first=2) as srv:
        log = ExchangeLog(tmp_path / "x.jsonl")
        text = chat_complete(_cfg(srv.url), "Can decide", log=log, exchange_id="e1", sleep=NO_SLEEP)
    assert text.startswith("Can decide:")
    entries = log.entries()
    assert [e["status"] for e in entries] == [503, 503, 200]
    assert srv.requests[0]["auth"] == "Bearer secret"
    assert srv.requests[0]["body"]["model"] == "stub-model"


def test_chat_complete_gives_up(token):
    with StubServer(fail_first=10) as srv:
        with pytest.raises(EndpointError, match="after 2 attempts"):
            chat_complete(_cfg(srv.url, max_retries=1), "p", sleep=NO_SLEEP)


def test_non_transient_status_not_retried(token):
    with StubServer(status=403) as srv:
        with pytest.raises(EndpointError, match="HTTP 403"):
            chat_complete(_cfg(srv.url), "p", sleep=NO_SLEEP)
        assert len(srv.requests) == 1


def test_response_path_mismatch_reports_body(token):
    with StubServer() as srv:
        with pytest.raises(ResponseSchemaError) as err:
            chat_complete(_cfg(srv.url, response_path="output.text"), "Can decide", sleep=NO_SLEEP)
    assert "choices" in err.value.body


def test_missing_token_names_variable(monkeypatch):
    monkeypatch.delenv("STUB_TOKEN", raising=False)
    with pytest.raises(EndpointError, match="STUB_TOKEN"):
        _cfg("http://127.0.0.1:9").token()


def test_body_template_and_options():
    cfg = EndpointConfig("u", "m", body_template={"model": "{{model}}", "input": "{{prompt}}"},
                         options={"temperature": 0.7})
    assert cfg.render_body("hi") == {"model": "m", "input": "hi", "temperature": 0.7}


# --------------------------------------------------------------------------- campaign


def campaign_json(n=4, reps=2, prompts=("std", "mse_rule"), lie=False):
    obj = {
        "clinical_question": "have heart disease",
        "prompts": list(prompts),
        "repetitions": reps,
        "max_in_flight": 2,
        "phrasebook": {"Sex": {"0": "is female", "1": "is male"}},
        "contexts": [{"context_id": f"p{i}", "covariates": {"Sex": str(i % 2), "Age": str(i)},
                      "ground_truth": 0.1 + 0.2 * (i % 4)} for i in range(n)],
    }
    if lie:
        obj["lie"] = {"z_node": "BP", "name": "blood pressure", "levels": ["lo", "hi"],
                      "labels": ["low", "high"],
                      "conditions": {"lo": "has low blood pressure", "hi": "has high blood pressure"}}
    return obj


def test_campaign_end_to_end(tmp_path, token):
    camp = Campaign.from_json(campaign_json(lie=True))
    with StubServer() as srv:
        out = run_elicitation(camp, _cfg(srv.url), tmp_path, rng_seed=0, sleep=NO_SLEEP)
    assert len(out.dataset) == 4 * 2 * 2 and out.quarantined == 0
    assert validate_dataset(out.dataset).ok
    assert {r.prompt_id for r in out.dataset.records} == {"std", "mse_rule"}
    # decisions are shared across prompts of one repetition
    by_key = {}
    for r in out.dataset.records:
        by_key.setdefault((r.context_id, r.repetition), set()).add(r.action)
    assert all(len(v) == 1 for v in by_key.values())
    assert len(out.triples) == 4 and all(t.bin_weights == (0.5, 0.5) for t in out.triples)


def test_campaign_resume_only_fills_missing(tmp_path, token):
    camp = Campaign.from_json(campaign_json())
    with StubServer() as srv:
        run_elicitation(camp, _cfg(srv.url), tmp_path, sleep=NO_SLEEP)
        first = len(srv.requests)
        lines = (tmp_path / "records.jsonl").read_text().splitlines()
        (tmp_path / "records.jsonl").write_text("\n".join(lines[:-3]) + "\n")
        out = run_elicitation(camp, _cfg(srv.url), tmp_path, sleep=NO_SLEEP)
        assert len(srv.requests) - first == 3
    assert out.new_records == 3 and out.new_decisions == 0 and len(out.dataset) == 16


def test_unparseable_answers_quarantined(tmp_path, token):
    camp = Campaign.from_json(campaign_json(prompts=("std",)))
    with StubServer(garbage=("IMPORTANT", "is male")) as srv:
        out = run_elicitation(camp, _cfg(srv.url), tmp_path, sleep=NO_SLEEP)
    quarantine = [json.loads(x) for x in (tmp_path / "quarantine.jsonl").read_text().splitlines()]
    # contexts 1 and 3 are male: their 2 decisions each fail twice and are quarantined
    assert out.quarantined == len(quarantine) > 0
    assert {q["context_id"] for q in quarantine} == {"p1", "p3"}
    assert {r.context_id for r in out.dataset.records} == {"p0", "p2"}


def test_campaign_validation():
    bad = campaign_json()
    del bad["contexts"][0]["ground_truth"]
    with pytest.raises(ValueError, match="outcome or a ground_truth"):
        Campaign.from_json(bad)
    with pytest.raises(ValueError, match="unknown probability prompts"):
        Campaign.from_json(campaign_json(prompts=("decision",)))
