"""Acceptance criteria 1-12.

Each test records a one-line verdict that is printed in the terminal summary,
then asserts it. Simulation criteria use the layered network with seed 0 and
episode seeds 0-19 at 200 contexts x 5 repetitions.
"""
import itertools
import json
import math
import socket
import time
from pathlib import Path

import numpy as np
import pytest

from beliefaudit import reports
from beliefaudit.agents import (AgentSpec, Noise, Weighting, constant_reporter, rank_flipper, run_episode,
                                theta_leaky, truthful_logit)
from beliefaudit.audits import (LieTriple, ci_test, lie_oracle_triples, lie_test, monotone_pairwise_test,
                                predictive_sufficiency_test)
from beliefaudit.bayesnet import (eliminate, enumerate_joint, layered_network, random_binary_dag,
                                  sample_contexts_stratified)
from beliefaudit.cli import main as cli
from beliefaudit.estimators import ContingencyTable2x2, fisher_exact_one_sided, isotonic_fit, knn_cmi
from conftest import deterministic_coupling, hypergeom_upper_tail, record_verdict, two_cluster
from stub_endpoint import StubServer
from test_elicit import campaign_json

SEEDS = range(20)
N_CONTEXTS, REPS = 200, 5
PAIRS = (("Yes", "No"), ("Yes", "Defer"), ("Defer", "No"))
CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SUITE_START = time.perf_counter()


@pytest.fixture(scope="module", autouse=True)
def local_network_only():
    """Any connection attempt to a non-loopback address fails the suite."""
    real = socket.socket.connect

    def guarded(self, address):
        host = address[0] if isinstance(address, tuple) else address
        if isinstance(host, str) and host not in ("127.0.0.1", "localhost", "::1"):
            raise AssertionError(f"network access attempted: {address}")
        return real(self, address)

    socket.socket.connect = guarded
    yield
    socket.socket.connect = real


@pytest.fixture(scope="module")
def net():
    return layered_network(seed=0)


@pytest.fixture(scope="module")
def episodes(net):
    cache = {}

    def get(name, spec, seed):
        key = (name, seed)
        if key not in cache:
            cache[key] = run_episode(net, spec, N_CONTEXTS, REPS, rng_seed=seed)
        return cache[key]
    return get


# --------------------------------------------------------------------------- 1


def test_c01_inference_oracle():
    start = time.perf_counter()
    worst, checked = 0.0, 0
    for s in range(50):
        net = random_binary_dag(4 + s % 9, seed=1000 + s)
        joint = enumerate_joint(net)
        rng = np.random.default_rng(s)
        others = [n for n in net.names if n != net.target]
        for _ in range(20):
            k = int(rng.integers(0, len(others) + 1))
            ev = {n: str(rng.integers(2)) for n in rng.choice(others, size=k, replace=False)}
            diff = np.abs(eliminate(net, net.target, ev) - joint.posterior(net.target, ev)).max()
            worst, checked = max(worst, diff), checked + 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 60 and checked == 1000
    record_verdict(1, ok, f"{checked} queries on 50 DAGs, max |diff| {worst:.1e}, {elapsed:.1f}s")
    assert ok


# --------------------------------------------------------------------------- 2


def test_c02_exact_test_oracle():
    worst, count = 0.0, 0
    for a, b, c in itertools.product(range(41), repeat=3):
        if a + b + c > 40:
            continue
        for d in range(41 - a - b - c):
            if a + b + c + d == 0:
                continue
            got = fisher_exact_one_sided(ContingencyTable2x2(a, b, c, d))
            worst = max(worst, abs(got - hypergeom_upper_tail(a, b, c, d)))
            count += 1
    rng = np.random.default_rng(2)
    worst_random = 0.0
    for _ in range(1000):
        total = int(rng.integers(1, 201))
        a, b, c, d = rng.multinomial(total, rng.dirichlet(np.ones(4)))
        got = fisher_exact_one_sided(ContingencyTable2x2(int(a), int(b), int(c), int(d)))
        worst_random = max(worst_random, abs(got - hypergeom_upper_tail(int(a), int(b), int(c), int(d))))
    ok = worst <= 1e-12 and worst_random <= 1e-12
    record_verdict(2, ok, f"{count} exhaustive tables max err {worst:.1e}; 1000 random max err {worst_random:.1e}")
    assert ok


# --------------------------------------------------------------------------- 3


def test_c03_cmi_accuracy():
    start = time.perf_counter()
    half = np.mean([knn_cmi(*two_cluster(2000, s), k=3).value for s in range(10)])
    full = np.mean([knn_cmi(*deterministic_coupling(2000, s), k=3).value for s in range(10)])
    elapsed = time.perf_counter() - start
    ok = abs(half - 0.5 * math.log(2)) <= 0.05 and abs(full - math.log(2)) <= 0.05 and elapsed < 120
    record_verdict(3, ok, f"two-cluster mean {half:.4f} (truth 0.3466); coupling mean {full:.4f} "
                          f"(truth 0.6931); {elapsed:.1f}s")
    assert ok


# --------------------------------------------------------------------------- 4, 5


def _ci_size(episodes, variant):
    # the bootstrap interval does not enter the rejection rule, so few replicates suffice
    results = [ci_test(episodes("truthful", truthful_logit(), s), bootstraps=50, variant=variant, rng_seed=s)
               for s in SEEDS]
    return [r.perm_pvalue for r in results]


def _ci_power(episodes, variant):
    return [ci_test(episodes("constant", constant_reporter(0.5), s), bootstraps=500, variant=variant, rng_seed=s)
            for s in SEEDS]


def test_c04_ci_test_size(episodes):
    pvals = _ci_size(episodes, "raw")
    rate = np.mean([p <= 0.05 for p in pvals])
    ok = rate <= 0.10
    record_verdict(4, ok, f"truthful logit rejection rate {rate:.2f} over 20 seeds "
                          f"(p-values <= 0.05: {[round(p, 3) for p in pvals if p <= 0.05]})")
    assert ok


def test_c05_ci_test_power(episodes):
    res = _ci_power(episodes, "raw")
    rate = np.mean([r.rejects(0.05) for r in res])
    above = sum(r.ci.lower > 0 for r in res)
    ok = rate >= 0.90 and above >= 18
    record_verdict(5, ok, f"constant(0.5) rejection rate {rate:.2f}; CI lower > 0 in {above}/20")
    assert ok


# --------------------------------------------------------------------------- 6


def test_c06_predictive_size_and_power(episodes):
    truthful = [predictive_sufficiency_test(episodes("truthful", truthful_logit(), s), rng_seed=s) for s in SEEDS]
    leaky = [predictive_sufficiency_test(episodes("leaky", theta_leaky(0.9, 0.5), s), rng_seed=s) for s in SEEDS]
    covered = sum(r.ci.contains(0.0) for r in truthful)
    detected = sum(r.pct_improvement >= 10 and r.excludes_zero() for r in leaky)
    ok = covered >= 17 and detected >= 18
    record_verdict(6, ok, f"truthful CI contains 0 in {covered}/20; theta-leaky >= 10% with CI excluding 0 "
                          f"in {detected}/20 (median {np.median([r.pct_improvement for r in leaky]):.1f}%)")
    assert ok


# --------------------------------------------------------------------------- 7


def _clean_seeds(episodes, name, spec):
    clean = 0
    for s in SEEDS:
        d = episodes(name, spec, s)
        rates = [monotone_pairwise_test(d, pair, K=5).significant_violation_rate for pair in PAIRS]
        clean += all(r == 0.0 for r in rates)
    return clean


def test_c07_monotone_size_and_power(episodes):
    truth = _clean_seeds(episodes, "truthful", truthful_logit())
    pt = _clean_seeds(episodes, "pt_power", AgentSpec(noise=Noise("gumbel_iid", 1.0), weighting=Weighting("power", 2.0)))
    flipped = sum(len(monotone_pairwise_test(episodes("rank_flip", rank_flipper(0.4, 0.6), s), ("Yes", "No"),
                                             K=5).significant) >= 1 for s in SEEDS)
    ok = truth >= 18 and pt >= 18 and flipped >= 18
    record_verdict(7, ok, f"zero violations on all pairs: logit {truth}/20, PT power-2 {pt}/20; "
                          f"rank flip on [0.4, 0.6) flagged in {flipped}/20")
    assert ok


# --------------------------------------------------------------------------- 8


def test_c08_lie_exactness():
    worst, count = 0.0, 0
    nets = [layered_network(seed=0), layered_network(seed=1, target_mode="hub")]
    nets += [random_binary_dag(8, seed=s) for s in range(3)]
    for net in nets:
        z = net.evidence_nodes[-1]
        sample = sample_contexts_stratified(net, 20, bins=5, rng_seed=0,
                                            candidates=None) if net.observed else None
        if sample is not None:
            ctxs = [tuple((n, v) for n, v in c if n != z) for c in sample.contexts]
        else:
            others = [n for n in net.evidence_nodes if n != z]
            ctxs = [tuple((n, str(bits[i])) for i, n in enumerate(others))
                    for bits in itertools.islice(itertools.product((0, 1), repeat=len(others)), 20)]
        triples = lie_oracle_triples(net, ctxs, z)
        deltas = lie_test(triples, bootstraps=20).deltas
        worst, count = max(worst, max(deltas)), count + len(deltas)
    # single-cell perturbation of a weight-w cell moves the residual by eps * w
    rng = np.random.default_rng(8)
    lin_err = 0.0
    for t in triples:
        j = int(rng.integers(len(t.bin_weights)))
        eps = float(rng.uniform(-0.01, 0.01))
        beliefs = list(t.bin_beliefs)
        beliefs[j] += eps
        bumped = LieTriple(t.context_id, t.base_belief, tuple(beliefs), t.bin_weights)
        lin_err = max(lin_err, abs(bumped.residual() - abs(eps) * t.bin_weights[j]))
    ok = worst <= 1e-12 and lin_err <= 1e-12
    record_verdict(8, ok, f"{count} oracle contexts on 5 networks, max delta {worst:.1e}; "
                          f"perturbation linearity error {lin_err:.1e}")
    assert ok


# --------------------------------------------------------------------------- 9


def _best_monotone_sse(ys):
    """Row-wise minimum SSE over contiguous blockings whose block means are nondecreasing."""
    n = ys.shape[1]
    best = np.full(len(ys), np.inf)
    for cuts in itertools.product((0, 1), repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        blocks = list(zip(bounds, bounds[1:]))
        means = np.stack([ys[:, a:b].mean(axis=1) for a, b in blocks], axis=1)
        feasible = np.all(np.diff(means, axis=1) >= -1e-15, axis=1)
        sse = sum(((ys[:, a:b] - means[:, [j]]) ** 2).sum(axis=1) for j, (a, b) in enumerate(blocks))
        best = np.where(feasible, np.minimum(best, sse), best)
    return best


def test_c09_isotonic_correctness(episodes):
    rng = np.random.default_rng(9)
    monotone = 0
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        x, y = rng.random(n), rng.normal(size=n)
        f = isotonic_fit(x, y)
        fitted = np.array([f(v) for v in np.sort(x)])
        monotone += f.is_nondecreasing() and bool(np.all(np.diff(fitted) >= 0))
    grid = np.round(np.arange(0, 1.0001, 0.05), 2)
    # every grid input up to length 4; lengths 5 and 6 (85M inputs at length 6) are sampled
    batches = [np.array(list(itertools.product(grid, repeat=n))) for n in (1, 2, 3, 4)]
    batches += [rng.choice(grid, size=(3000, n)) for n in (5, 6)]
    sse_err, n_inputs = 0.0, 0
    for ys in batches:
        x = np.arange(ys.shape[1], dtype=float)
        fitted = np.array([isotonic_fit(x, y)(x) for y in ys])
        sse = ((fitted - ys) ** 2).sum(axis=1)
        sse_err = max(sse_err, float(np.abs(sse - _best_monotone_sse(ys)).max()))
        n_inputs += len(ys)
    size = np.mean([p <= 0.05 for p in _ci_size(episodes, "isotonic")])
    power = _ci_power(episodes, "isotonic")
    power_rate = np.mean([r.rejects(0.05) for r in power])
    above = sum(r.ci.lower > 0 for r in power)
    ok = monotone == 1000 and sse_err <= 1e-9 and size <= 0.10 and power_rate >= 0.90 and above >= 18
    record_verdict(9, ok, f"nondecreasing {monotone}/1000; SSE max err {sse_err:.1e} on {n_inputs} grid inputs (exhaustive to length 4); "
                          f"isotonic CI test size {size:.2f}, power {power_rate:.2f}, CI lower > 0 in {above}/20")
    assert ok


# --------------------------------------------------------------------------- 10


def test_c10_determinism(tmp_path):
    net = str(CONFIGS / "net_layered.json")
    outputs = []
    for run, threads in enumerate(("1", "1", "4")):
        rec = tmp_path / f"run{run}.jsonl"
        assert cli(["simulate", "--net", net, "--agent", "constant", "--n", "200", "--reps", "5", "--seed", "7",
                    "--out", str(rec)]) == 0
        out = tmp_path / f"audit{run}"
        assert cli(["audit", str(rec), "--seed", "7", "--out", str(out), "--threads", threads,
                    "--jobs", threads]) == 0
        files = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
        outputs.append((rec.read_bytes(), files))
    ok = outputs[0] == outputs[1] == outputs[2]
    record_verdict(10, ok, f"simulate + audit byte-identical across 2 runs and 1 vs 4 threads "
                           f"({len(outputs[0][1])} output files)")
    assert ok


# --------------------------------------------------------------------------- 11


def test_c11_table_fixtures():
    fixtures = Path(__file__).parent / "fixtures"
    text = (fixtures / "sufficiency.md").read_text(encoding="utf-8")
    rows = reports.parse_sufficiency_markdown(text)
    round_trip = all(
        emit(parse(t)) == t for t, parse, emit in (
            (text, reports.parse_sufficiency_markdown, reports.sufficiency_markdown),
            ((fixtures / "monotone.md").read_text(encoding="utf-8"), reports.parse_monotone_markdown,
             reports.monotone_markdown),
            ((fixtures / "consistency.md").read_text(encoding="utf-8"), reports.parse_consistency_markdown,
             reports.consistency_markdown)))
    cells = rows[0].cells()
    layout = text.splitlines()[0].count("**") == 6 and text.splitlines()[2].split("|")[2].strip() == "CMI"
    ok = round_trip and layout and cells[1:4] == ["0.1454", "[0.1119, 0.1789]", "16.37"]
    record_verdict(11, ok, f"three-block layout {layout}; round trip {round_trip}; first row {cells[1:4]}")
    assert ok


# --------------------------------------------------------------------------- 12


def test_c12_end_to_end_budget(tmp_path, monkeypatch):
    monkeypatch.setenv("STUB_TOKEN", "t")
    camp = tmp_path / "campaign.json"
    camp.write_text(json.dumps(campaign_json(n=60, reps=2, prompts=("std",))))
    with StubServer() as srv:
        ep = tmp_path / "endpoint.json"
        ep.write_text(json.dumps({"base_url": srv.url, "model": "stub", "token_env": "STUB_TOKEN",
                                  "backoff_base": 0.0}))
        elicited = cli(["elicit", "--campaign", str(camp), "--endpoint", str(ep), "--seed", "0",
                        "--out", str(tmp_path / "el")])
    audited = cli(["audit", str(tmp_path / "el" / "records.jsonl"), "--seed", "0", "--out", str(tmp_path / "au"),
                   "--tests", "ci", "monotone", "--bootstraps", "100"])
    elapsed = time.perf_counter() - SUITE_START
    ok = elicited == 0 and audited == 0 and elapsed < 600
    record_verdict(12, ok, f"stub elicit + audit exit codes {elicited}/{audited}; suite elapsed {elapsed:.0f}s "
                           f"(limit 600s), loopback network only")
    assert ok
