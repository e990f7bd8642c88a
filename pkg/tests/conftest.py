import numpy as np
import pytest

from beliefaudit.bayesnet import BayesNet, layered_network
from beliefaudit.core import ActionLabel, Dataset, DecisionRecord


@pytest.fixture(scope="session")
def net():
    return layered_network(seed=0)


@pytest.fixture
def chain_net():
    """A -> B with P(A=1)=0.3, P(B=1|A=0)=0.2, P(B=1|A=1)=0.9; target A."""
    return BayesNet(
        nodes=(("A", ("0", "1")), ("B", ("0", "1"))),
        parents={"A": (), "B": ("A",)},
        cpts={"A": np.array([0.7, 0.3]), "B": np.array([[0.8, 0.2], [0.1, 0.9]])},
        target="A",
    )


def make_dataset(beliefs, actions, outcomes, reps=1, prompt="std"):
    """Records with one covariate so a schema exists; context i repeated ``reps`` times."""
    records = []
    for i, (b, a, y) in enumerate(zip(beliefs, actions, outcomes)):
        records.append(DecisionRecord(f"c{i // reps:04d}", (("X", str(i // reps % 2)),), float(b),
                                      ActionLabel(a), int(y), prompt, i % reps))
    return Dataset.from_records(records)


def two_cluster(n, seed):
    """I(A; theta | p) = 0.5 ln 2: A copies theta in one p-cluster and is independent in the other."""
    rng = np.random.default_rng(seed)
    left = rng.random(n) < 0.5
    p = np.where(left, rng.random(n), 2.0 + rng.random(n))
    theta = rng.integers(0, 2, n)
    a = np.where(left, theta, rng.integers(0, 2, n))
    return a, theta, p


def deterministic_coupling(n, seed):
    """A = theta with theta independent of a continuous p: I(A; theta | p) = ln 2."""
    rng = np.random.default_rng(seed)
    theta = rng.integers(0, 2, n)
    return theta.copy(), theta, rng.random(n)


def hypergeom_upper_tail(a, b, c, d):
    """P(X >= a) for the top-left cell of a 2x2 table with fixed margins, by enumeration."""
    from math import comb
    r1, c1, n = a + b, a + c, a + b + c + d
    lo, hi = max(0, r1 + c1 - n), min(r1, c1)
    total = comb(n, r1)
    return sum(comb(c1, x) * comb(n - c1, r1 - x) for x in range(max(a, lo), hi + 1)) / total


# --------------------------------------------------------------------------- acceptance verdicts

_VERDICTS: dict[int, tuple[bool, str]] = {}


def record_verdict(criterion: int, ok: bool, detail: str) -> None:
    _VERDICTS[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(_VERDICTS):
        ok, detail = _VERDICTS[c]
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
