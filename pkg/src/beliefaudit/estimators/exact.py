"""One-sided tests that one bin's action share exceeds another's."""
from __future__ import annotations

from dataclasses import dataclass

from scipy.stats import binomtest, fisher_exact


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Rows are two belief bins, columns the counts of actions a1 and a2."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"count {name} must be a nonnegative integer, got {v}")
        if self.total == 0:
            raise ValueError("all-zero contingency table")

    @classmethod
    def from_rows(cls, rows) -> "ContingencyTable2x2":
        (a, b), (c, d) = rows
        return cls(int(a), int(b), int(c), int(d))

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d

    def rows(self) -> list[list[int]]:
        return [[self.a, self.b], [self.c, self.d]]


def fisher_exact_one_sided(t: ContingencyTable2x2) -> float:
    """P(X >= a) under the hypergeometric law with the table's margins fixed.

    Small values are evidence that row 1's a1-share exceeds row 2's.
    """
    return float(fisher_exact(t.rows(), alternative="greater").pvalue)


def binomial_one_sided(t: ContingencyTable2x2) -> float:
    """Row 1's a1 count against a binomial with row 2's share as the null rate."""
    n1, n2 = t.a + t.b, t.c + t.d
    if n1 == 0 or n2 == 0:
        return 1.0
    return float(binomtest(t.a, n1, t.c / n2, alternative="greater").pvalue)


EXACT_TESTS = {"fisher": fisher_exact_one_sided, "binomial": binomial_one_sided}
