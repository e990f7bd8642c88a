"""Monotone least-squares recalibration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.isotonic import IsotonicRegression


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function: the level of the largest knot <= x.

    Inputs left of the first knot take the first level.
    """

    knots: tuple[float, ...]
    levels: tuple[float, ...]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pos = np.searchsorted(np.asarray(self.knots), x, side="right") - 1
        out = np.asarray(self.levels)[np.clip(pos, 0, len(self.levels) - 1)]
        return out if out.ndim else float(out)

    def is_nondecreasing(self) -> bool:
        return bool(np.all(np.diff(self.levels) >= 0))


def isotonic_fit(x, y) -> StepFunction:
    """Pool-adjacent-violators fit of a nondecreasing f minimizing sum (y - f(x))^2."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) == 0:
        raise ValueError("isotonic_fit needs at least one point")
    if len(x) != len(y):
        raise ValueError("x and y must have equal lengths")
    model = IsotonicRegression(increasing=True, out_of_bounds="clip").fit(x, y)
    knots = np.unique(x)
    levels = model.predict(knots)
    # keep the fitted levels exactly monotone after floating-point pooling
    levels = np.maximum.accumulate(levels)
    return StepFunction(tuple(float(v) for v in knots), tuple(float(v) for v in levels))
