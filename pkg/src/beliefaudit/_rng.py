"""Deterministic random substreams keyed by (master seed, unit keys)."""
import numpy as np

# stream tags used across modules
OUTCOME, REPORT, ACTION, DISTORT, CONTEXTS, BOOTSTRAP, PERMUTATION, FOLDS = range(8)


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one unit of work.

    The stream depends only on ``seed`` and ``keys``, never on how many
    other units were drawn before it, so parallel and serial execution
    produce the same numbers.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))
