import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beliefaudit.estimators import (BootstrapCI, ContingencyTable2x2, GbdtParams, binomial_one_sided,
                                    bootstrap_ci, fisher_exact_one_sided, gbdt_grouped_cv_logloss,
                                    gbdt_oof_losses, grouped_folds, isotonic_fit, knn_cmi, plugin_cmi,
                                    local_permutation_pvalue, restricted_permutation)
from conftest import deterministic_coupling, hypergeom_upper_tail, two_cluster

LN2 = math.log(2.0)


# --------------------------------------------------------------------------- kNN CMI


def test_two_cluster_estimate_near_half_ln2():
    a, t, p = two_cluster(2000, 0)
    assert knn_cmi(a, t, p, k=3).value == pytest.approx(0.5 * LN2, abs=0.05)


def test_deterministic_coupling_estimate_near_ln2():
    a, t, p = deterministic_coupling(2000, 0)
    assert knn_cmi(a, t, p, k=3).value == pytest.approx(LN2, abs=0.05)


def test_constant_action_gives_zero():
    rng = np.random.default_rng(1)
    p = rng.random(300)
    assert knn_cmi(np.zeros(300), rng.integers(0, 2, 300), p).value == pytest.approx(0.0, abs=1e-12)


def test_independent_near_zero():
    rng = np.random.default_rng(2)
    p = rng.random(2000)
    t = (rng.random(2000) < p).astype(int)
    a = rng.integers(0, 3, 2000)
    assert abs(knn_cmi(a, t, p).value) < 0.02


def test_repeated_beliefs_handled():
    a, t, p = two_cluster(1000, 3)
    p = np.round(p, 1)  # heavy ties
    assert np.isfinite(knn_cmi(a, t, p).value)


def test_plugin_matches_discrete_truth():
    a, t, p = two_cluster(20000, 4)
    assert plugin_cmi(a, t, (p > 1.5).astype(int)) == pytest.approx(0.5 * LN2, abs=0.01)


def test_origin_duplicates_do_not_inflate_independent_estimate():
    rng = np.random.default_rng(5)
    n = 500
    p = rng.random(n)
    t = (rng.random(n) < p).astype(int)
    a = rng.integers(0, 3, n)
    idx = rng.integers(0, n, n)
    naive = knn_cmi(a[idx], t[idx], p[idx]).value
    corrected = knn_cmi(a[idx], t[idx], p[idx], origin=idx).value
    assert abs(corrected) < abs(naive)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        knn_cmi([0, 1], [0, 1, 0], [0.1, 0.2, 0.3])


# --------------------------------------------------------------------------- resampling


def test_bootstrap_ci_of_mean_brackets_truth():
    x = np.random.default_rng(0).normal(1.0, 1.0, 400)
    ci = bootstrap_ci(np.mean, x, replicates=400, rng_seed=1)
    assert ci.lower < 1.0 < ci.upper
    assert ci.upper - ci.lower == pytest.approx(2 * 1.96 / 20, rel=0.2)


def test_bootstrap_is_deterministic_and_json_round_trips():
    x = np.arange(50.0)
    a = bootstrap_ci(np.mean, x, replicates=100, rng_seed=3)
    assert a == bootstrap_ci(np.mean, x, replicates=100, rng_seed=3)
    assert BootstrapCI.from_json(a.to_json()) == a


def test_group_bootstrap_keeps_groups_whole():
    groups = np.repeat(np.arange(20), 5)
    x = groups.astype(float)
    seen = []

    def stat(v):
        seen.append(np.bincount(v.astype(int), minlength=20))
        return v.mean()

    bootstrap_ci(stat, x, replicates=20, rng_seed=0, groups=groups)
    for counts in seen:
        assert np.all(counts % 5 == 0)


def test_restricted_permutation_stays_local():
    p = np.sort(np.random.default_rng(0).random(300))
    perm = restricted_permutation(p, 5, np.random.default_rng(1))
    ranks = np.argsort(np.argsort(p))
    assert np.abs(ranks[perm] - ranks).max() <= 10


def test_permutation_pvalue_small_under_dependence_and_formula():
    a, t, p = deterministic_coupling(300, 1)
    pv = local_permutation_pvalue(a, t, p, n_perm=99, rng_seed=0)
    assert pv == pytest.approx(1 / 100)


def test_permutation_requires_enough_draws():
    with pytest.raises(ValueError):
        local_permutation_pvalue([0, 1], [0, 1], [0.1, 0.2], n_perm=50)


# --------------------------------------------------------------------------- exact tests


@pytest.mark.parametrize("table,expected", [((3, 1, 1, 3), 17 / 70), ((5, 0, 0, 5), 1 / 252), ((0, 4, 4, 0), 1.0)])
def test_fisher_known_values(table, expected):
    assert fisher_exact_one_sided(ContingencyTable2x2(*table)) == pytest.approx(expected, abs=1e-12)


def test_fisher_matches_enumeration_small_tables():
    for a, b, c, d in itertools.product(range(5), repeat=4):
        if a + b + c + d == 0:
            continue
        got = fisher_exact_one_sided(ContingencyTable2x2(a, b, c, d))
        assert got == pytest.approx(hypergeom_upper_tail(a, b, c, d), abs=1e-12)


def test_binomial_variant():
    # a=8 of 10 against rate 0.5 from the second row: P(X >= 8) = 56/1024
    assert binomial_one_sided(ContingencyTable2x2(8, 2, 5, 5)) == pytest.approx(56 / 1024, abs=1e-12)


@pytest.mark.parametrize("cells", [(-1, 0, 0, 1), (0, 0, 0, 0)])
def test_invalid_tables_rejected(cells):
    with pytest.raises(ValueError):
        ContingencyTable2x2(*cells)


# --------------------------------------------------------------------------- isotonic


def test_isotonic_pools_violators():
    f = isotonic_fit([1, 2, 3], [3, 1, 2])
    assert [f(v) for v in (1, 2, 3)] == [2, 2, 2]
    g = isotonic_fit([1, 2, 3, 4], [1, 3, 2, 4])
    assert [g(v) for v in (1, 2, 3, 4)] == [1, 2.5, 2.5, 4]


def test_isotonic_step_function_is_right_continuous():
    f = isotonic_fit([0.1, 0.5, 0.9], [0.0, 0.5, 1.0])
    assert f(0.0) == 0.0 and f(0.5) == 0.5 and f(0.7) == 0.5 and f(2.0) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=40))
def test_isotonic_nondecreasing_property(ys):
    xs = np.arange(len(ys), dtype=float)
    f = isotonic_fit(xs, ys)
    assert f.is_nondecreasing()
    fitted = np.array([f(x) for x in xs])
    assert np.all(np.diff(fitted) >= -1e-12)
    assert fitted.mean() == pytest.approx(np.mean(ys), abs=1e-9)


# --------------------------------------------------------------------------- GBDT


def test_grouped_folds_keep_groups_together():
    groups = np.repeat(np.arange(50), 4)
    folds = grouped_folds(groups, 5, rng_seed=0)
    for g in range(50):
        assert len(set(folds[groups == g])) == 1
    assert sorted(set(folds)) == [0, 1, 2, 3, 4]
    assert np.array_equal(folds, grouped_folds(groups, 5, rng_seed=0))


def test_informative_feature_lowers_loss():
    rng = np.random.default_rng(0)
    n = 600
    groups = np.arange(n) // 3
    x = rng.random(n)
    y = (rng.random(n) < x).astype(int)
    informative = gbdt_grouped_cv_logloss(x, y, groups, iterations=200)
    noise = gbdt_grouped_cv_logloss(rng.random(n), y, groups, iterations=200)
    assert informative < noise
    assert noise == pytest.approx(LN2, abs=0.05)


def test_oof_losses_cover_every_record_once():
    rng = np.random.default_rng(1)
    n = 200
    res = gbdt_oof_losses(rng.random((n, 2)), rng.integers(0, 3, n), np.arange(n) // 2, iterations=50)
    assert res.per_record.shape == (n,) and np.all(res.per_record >= 0)
    assert res.mean == pytest.approx(res.per_record.mean())


def test_class_missing_from_own_training_fold_gets_clipped_loss():
    y = np.zeros(20, dtype=int)
    y[0] = 1
    res = gbdt_oof_losses(np.zeros(20), y, np.arange(20), folds=5, iterations=10)
    assert res.per_record[0] == pytest.approx(-math.log(1e-15))


def test_single_class_training_fold_predicts_point_mass():
    y = np.zeros(40, dtype=int)
    res = gbdt_oof_losses(np.random.default_rng(2).random(40), y, np.arange(40), iterations=10)
    assert res.mean == pytest.approx(0.0, abs=1e-12)


def test_params_validate_defaults():
    p = GbdtParams()
    assert p.depth == 6 and p.iterations == 1000 and p.learning_rate == 0.1
