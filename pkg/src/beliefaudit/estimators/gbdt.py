"""Boosted-tree classifier scored by grouped cross-validated log-loss."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import HistGradientBoostingClassifier
from sklearn.model_selection import GroupKFold, GroupShuffleSplit

EPS = 1e-15


@dataclass(frozen=True)
class GbdtParams:
    depth: int = 6
    iterations: int = 1000
    learning_rate: float = 0.1
    # strong leaf and l2 regularization keep an uninformative extra feature
    # from costing out-of-fold loss
    min_samples_leaf: int = 80
    l2_regularization: float = 10.0
    early_stopping: bool = True
    validation_fraction: float = 0.2
    patience: int = 20


@dataclass(frozen=True)
class GroupedCvLoss:
    mean: float
    per_record: np.ndarray  # out-of-fold log-loss of each record
    folds: np.ndarray  # test-fold index of each record


def grouped_folds(groups, folds: int, rng_seed: int = 0) -> np.ndarray:
    """Test-fold index per record; every group lands in exactly one fold."""
    groups = np.asarray(groups)
    n_groups = len(np.unique(groups))
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n_groups < folds:
        raise ValueError(f"{n_groups} groups cannot fill {folds} folds")
    out = np.empty(len(groups), dtype=np.int64)
    splitter = GroupKFold(n_splits=folds, shuffle=True, random_state=rng_seed)
    for f, (_, test) in enumerate(splitter.split(np.zeros(len(groups)), groups=groups)):
        out[test] = f
    return out


def _fit_predict(x_tr, y_tr, g_tr, x_te, n_classes, params: GbdtParams, seed: int) -> np.ndarray:
    present = np.unique(y_tr)
    proba = np.full((len(x_te), n_classes), 0.0)
    if len(present) == 1:
        proba[:, present[0]] = 1.0
        return proba
    fit_kw = {}
    use_es = params.early_stopping and len(np.unique(g_tr)) >= 4
    if use_es:
        inner = GroupShuffleSplit(n_splits=1, test_size=params.validation_fraction, random_state=seed)
        fit_idx, val_idx = next(inner.split(x_tr, y_tr, groups=g_tr))
        # the validation split must not introduce classes unseen in fitting
        if set(np.unique(y_tr[val_idx])) <= set(np.unique(y_tr[fit_idx])) and len(np.unique(y_tr[fit_idx])) > 1:
            fit_kw = {"X_val": x_tr[val_idx], "y_val": y_tr[val_idx]}
            x_tr, y_tr = x_tr[fit_idx], y_tr[fit_idx]
        else:
            use_es = False
    model = HistGradientBoostingClassifier(
        learning_rate=params.learning_rate,
        max_iter=params.iterations,
        max_depth=params.depth,
        max_leaf_nodes=None,
        min_samples_leaf=params.min_samples_leaf,
        l2_regularization=params.l2_regularization,
        early_stopping=use_es,
        n_iter_no_change=params.patience,
        scoring="loss",
        random_state=seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model.fit(x_tr, y_tr, **fit_kw)
    proba[:, model.classes_] = model.predict_proba(x_te)
    return proba


def gbdt_oof_losses(features, labels, groups, folds: int = 5, depth: int = 6,
                    iterations: int = 1000, rng_seed: int = 0,
                    params: GbdtParams | None = None) -> GroupedCvLoss:
    """Out-of-fold multiclass log-loss per record under grouped K-fold CV."""
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    raw = np.asarray(labels)
    classes, y = np.unique(raw, return_inverse=True)
    groups = np.asarray(groups)
    if not (len(x) == len(y) == len(groups)):
        raise ValueError("features, labels and groups must have equal lengths")
    params = params or GbdtParams()
    params = GbdtParams(**{**params.__dict__, "depth": depth, "iterations": iterations})

    fold_of = grouped_folds(groups, folds, rng_seed)
    seen = np.zeros(len(classes), dtype=bool)
    for f in range(folds):
        seen[np.unique(y[fold_of != f])] = True
    if not seen.all():
        missing = [str(c) for c in classes[~seen]]
        raise ValueError(f"class {', '.join(missing)} absent from every training fold")

    losses = np.empty(len(y))
    for f in range(folds):
        test = fold_of == f
        train = ~test
        proba = _fit_predict(x[train], y[train], groups[train], x[test], len(classes), params,
                             rng_seed + f)
        picked = np.clip(proba[np.arange(test.sum()), y[test]], EPS, 1.0)
        losses[test] = -np.log(picked)
    return GroupedCvLoss(float(losses.mean()), losses, fold_of)


def gbdt_grouped_cv_logloss(features, labels, groups, folds: int = 5, depth: int = 6,
                            iterations: int = 1000, rng_seed: int = 0,
                            params: GbdtParams | None = None) -> float:
    """Record-weighted mean out-of-fold log-loss."""
    return gbdt_oof_losses(features, labels, groups, folds, depth, iterations, rng_seed, params).mean
