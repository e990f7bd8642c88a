from .cmi import CmiEstimate, knn_cmi, plugin_cmi
from .exact import ContingencyTable2x2, binomial_one_sided, fisher_exact_one_sided
from .gbdt import GbdtParams, GroupedCvLoss, gbdt_grouped_cv_logloss, gbdt_oof_losses, grouped_folds
from .isotonic import StepFunction, isotonic_fit
from .resampling import BootstrapCI, bootstrap_ci, local_permutation_pvalue, restricted_permutation

__all__ = [
    "BootstrapCI", "CmiEstimate", "ContingencyTable2x2", "GbdtParams", "GroupedCvLoss",
    "StepFunction", "binomial_one_sided", "bootstrap_ci", "fisher_exact_one_sided",
    "gbdt_grouped_cv_logloss", "gbdt_oof_losses", "grouped_folds", "isotonic_fit", "knn_cmi",
    "local_permutation_pvalue", "plugin_cmi", "restricted_permutation",
]
