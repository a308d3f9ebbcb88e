"""Knockoff-based variable selection with FDR control in partially linear
models, with stability-selection statistics and Sparse-PLS screening."""

__version__ = "0.1.0"

from .errors import NumericalError, StabGKnockError, ValidationError
from .knockoffs import (
    AugmentedDesign,
    KnockoffConfig,
    construct_gknockoff,
    estimate_sigma2,
    row_augment,
    verify_exchangeability,
)
from .lasso import cv_lambda, fit_lasso, lasso_path
from .pipeline import (
    PipelineConfig,
    bh_baseline,
    run_selection,
    spls_stab_gknock,
    split_data,
    stab_gknock,
)
from .screening import exhaustive_best_subset, rrcs_screen, sis_screen, spls_screen
from .selection import SelectionOutcome, bh_select, knockoff_threshold, select
from .spline import DesignTriple, SplineSpec, build_basis, project_data
from .statistics import (
    check_antisymmetry,
    lcd_statistics,
    lsm_statistics,
    make_plan,
    spd_statistics,
)
