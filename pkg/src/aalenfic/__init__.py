"""Additive hazard regression with focused model selection.

Fits the nonparametric additive hazard model and its semiparametric variants
(any split of the covariates into time-varying, constant, and excluded
effects), scores every candidate split with a focused criterion targeting
the cumulative hazard at chosen covariate profiles and times, and supports
weighted criteria, model averaging, and bootstrap confidence intervals.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .bootstrap import (
    BootstrapResult,
    CensoringSampler,
    FittedLifetimeSampler,
    PipelineConfig,
    bootstrap_ci,
    censoring_km,
    pipeline_estimate,
    simulate_dataset,
)
from .dataset import (
    CsvConfig,
    Dataset,
    GramCache,
    Subject,
    TimeGrid,
    build_grid,
    build_gram_cache,
    load_csv,
    risk_matrix_at,
)
from .errors import (
    AalenFicError,
    DegenerateConditionalError,
    EmptyModelError,
    EmptyRankingError,
    IngestionError,
    NonMonotoneHazardWarning,
    SamplerClampWarning,
    SingularDesignError,
    ValidationError,
)
from .estimators import (
    FocusPoint,
    ModelSpec,
    SemiparFit,
    StepFunction,
    cumhaz,
    fit_full,
    fit_semiparametric,
    survival,
    weight_rows,
)
from .fic import FicScore, bias_estimate, fic_score, sqb_estimate, variance_estimate
from .selector import (
    AverageEstimate,
    Criterion,
    ProtectionRule,
    RankedRow,
    Ranking,
    enumerate_models,
    model_average,
    rank,
)
from .wfic import (
    WeightMeasure,
    WficScore,
    empirical_measure,
    virtual_patient_measure,
    wfic_score,
)

__version__ = "0.1.0"
