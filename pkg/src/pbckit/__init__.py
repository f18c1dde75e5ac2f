"""Probabilistic bias correction and verification for weekly gridded
quintile-bin forecasts."""

from .cdf import (
    PROVENANCES,
    CdfForecast,
    debiased_baseline,
    ensemble_to_cdf,
    hindcast_to_training_cdfs,
)
from .climatology import (
    DEFAULT_K,
    ClimatologyField,
    IndicatorField,
    ThresholdField,
    arid_mask,
    indicators,
    model_thresholds,
    nearest_rank_quantiles,
    observed_thresholds,
    rolling_climatology,
)
from .correction import (
    CANDIDATE_CONFIGS,
    DEFAULT_CONFIG,
    DebiasConfig,
    DebiasResult,
    PersistenceResult,
    RegressionWeights,
    debiaspp,
    persistencepp,
    select_debias_config,
)
from .floods import (
    FloodEvent,
    fetch_events,
    filter_by_issuance,
    flood_bss,
    parse_event_list,
)
from .grids import (
    VARIABLES,
    WEEK_LENGTH,
    AlignmentError,
    EnsembleField,
    GridSpec,
    ObservationField,
    day_of_year_distance,
    shift_years,
)
from .pipeline import (
    LeakageError,
    ObservabilityGuard,
    PipelineConfig,
    ReplayEngine,
    observability_cutoff,
    period_observable,
    run_pipeline,
)
from .projection import (
    BLEND_WEIGHTS,
    isotonic_nondecreasing,
    microduet,
    pbc_combine,
    project_to_cdf,
)
from .scoring import (
    EvalMask,
    ScoreReport,
    bias_map,
    bootstrap_ci,
    bss_extreme,
    evaluation_mask,
    rps,
    rpss_aggregated,
    rpss_global,
    rpss_spatial,
    stratify,
)
from .storage import (
    DimensionMismatchError,
    SchemaError,
    StoreError,
    TruncatedFileError,
    UnknownDtypeError,
    read_store,
    write_store,
)
from .synthetic import BiasProfile, generate_synthetic_world, synthetic_grid

__version__ = "0.1.0"
