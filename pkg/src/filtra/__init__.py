"""Filtration-based multiscale shared-structure learning for functional regression."""

from .errors import (
    ConvergenceError,
    DegeneratePredictorError,
    DimensionError,
    EvaluationError,
    ExperimentError,
    FiltraError,
    SchemaError,
    SelectionError,
)
from .fdata import (
    CurveSet,
    Grid,
    ResponseVector,
    Standardization,
    center_response,
    fourier_basis,
    inner_product,
    l2_norm,
    standardize_curves,
)
from .filtpls import (
    FiltrationState,
    FittedModel,
    LayerFit,
    StoppingConfig,
    compute_scores,
    deflate,
    estimate_basis,
    fit_layer,
    run_filtration,
)
from .forest import (
    CandidateSet,
    Forest,
    GicConfig,
    McCvConfig,
    enumerate_candidate_sets,
    evaluate_candidate_set,
    fit_grouped_model,
    gic,
    refine_layers,
    select_candidate_set,
    select_theta,
)
from .fusionpath import (
    FusedCoefficients,
    GroupingPath,
    GroupingStructure,
    Penalty,
    compute_path,
    extract_grouping,
    fit_fused,
)
from .model import (
    SharedLayerMatrix,
    coefficient_cis,
    load_model,
    predict,
    predict_layers,
    pss,
    save_model,
    shared_layer_counts,
)
from .pipeline import PipelineSettings, fit_filtrated, fit_with_forest
from .simgen import (
    COEFFICIENT_TABLE,
    ExperimentReport,
    SimConfig,
    fit_fixed_group_baseline,
    fit_ordinary_baseline,
    fit_setup_baseline,
    gen_dataset,
    run_experiment,
    setup_hierarchy,
)

__version__ = "0.1.0"
