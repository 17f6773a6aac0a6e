"""Trustworthiness auditing for synthetic tabular data.

Evaluates fidelity, privacy, utility, fairness and robustness metrics,
aggregates them into trust-dimension indices via ECDF/copula normalization,
ranks synthetic datasets under split uncertainty, and renders audit reports.
Includes a Gaussian-copula baseline generator with a differentially-private
output sampler.
"""

__version__ = "0.1.0"

from .data import (
    CATEGORICAL,
    CONTINUOUS,
    DataError,
    DatasetSchema,
    FoldSplit,
    Origin,
    Quantizer,
    TabularDataset,
    canonical_row_hash,
    fit_quantizer,
    load_csv,
    quantize,
    split_folds,
)
from .embedding import (
    Embedder,
    RFFMap,
    anova_f_select,
    embed,
    fit_embedder,
    median_heuristic_bandwidth,
    rff_features,
)
from .aggregation import (
    DIMENSIONS,
    MetricPool,
    MetricRecord,
    TrustProfile,
    align_polarity,
    dimension_index,
    ecdf_eval,
    geo_mean_deviation,
    overlap_at_k,
    preset_profiles,
    rank_with_uncertainty,
    select_checkpoint,
    trustworthiness_index,
)
from .synthgen import (
    GaussianCopulaGenerator,
    IndependentCategoricalSampler,
    PrivateSamplerConfig,
    fit_gaussian_copula,
    iterative_retrain,
    private_sample_perturb,
    project_to_simplex,
    sample_gaussian_copula,
)
from .report import (
    AuditConfig,
    AuditError,
    AuditReport,
    render_json,
    render_markdown,
    run_audit,
    run_collapse,
)
