"""Coresets for Gaussian mixture models.

Compress a large point set into a small weighted sample by sensitivity
sampling against a k-means bicriteria solution, fit mixtures on it with
weighted EM, and build such samples over streams or partitions by merge and
compress.
"""

from .compose import (
    CoresetTree,
    compose_budget,
    compress_coreset,
    epsilon_schedule,
    merge_coresets,
    parallel_build,
    stream_finalize,
    stream_insert,
)
from .coreset import (
    AliasTable,
    Coreset,
    CoresetMeta,
    SensitivityScores,
    brute_force_sensitivity,
    build_alias_table,
    build_coreset,
    draw_coreset,
    normalized_sensitivity_bound,
    sensitivity_scores,
    sufficient_coreset_size,
    uniform_subsample,
)
from .dataset import (
    DataError,
    DataSet,
    ParseError,
    VoronoiPartition,
    generate_gmm_sample,
    load_points,
    nearest_center,
    phi,
    save_points,
    save_weighted,
    voronoi_partition,
)
from .gmm import (
    EmReport,
    GmmParams,
    clamp_covariance,
    cost_of_set,
    e_step,
    em_fit,
    fit_best_of,
    likelihood_bound_check,
    load_params,
    log_gaussian,
    log_normalizer,
    m_step,
    negative_log_likelihood,
    point_cost,
    point_costs,
    probe_params,
    random_params,
    regularized_nll,
    relative_error_eta,
    save_params,
    triangle_residual,
)
from .evaluate import PRESETS, evaluate, probe_max_ratio
from .seeding import Bicriteria, adaptive_bicriteria, best_seed_of_p, kmeanspp_seed, weighted_lloyd

__version__ = "0.1.0"
