"""Systems of one-sided reflected Brownian motions: exact finite-time
determinantal formulas, KPZ limit laws, and Monte Carlo cross-validation."""

from .airylim import (
    baik_rains,
    cdf_airy_stat,
    cdf_limit,
    f_goe_2s,
    f_gue,
    kernel_eval,
)
from .dynamics import (
    burke_check,
    evolve_skorokhod,
    exit_point,
    rescaled_samples,
    scaled_index,
    variational_value,
)
from .finitet import (
    FiniteTimeKernelSpec,
    alpha_beta,
    finite_t_cdf,
    kernel_finite,
    scaled_coords,
    transition_density,
    unscaled_coords,
)
from .fredholm import (
    FredholmProblem,
    MultiPointDomain,
    QuadratureRule,
    fredholm_det,
    fredholm_det_rank_one,
    gauss_legendre,
    map_semiinfinite,
    resolvent_apply,
)
from .harness import (
    ComparisonReport,
    EcdfTable,
    ExperimentConfig,
    dkw_band,
    ecdf,
    ks_distance,
    run_experiment,
)
from .paths import (
    BrownianPaths,
    HeightVector,
    TimeGrid,
    make_initial_condition,
    sample_paths,
)
from .specfun import airy_ai, airy_ai_prime, heat_kernel, lambert_w0

__all__ = [name for name in dir() if not name.startswith("_")]
