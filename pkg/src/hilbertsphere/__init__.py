"""Intrinsic means, covariance operators and mean tests on the Hilbert sphere."""

__version__ = "0.1.0"

from types import ModuleType as _ModuleType

from .errors import (
    ConditioningError,
    ConvergenceError,
    DegenerateMean,
    DimensionError,
    DomainError,
    FormatError,
    HilbertSphereError,
    ValidationError,
)
from .grid import Grid
from .geometry import (
    SpherePoint,
    TangentOperator,
    TangentVector,
    exp_map,
    geodesic_distance,
    hessian_operator,
    inner,
    log_map,
    parallel_transport,
    rotation_operator,
    transport_operator,
)
from .estimation import (
    EigenSystem,
    FrechetMeanResult,
    SampleSet,
    TangentVectors,
    asymptotic_covariance,
    check_support,
    covariance_operator,
    eigen,
    frechet_mean,
    fve,
    h_operator,
    lambda_hat,
    select_K,
    tangent_vectors,
    transported_covariance,
)
from .inference import (
    Method,
    NullSpectrum,
    TestReport,
    bootstrap_one_sample,
    bootstrap_two_sample,
    extrinsic_two_sample,
    flat_density_two_sample,
    one_sample_norm,
    one_sample_proj,
    one_sample_suite,
    two_sample_norm,
    two_sample_proj,
    two_sample_suite,
    weighted_chisq_pvalue,
    weighted_chisq_quantile,
)
from .simulation import PowerRow, PowerTable, SimConfig, TwoSampleModel, ZoneScenario, run_power_study, run_zone_study
from .io import DensityTable, RunManifest, ingest_densities, read_density_table

__all__ = [k for k, v in list(globals().items()) if not k.startswith("_") and not isinstance(v, _ModuleType)]
