"""rtrecon - optical coefficient reconstruction for radiative transport.

A library and CLI that recover spatially varying absorption or
scattering coefficients of the radiative transport equation from
boundary photon-current measurements.  The data map is factorized as
``J = A u*`` with ``u* = B(sigma) u* - F``; the coefficient-independent
matrix A gets a precomputed truncated SVD, the signal-subspace part of
``u*`` is recovered analytically, and the coefficient (optionally with a
shared noise-subspace correction) comes from inexpensive quadratic /
quasi-Newton minimization.
"""

__version__ = "0.1.0"

from .errors import (
    CacheError,
    CacheFormatError,
    CacheHashError,
    CacheTruncatedError,
    CacheVersionError,
    ConfigError,
    InvalidArgumentError,
    IterationLimitError,
    NumericalError,
    RtreconError,
    TruncationError,
)
from .grid import AngularGrid, Mesh, build_angular, build_mesh
from .medium import Disk, Inclusion, OpticalField, PhantomSpec, Polygon, Rectangle, rasterize_phantom
from .operators import SystemFactorization, assemble_data_matrix, assemble_inflow_source, build_factorization
from .optimize import BfgsResult, bfgs_minimize
from .recon import ReconConfig, ReconResult, reconstruct, step1_noise, step1_signal, step2_coefficient
from .spectral import SvdCache, TruncationPolicy, compute_svd, load_cache, save_cache, select_L
from .transport import (
    GreenSet,
    StreamingOperator,
    apply_green_volume,
    assemble_green_boundary,
    assemble_green_set,
    intermediate_field,
    measure_current,
    solve_forward,
)
from .experiments import (
    ExperimentSpec,
    add_noise,
    canonical_experiments,
    generate_synthetic_data,
    relative_l2_error,
    restrict_to_inversion_mesh,
    run_experiment,
)
