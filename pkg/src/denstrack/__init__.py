"""Density tracking for SDEs by iterating the one-step Euler-Maruyama kernel on a grid.

The package is organised as:

``model``       drift/diffusion families and sampled assumption checks
``grid``        grid specs, grid densities, initial densities, L1 tools
``kernel``      the Gaussian one-step kernel and Ornstein-Uhlenbeck closed forms
``propagator``  path-integration steps, evolution, the forward operator
``analysis``    convergence studies, Monte-Carlo oracle, weak-vs-L1 demo
``cli``         the ``denstrack`` command
"""
from ._accel import backend_name
from .analysis import (
    ConvergenceRow, ConvergenceTable, McConfig, WeakGap, convergence_study, fit_rate,
    inverse_cdf_sampler, mc_density, non_semigroup_gap, ou_reference, weak_gap_demo,
)
from .errors import (
    ConfigError, DensTrackError, DomainError, EllipticityError, FormatError, NumericalError,
    PreconditionError, ResolutionError, ShapeError, UnsupportedError,
)
from .grid import (
    Bump, Cauchy, FromFile, Gaussian, GridDensity, GridSpec, SinePerturbedUniform, Uniform,
    characteristic_function, init_density, l1_distance, l1_norm, moment, read_density_csv,
    write_density_csv,
)
from .kernel import (
    KernelParams, OuExact, OuIterated, em_kernel_charfn, em_kernel_eval, em_kernel_params,
    ou_exact, ou_exact_density, ou_exact_kernel, ou_exact_law, ou_iterated_density,
    ou_iterated_law, ou_iterated_params, ou_two_step_params,
)
from .model import (
    AssumptionReport, DiffusionMatrix, Family, SdeModel, affine, check_assumptions,
    diffusion_matrix_at, drift_at, get_model, model_from_config, register_model, sine_diffusion,
)
from .propagator import (
    EvolveResult, NarrowKernelWarning, Propagator, StepMode, StepReport, StiffStepWarning,
    apply_fpk, consistency_residual, evolve, step,
)

__version__ = "0.1.0"
