"""Numerical laboratory for the mean-field noisy Hegselmann-Krause model."""

__version__ = "0.1.0"

from .core import (
    ConfigurationError,
    DensityField,
    Grid,
    Params,
    make_grid,
    normalize,
    total_mass,
    uniform_density,
)
from .kernel import apply_g, apply_g_x, fourier_multiplier
from .analysis import (
    classify_state,
    decay_rate_bound,
    dispersion_growth_rate,
    fit_exponential_decay,
    global_stability_threshold,
    linear_instability_threshold,
    lp_norm,
    h1_seminorm,
)
from .solver import SolverConfig, Trajectory, picard_solve, solve, step_imex, step_linear_frozen
from .particles import ParticleEnsemble, em_step, empirical_density, run_particles
