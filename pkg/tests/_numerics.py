"""Measurement helpers shared by the unit and acceptance tests."""

import math

import numpy as np

from hkfp.core import DensityField, Params, make_grid
from hkfp.solver import SolverConfig, solve


def mode_amplitude(field: DensityField, k: float) -> float:
    """Amplitude of cos(kx)+sin(kx) content of the fluctuation about 1/(2 ell)."""
    g = field.grid
    psi = field.values - 1.0 / (2.0 * g.ell)
    a = (g.h / g.ell) * np.sum(psi * np.cos(k * g.nodes))
    b = (g.h / g.ell) * np.sum(psi * np.sin(k * g.nodes))
    return math.hypot(a, b)


def measured_growth_rate(k, sigma2, ell=1.0, R=0.5, eps=1e-6, m=256, t_end=2.0, dt=2e-3):
    """Slope of log(mode amplitude) for a small single-mode perturbation of the uniform state."""
    grid = make_grid(ell, m)
    u = 1.0 / (2.0 * ell)
    rho0 = DensityField(grid, u + eps * np.cos(k * grid.nodes))
    rho0 = rho0.scale(1.0 / (grid.h * rho0.values.sum()))
    traj = solve(rho0, Params.from_sigma2(ell, R, sigma2), SolverConfig(t_end=t_end, dt=dt, scheme="imex_cn", record_every=10))
    t = np.array(traj.times)
    amp = np.array([mode_amplitude(f, k) for f in traj.fields])
    return float(np.polyfit(t, np.log(amp), 1)[0])
