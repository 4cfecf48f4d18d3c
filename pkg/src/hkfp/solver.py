"""Time integration of the periodic nonlocal Fokker-Planck problem.

    rho_t - (sigma^2/2) rho_xx = (rho G[rho])_x

Diffusion is implicit (cyclic tridiagonal solve), the drift flux is explicit
and written in conservative form with centered interface fluxes.  Two
drivers are provided: :func:`solve` lags the nonlinearity by one step, and
:func:`picard_solve` freezes the drift over the whole interval and iterates
on the trajectory.  Their fixed points coincide, so each checks the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded

from .analysis import h1_seminorm, lp_norm
from .core import ConfigurationError, DensityField, Params, total_mass
from .kernel import KernelStencil, g_values, make_stencil

SCHEMES = ("imex_be", "imex_cn")

# undershoots in [-CLIP_TOL, 0) are clipped; anything lower aborts the run
CLIP_TOL = 1e-8

# imex_cn starts with this many backward-Euler steps to damp grid-scale modes
# that Crank-Nicolson would otherwise carry as sign-alternating oscillations
STARTUP_BE_STEPS = 4


class NumericalError(RuntimeError):
    """A run failed for numerical reasons."""


class BlowUpError(NumericalError):
    pass


class CFLError(NumericalError):
    pass


class PicardNotConverged(NumericalError):
    def __init__(self, iterations: int, residual: float, residuals):
        super().__init__(
            f"Picard iteration did not converge in {iterations} iterations "
            f"(last residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual
        self.residuals = list(residuals)


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping controls.  ``dt=None`` picks :func:`default_dt` at run time."""

    t_end: float = 1.0
    dt: float | None = None
    scheme: str = "imex_be"
    picard_tol: float = 1e-8
    picard_max_iter: int = 50
    record_every: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0 or (self.dt is not None and self.t_end < self.dt):
            raise ConfigurationError(f"t_end must be >= dt > 0, got t_end={self.t_end}")
        if not self.picard_tol > 0:
            raise ConfigurationError("picard_tol must be positive")
        if self.picard_max_iter < 1:
            raise ConfigurationError("picard_max_iter must be >= 1")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be >= 1")


def default_dt(h: float, params: Params) -> float:
    """Drift CFL ``0.5 h / (2R)`` (``|G| <= 2R``), further limited by ``0.5 sigma^2 / R^2``.

    The second bound keeps explicit centered transport stable against the
    implicit diffusion; the diffusion itself needs no restriction.
    """
    R = params.radius
    dt = 0.5 * h / (2.0 * R)
    if params.sigma > 0:
        dt = min(dt, 0.5 * params.sigma2 / (R * R))
    return dt


def _step_plan(t_end: float, dt: float) -> tuple[int, float]:
    n = max(1, math.ceil(t_end / dt - 1e-9))
    return n, t_end / n


@dataclass(frozen=True)
class Diagnostics:
    t: float
    mass: float
    min_rho: float
    l1: float
    psi_l2: float
    psi_h1: float


def diagnostics(t: float, rho: DensityField) -> Diagnostics:
    psi = rho.with_values(rho.values - 1.0 / (2.0 * rho.grid.ell))
    return Diagnostics(
        t=t,
        mass=total_mass(rho),
        min_rho=float(rho.values.min()),
        l1=lp_norm(rho, 1),
        psi_l2=lp_norm(psi, 2),
        psi_h1=h1_seminorm(psi),
    )


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def record(self, t: float, rho: DensityField) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError("trajectory times must increase")
        self.times.append(t)
        self.fields.append(rho)
        self.diagnostics.append(diagnostics(t, rho))

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(d, name) for d in self.diagnostics])

    @property
    def final(self) -> DensityField:
        return self.fields[-1]


class _Diffusion:
    """Solver for ``(I - theta dt (sigma^2/2) D2) x = b`` with periodic D2.

    Sherman-Morrison on the cyclic tridiagonal matrix; the correction vector
    is computed once.
    """

    def __init__(self, m: int, s: float):
        self.m = m
        self.s = s
        if s == 0.0:
            return
        b, a = 1.0 + 2.0 * s, -s  # diagonal, off-diagonal (also the corners)
        gamma = -b
        ab = np.empty((3, m))
        ab[0, :] = a
        ab[1, :] = b
        ab[2, :] = a
        ab[1, 0] = b - gamma
        ab[1, -1] = b - a * a / gamma
        self.ab = ab
        u = np.zeros(m)
        u[0], u[-1] = gamma, a
        self.vlast = a / gamma
        z = solve_banded((1, 1), ab, u, check_finite=False)
        denom = 1.0 + z[0] + self.vlast * z[-1]
        if denom == 0.0 or not np.isfinite(denom):
            raise ConfigurationError("singular diffusion matrix")
        self.z = z
        self.denom = denom

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.s == 0.0:
            return rhs.copy()
        # rows sum to one, so constants pass through; solving for the deviation
        # from rhs[0] keeps constant data bit-exact
        base = rhs[0]
        y = solve_banded((1, 1), self.ab, rhs - base, check_finite=False)
        return base + (y - ((y[0] + self.vlast * y[-1]) / self.denom) * self.z)

    def apply_explicit(self, x: np.ndarray) -> np.ndarray:
        """``(I + theta dt (sigma^2/2) D2) x``."""
        return x + self.s * (np.roll(x, 1) - 2.0 * x + np.roll(x, -1))


@lru_cache(maxsize=32)
def _diffusion(m: int, s: float) -> _Diffusion:
    return _Diffusion(m, s)


def _diffusion_number(h: float, sigma2: float, dt: float) -> float:
    return dt * 0.5 * sigma2 / (h * h)


def drift_divergence(rho: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
    """Conservative centered difference of ``rho*g``: ``(F_{i+1/2} - F_{i-1/2}) / h``."""
    q = rho * g
    flux = 0.5 * (q + np.roll(q, -1))  # F_{i+1/2}
    return (flux - np.roll(flux, 1)) / h


def _check_cfl(g: np.ndarray, dt: float, h: float) -> None:
    speed = float(np.max(np.abs(g)))
    if dt * speed > h:
        raise CFLError(f"CFL violated: dt*max|G| = {dt * speed:.3e} > h = {h:.3e}")


def _enforce_sign(values: np.ndarray, mass_ref: float, h: float) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise BlowUpError("non-finite values in density")
    lo = values.min()
    if lo >= 0.0:
        return values
    if lo < -CLIP_TOL:
        raise BlowUpError(f"density undershoot {lo:.3e} below -{CLIP_TOL:g}")
    values = np.maximum(values, 0.0)
    return values * (mass_ref / (h * values.sum()))


def _be_values(rho: np.ndarray, g: np.ndarray, h: float, sigma2: float, dt: float) -> np.ndarray:
    _check_cfl(g, dt, h)
    rhs = rho + dt * drift_divergence(rho, g, h)
    out = _diffusion(rho.size, _diffusion_number(h, sigma2, dt)).solve(rhs)
    return _enforce_sign(out, h * rho.sum(), h)


def _cn_values(rho, g, rho_pred, g_pred, h, sigma2, dt):
    _check_cfl(g_pred, dt, h)
    half = _diffusion(rho.size, _diffusion_number(h, sigma2, 0.5 * dt))
    rhs = half.apply_explicit(rho) + 0.5 * dt * (
        drift_divergence(rho, g, h) + drift_divergence(rho_pred, g_pred, h)
    )
    return _enforce_sign(half.solve(rhs), h * rho.sum(), h)


def _validate(rho: DensityField, params: Params) -> KernelStencil:
    if rho.grid.ell != params.ell:
        raise ConfigurationError("field grid and params disagree on ell")
    return make_stencil(rho.grid, params.radius)


def step_linear_frozen(rho: DensityField, g_field: DensityField, params: Params, dt: float) -> DensityField:
    """One backward-Euler IMEX step of ``rho_t - (sigma^2/2) rho_xx = (rho g)_x`` with ``g`` given."""
    if rho.grid != g_field.grid:
        raise ConfigurationError("rho and g_field live on different grids")
    if rho.grid.ell != params.ell:
        raise ConfigurationError("field grid and params disagree on ell")
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    out = _be_values(rho.values, g_field.values, rho.grid.h, params.sigma2, dt)
    return rho.with_values(out)


def step_imex(rho: DensityField, params: Params, dt: float, scheme: str = "imex_be") -> DensityField:
    """One step with the drift evaluated from the current state."""
    st = _validate(rho, params)
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    return rho.with_values(_imex_values(rho.values, st, params.sigma2, dt, scheme))


def _imex_values(v: np.ndarray, st: KernelStencil, sigma2: float, dt: float, scheme: str) -> np.ndarray:
    h = st.grid.h
    g = g_values(v, st)
    pred = _be_values(v, g, h, sigma2, dt)
    if scheme == "imex_be":
        return pred
    return _cn_values(v, g, pred, g_values(pred, st), h, sigma2, dt)


def _check_initial(rho0: DensityField) -> None:
    if np.any(rho0.values < 0):
        raise ConfigurationError("initial density has negative entries")
    if abs(total_mass(rho0) - 1.0) > 1e-8:
        raise ConfigurationError(f"initial density has mass {total_mass(rho0)!r}, expected 1")


def solve(rho0: DensityField, params: Params, config: SolverConfig) -> Trajectory:
    """Integrate from ``rho0`` to ``config.t_end``, recording every ``record_every`` steps."""
    st = _validate(rho0, params)
    _check_initial(rho0)
    dt = config.dt if config.dt is not None else default_dt(rho0.grid.h, params)
    n, dt = _step_plan(config.t_end, dt)
    traj = Trajectory()
    traj.record(0.0, rho0)
    v = rho0.values
    for k in range(1, n + 1):
        scheme = "imex_be" if k <= STARTUP_BE_STEPS else config.scheme
        v = _imex_values(v, st, params.sigma2, dt, scheme)
        if k % config.record_every == 0 or k == n:
            traj.record(k * dt, rho0.with_values(v))
    return traj


def _time_l1(a: np.ndarray, b: np.ndarray, h: float, dt: float) -> float:
    """Trapezoid-in-time integral of the discrete L1 distance between two histories."""
    d = h * np.abs(a - b).sum(axis=1)
    return float(dt * (d.sum() - 0.5 * (d[0] + d[-1])))


def picard_solve(rho0: DensityField, params: Params, config: SolverConfig):
    """Frozen-drift Picard iteration over the whole interval.

    Iterate ``n`` solves the linear problem whose drift is G of iterate
    ``n-1`` (iterate 0 is ``rho0`` held constant in time).  Stops when the
    time-integrated L1 change drops below ``picard_tol``.

    Returns ``(trajectory, iterations, residuals)``.
    """
    st = _validate(rho0, params)
    _check_initial(rho0)
    h = rho0.grid.h
    dt = config.dt if config.dt is not None else default_dt(h, params)
    n, dt = _step_plan(config.t_end, dt)
    cn = config.scheme == "imex_cn"
    s2 = params.sigma2

    prev = np.tile(rho0.values, (n + 1, 1))
    g0 = g_values(rho0.values, st)
    g_prev = np.tile(g0, (n + 1, 1))
    gp_prev = np.tile(g0, (n, 1)) if cn else None  # G of the predictor stage

    residuals = []
    for it in range(1, config.picard_max_iter + 1):
        cur = np.empty_like(prev)
        cur[0] = rho0.values
        g_cur = np.empty_like(g_prev)
        gp_cur = np.zeros_like(gp_prev) if cn else None
        for k in range(n):
            v = cur[k]
            pred = _be_values(v, g_prev[k], h, s2, dt)
            if cn and k >= STARTUP_BE_STEPS:
                cur[k + 1] = _cn_values(v, g_prev[k], pred, gp_prev[k], h, s2, dt)
                gp_cur[k] = g_values(pred, st)
            else:
                cur[k + 1] = pred
            g_cur[k] = g_values(v, st)
        g_cur[n] = g_values(cur[n], st)

        res = _time_l1(cur, prev, h, dt)
        residuals.append(res)
        prev, g_prev, gp_prev = cur, g_cur, gp_cur
        if res < config.picard_tol:
            traj = Trajectory()
            for k in range(n + 1):
                if k == 0 or k % config.record_every == 0 or k == n:
                    traj.record(k * dt, rho0.with_values(cur[k]))
            return traj, it, residuals
    raise PicardNotConverged(config.picard_max_iter, residuals[-1], residuals)
