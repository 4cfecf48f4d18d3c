"""Stability thresholds, the dispersion relation, norms, decay fits and
steady-state classification."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DensityField, Params
from .kernel import fourier_multiplier


def _interaction_strength(ell: float, R: float) -> float:
    # sup-norm bound on G_psi plus the L2 contribution: 2R + R^2/(sqrt(3) ell)
    return 2.0 * R + R * R / (math.sqrt(3.0) * ell)


def _ell_radius(params):
    if isinstance(params, Params):
        return params.ell, params.radius
    ell, R = params
    return float(ell), float(R)


def global_stability_threshold(params) -> float:
    """Noise level sigma^2 above which the uniform state attracts every initial density.

    ``params`` is a :class:`Params` or an ``(ell, radius)`` pair.
    """
    ell, R = _ell_radius(params)
    return (2.0 * ell / math.pi) * _interaction_strength(ell, R)


def decay_rate_bound(params: Params) -> float:
    """Exponent kappa in ``||psi(t)||_2^2 <= ||psi(0)||_2^2 exp(kappa t)``."""
    if params.sigma == 0:
        raise ValueError("decay bound requires sigma > 0")
    s2 = params.sigma2
    a = _interaction_strength(params.ell, params.radius)
    return 2.0 * a * a / s2 - math.pi**2 * s2 / (2.0 * params.ell**2)


def dispersion_growth_rate(k: float, params: Params) -> float:
    """Linear growth rate of the mode exp(ikx) about the uniform state."""
    return -0.5 * params.sigma2 * k * k + fourier_multiplier(k, params.radius) / (2.0 * params.ell)


def linear_instability_threshold(params, max_mode: int = 512) -> float:
    """Largest sigma^2 at which some admissible mode ``k = m pi / ell`` grows.

    Maximizes ``2 (sin kR - kR cos kR) / (ell k^3)`` over ``m = 1..max_mode``.
    """
    ell, R = _ell_radius(params)
    m = np.arange(1, max_mode + 1)
    k = m * np.pi / ell
    u = k * R
    vals = 2.0 * (np.sin(u) - u * np.cos(u)) / (ell * k**3)
    small = u < 1e-3
    if np.any(small):
        us = u[small]
        vals[small] = (2.0 * R**3 / (3.0 * ell)) * (1.0 - us * us / 10.0 + us**4 / 280.0)
    return float(max(vals.max(), 0.0))


@dataclass(frozen=True)
class StabilityReport:
    sigma2_global: float
    sigma2_linear: float
    kappa_bound: float
    regime: str


def stability_report(params: Params) -> StabilityReport:
    s_glob = global_stability_threshold(params)
    s_lin = linear_instability_threshold(params)
    kappa = decay_rate_bound(params) if params.sigma > 0 else math.inf
    s2 = params.sigma2
    if s2 > s_glob:
        regime = "supercritical"
    elif s2 < s_lin:
        regime = "linearly-unstable"
    else:
        regime = "bistable-candidate"
    return StabilityReport(s_glob, s_lin, kappa, regime)


def lp_norm(f: DensityField, p: int = 2) -> float:
    """Discrete L^p norm (rectangle rule), p in {1, 2}."""
    if p == 1:
        return float(f.grid.h * np.abs(f.values).sum())
    if p == 2:
        return float(math.sqrt(f.grid.h * np.dot(f.values, f.values)))
    raise ValueError(f"unsupported norm p={p!r}; use 1 or 2")


def h1_seminorm(f: DensityField) -> float:
    dx = (np.roll(f.values, -1) - np.roll(f.values, 1)) / (2.0 * f.grid.h)
    return float(math.sqrt(f.grid.h * np.dot(dx, dx)))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    r_squared: float
    window: tuple


def fit_exponential_decay(t, values, window=(0.5, math.inf)) -> DecayFit:
    """Least-squares fit of ``log(value) = intercept + rate * t`` inside ``window``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    lo, hi = window
    sel = (t >= lo) & (t <= hi)
    t, y = t[sel], y[sel]
    if t.size < 5:
        raise ValueError(f"need at least 5 samples in window, got {t.size}")
    if np.any(y <= 0):
        raise ValueError("exponential fit needs positive values")
    logy = np.log(y)
    tm = t.mean()
    stt = np.sum((t - tm) ** 2)
    if stt == 0:
        raise ValueError("window samples share a single time")
    rate = float(np.sum((t - tm) * (logy - logy.mean())) / stt)
    intercept = float(logy.mean() - rate * tm)
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    ss_res = float(np.sum((logy - intercept - rate * t) ** 2))
    # flat series: nothing to explain
    if ss_tot <= 1e-300 or ss_tot <= 1e-24 * np.sum(logy**2):
        r2 = 0.0
        rate = 0.0 if abs(rate) < 1e-12 else rate
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return DecayFit(rate, intercept, r2, (float(t[0]), float(t[-1])))


@dataclass(frozen=True)
class Classification:
    label: str  # "Uniform" or "Clustered"
    count: int = 0

    def __str__(self):
        return self.label if self.label == "Uniform" else f"Clustered({self.count})"


UNIFORM = Classification("Uniform")

# classifier settings: peak level relative to the uniform value
PEAK_FACTOR = 1.5


def classify_state(f: DensityField, params: Params | None = None, tol: float | None = None) -> Classification:
    """Uniform when ``||f - 1/(2 ell)||_2 < tol``, otherwise count cluster peaks.

    Peaks are strict local maxima (periodically) of the 3-point smoothed
    profile exceeding ``1.5/(2 ell)``; a plateau is not a strict maximum.
    """
    ell = f.grid.ell
    if tol is None:
        tol = 0.05 / math.sqrt(2.0 * ell)
    u = 1.0 / (2.0 * ell)
    if lp_norm(f.with_values(f.values - u), 2) < tol:
        return UNIFORM
    v = f.values
    s = (np.roll(v, 1) + v + np.roll(v, -1)) / 3.0
    peaks = (s > np.roll(s, 1)) & (s > np.roll(s, -1)) & (s > PEAK_FACTOR * u)
    return Classification("Clustered", int(peaks.sum()))
