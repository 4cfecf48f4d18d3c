"""The nonlocal attraction operator G[rho](x) = int_{x-R}^{x+R} (x - y) rho(y) dy.

Two evaluation paths share one stencil: direct summation over the window
(the reference) and a circular convolution through the real FFT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import ConfigurationError, DensityField, Grid, Params

# above this many cells apply_g switches to the FFT path unless told otherwise
FFT_THRESHOLD = 2048


@dataclass(frozen=True, eq=False)
class KernelStencil:
    """Antisymmetric quadrature weights for the window integral.

    ``weights[j-1]`` multiplies ``rho[i-j] - rho[i+j]`` for ``j = 1..r``; the
    window endpoints carry half weight (trapezoid in the window).
    """

    grid: Grid
    radius_cells: int
    weights: np.ndarray
    _minus: np.ndarray
    _plus: np.ndarray

    @property
    def radius(self) -> float:
        return self.radius_cells * self.grid.h

    def full_weights(self) -> np.ndarray:
        """Weights indexed by offset ``j = -r..r`` (length ``2r+1``)."""
        w = np.zeros(2 * self.radius_cells + 1)
        w[self.radius_cells + 1:] = self.weights
        w[:self.radius_cells] = -self.weights[::-1]
        return w

    @property
    def convolution_kernel(self) -> np.ndarray:
        """Periodic kernel ``K`` with ``G = K (*) rho`` (circular convolution)."""
        K = np.zeros(self.grid.m)
        j = np.arange(1, self.radius_cells + 1)
        K[j] = self.weights
        K[-j] = -self.weights
        return K


@lru_cache(maxsize=64)
def _stencil(ell: float, m: int, r: int) -> KernelStencil:
    grid = Grid(ell, m)
    h = grid.h
    j = np.arange(1, r + 1)
    w = h * (j * h)
    w[-1] *= 0.5
    w.setflags(write=False)
    i = np.arange(m)
    minus = (i[None, :] - j[:, None]) % m
    plus = (i[None, :] + j[:, None]) % m
    return KernelStencil(grid, r, w, minus, plus)


def make_stencil(grid: Grid, radius: float) -> KernelStencil:
    return _stencil(grid.ell, grid.m, grid.radius_cells(radius))


def _checked_stencil(rho: DensityField, params: Params) -> KernelStencil:
    if rho.grid.ell != params.ell:
        raise ConfigurationError(
            f"field lives on [-{rho.grid.ell}, {rho.grid.ell}) but params have ell={params.ell}"
        )
    return make_stencil(rho.grid, params.radius)


def g_values(values: np.ndarray, stencil: KernelStencil) -> np.ndarray:
    """Direct summation on a raw array; G of a constant array is exactly 0."""
    diff = values[stencil._minus] - values[stencil._plus]
    return stencil.weights @ diff


def g_values_fft(values: np.ndarray, stencil: KernelStencil) -> np.ndarray:
    K = stencil.convolution_kernel
    return np.fft.irfft(np.fft.rfft(values) * np.fft.rfft(K), n=stencil.grid.m)


def apply_g(rho: DensityField, params: Params, method: str = "auto") -> DensityField:
    """Values of G[rho] at every node, with periodic extension of ``rho``.

    ``method`` is ``"direct"``, ``"fft"`` or ``"auto"`` (FFT for large grids).
    """
    st = _checked_stencil(rho, params)
    if method == "auto":
        method = "fft" if rho.grid.m > FFT_THRESHOLD else "direct"
    if method == "direct":
        out = g_values(rho.values, st)
    elif method == "fft":
        out = g_values_fft(rho.values, st)
    else:
        raise ValueError(f"unknown method {method!r}")
    return DensityField(rho.grid, out)


def g_x_values(values: np.ndarray, stencil: KernelStencil) -> np.ndarray:
    r = stencil.radius_cells
    h = stencil.grid.h
    R = r * h
    ends = np.roll(values, -r) + np.roll(values, r)
    window = np.zeros_like(values)
    for j in range(-r + 1, r):
        window += np.roll(values, -j)
    window = h * (window + 0.5 * ends)
    return -R * ends + window


def apply_g_x(rho: DensityField, params: Params) -> DensityField:
    """Exact x-derivative of G[rho]: ``-R (rho(x+R) + rho(x-R)) + int_{x-R}^{x+R} rho``."""
    st = _checked_stencil(rho, params)
    return DensityField(rho.grid, g_x_values(rho.values, st))


def fourier_multiplier(k: float, params: Params | float) -> float:
    """Symbol of ``d/dx G`` on ``exp(i k x)``: ``2 (sin kR - kR cos kR) / k``.

    ``params`` may also be the bare radius.
    """
    R = params.radius if isinstance(params, Params) else float(params)
    u = k * R
    if abs(u) < 1e-3:
        # series: (2/3) k^2 R^3 (1 - u^2/10 + u^4/280)
        return (2.0 / 3.0) * k * k * R**3 * (1.0 - u * u / 10.0 + u**4 / 280.0)
    return 2.0 * (math.sin(u) - u * math.cos(u)) / k
