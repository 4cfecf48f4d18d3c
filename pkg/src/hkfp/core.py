"""Problem parameters, the periodic grid and density fields."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

DEFAULT_M = 256


class ConfigurationError(ValueError):
    """Invalid parameters or inconsistent inputs."""


@dataclass(frozen=True)
class Params:
    """Half-domain length ``ell``, interaction radius ``radius`` and noise ``sigma``."""

    ell: float
    radius: float
    sigma: float

    def __post_init__(self):
        if not (self.ell > 0 and math.isfinite(self.ell)):
            raise ConfigurationError(f"ell must be positive, got {self.ell}")
        if not (0 < self.radius < self.ell):
            raise ConfigurationError(
                f"radius must satisfy 0 < radius < ell, got radius={self.radius}, ell={self.ell}"
            )
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigurationError(f"sigma must be non-negative, got {self.sigma}")

    @classmethod
    def from_sigma2(cls, ell: float, radius: float, sigma2: float) -> "Params":
        if sigma2 < 0:
            raise ConfigurationError(f"sigma2 must be non-negative, got {sigma2}")
        return cls(ell, radius, math.sqrt(sigma2))

    @property
    def sigma2(self) -> float:
        return self.sigma * self.sigma


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform periodic mesh on [-ell, ell); the right endpoint is the left one."""

    ell: float
    m: int
    h: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = 2.0 * self.ell / self.m
        nodes = -self.ell + h * np.arange(self.m)
        nodes.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "nodes", nodes)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.ell == other.ell and self.m == other.m

    def __hash__(self):
        return hash((self.ell, self.m))

    def radius_cells(self, radius: float) -> int:
        """Number of cells spanned by ``radius`` after snapping to the mesh.

        Warns when the snap changes the radius by more than 1e-12 relative.
        """
        r = int(round(radius / self.h))
        if r < 1:
            raise ConfigurationError(
                f"radius {radius} is below one grid cell (h={self.h}); refine the grid"
            )
        if 2 * r >= self.m:
            raise ConfigurationError(f"radius {radius} spans the whole periodic domain")
        snapped = r * self.h
        if abs(snapped - radius) > 1e-12 * radius:
            warnings.warn(
                f"interaction radius {radius!r} snapped to {snapped!r} (r={r} cells)",
                RuntimeWarning,
                stacklevel=2,
            )
        return r


def make_grid(ell: float, m: int = DEFAULT_M, *, strict: bool = True) -> Grid:
    """Uniform periodic grid with ``m`` cells.

    ``strict=False`` relaxes the ``m >= 8`` / even-``m`` requirement (useful for
    tiny illustrative grids only).
    """
    if not (ell > 0 and math.isfinite(ell)):
        raise ConfigurationError(f"ell must be positive, got {ell}")
    if int(m) != m or m < 2:
        raise ConfigurationError(f"cell count must be an integer >= 2, got {m}")
    m = int(m)
    if strict and (m < 8 or m % 2):
        raise ConfigurationError(f"cell count must be even and >= 8, got {m}")
    return Grid(float(ell), m)


class DensityField:
    """Grid samples of a density (or of a fluctuation about the uniform state).

    Values are copied on construction and frozen, so fields behave as values.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = np.array(values, dtype=float)
        if values.shape != (grid.m,):
            raise ConfigurationError(
                f"field has shape {values.shape}, grid expects ({grid.m},)"
            )
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("field contains non-finite values")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"DensityField(m={self.grid.m}, ell={self.grid.ell}, mass={total_mass(self):.6g})"

    def with_values(self, values) -> "DensityField":
        return DensityField(self.grid, values)

    def scale(self, c: float) -> "DensityField":
        return DensityField(self.grid, c * self.values)

    def shift(self, j: int) -> "DensityField":
        """Translate by ``j`` nodes: ``out[i] = self[i - j]``."""
        return DensityField(self.grid, np.roll(self.values, j))

    def __add__(self, other: "DensityField") -> "DensityField":
        _check_same_grid(self, other)
        return DensityField(self.grid, self.values + other.values)

    def __sub__(self, other: "DensityField") -> "DensityField":
        _check_same_grid(self, other)
        return DensityField(self.grid, self.values - other.values)


def _check_same_grid(a: DensityField, b: DensityField) -> None:
    if a.grid != b.grid:
        raise ConfigurationError("fields live on different grids")


def uniform_density(grid: Grid) -> DensityField:
    return DensityField(grid, np.full(grid.m, 1.0 / (2.0 * grid.ell)))


def total_mass(f: DensityField) -> float:
    """Periodic rectangle rule, h * sum(values)."""
    return float(f.grid.h * np.sum(f.values))


def normalize(f: DensityField) -> DensityField:
    if np.any(f.values < 0):
        raise ConfigurationError("cannot normalize a field with negative entries")
    mass = total_mass(f)
    if not mass > 0:
        raise ConfigurationError("zero mass")
    return DensityField(f.grid, f.values / mass)


def delta_density(grid: Grid, x: float) -> DensityField:
    """Unit-mass discrete delta at the node nearest ``x``."""
    j = int(round((x + grid.ell) / grid.h)) % grid.m
    v = np.zeros(grid.m)
    v[j] = 1.0 / grid.h
    return DensityField(grid, v)


def cosine_perturbation(grid: Grid, amplitude: float, mode: int = 1, phase: float = 0.0) -> DensityField:
    """``1/(2 ell) + amplitude * cos(mode*pi*x/ell + phase)``, renormalized to unit mass."""
    k = mode * math.pi / grid.ell
    v = 1.0 / (2.0 * grid.ell) + amplitude * np.cos(k * grid.nodes + phase)
    return normalize(DensityField(grid, v))


def random_density(grid: Grid, rng: np.random.Generator, n_modes: int = 6, floor: float | None = None) -> DensityField:
    """Random smooth nonnegative probability density.

    A random trigonometric polynomial with ``n_modes`` harmonics is shifted so its
    minimum equals ``floor`` (drawn uniformly in [0, 0.2/(2 ell)] when omitted),
    then normalized.
    """
    x = grid.nodes
    v = np.zeros(grid.m)
    for m in range(1, n_modes + 1):
        k = m * math.pi / grid.ell
        a, b = rng.standard_normal(2) / m
        v += a * np.cos(k * x) + b * np.sin(k * x)
    if floor is None:
        floor = rng.uniform(0.0, 0.2) / (2.0 * grid.ell)
    v = v - v.min()
    v = v / (grid.h * v.sum()) if v.sum() > 0 else np.ones(grid.m)
    v = v + floor
    return normalize(DensityField(grid, v))


def bump_density(grid: Grid, centers, width: float, weights=None) -> DensityField:
    """Normalized sum of periodic Gaussian bumps."""
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    weights = np.ones_like(centers) if weights is None else np.asarray(weights, dtype=float)
    L = 2.0 * grid.ell
    v = np.zeros(grid.m)
    for c, w in zip(centers, weights):
        d = (grid.nodes - c + grid.ell) % L - grid.ell
        v += w * np.exp(-0.5 * (d / width) ** 2)
    return normalize(DensityField(grid, v))
