"""Euler-Maruyama simulation of the N-agent bounded-confidence SDE

    dx_i = -(1/N) sum_j 1{|x_i - x_j| <= R} (x_i - x_j) dt + sigma dW_i

on the periodic domain [-ell, ell), with minimal-image displacements.

Noise is counter based: the increment of the agent with stream id ``i`` at
step ``k`` is entry ``i`` of a standard-normal block keyed by ``(seed, k)``.
Streams therefore travel with agents, which makes runs exchangeable and
bitwise reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import ConfigurationError, DensityField, Grid, Params, total_mass

# pairwise evaluation is used up to this many agents in "auto" mode
PAIRWISE_MAX = 1000
_CHUNK = 512


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    positions: np.ndarray
    ell: float
    seed: int
    ids: np.ndarray | None = None
    step: int = 0
    time: float = 0.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 1 or pos.size < 2:
            raise ConfigurationError("an ensemble needs at least 2 agents")
        pos = wrap(pos, self.ell)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        ids = np.arange(pos.size) if self.ids is None else np.array(self.ids, dtype=np.int64)
        if ids.shape != pos.shape or sorted(ids.tolist()) != list(range(pos.size)):
            raise ConfigurationError("ids must be a permutation of 0..N-1")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.positions.size


def wrap(x: np.ndarray, ell: float) -> np.ndarray:
    """Map positions into [-ell, ell)."""
    L = 2.0 * ell
    y = np.mod(x + ell, L) - ell
    y = np.where(y >= ell, y - L, y)
    # in-range positions are left untouched (x + ell - ell is not exact)
    return np.where((x >= -ell) & (x < ell), x, y)


def _minimal_image(d: np.ndarray, ell: float) -> np.ndarray:
    L = 2.0 * ell
    return d - L * np.round(d / L)


def interaction_sums_pairwise(x: np.ndarray, ell: float, R: float) -> np.ndarray:
    """``sum_j 1{|d_ij| <= R} d_ij`` with ``d_ij`` the signed minimal image of ``x_i - x_j``."""
    out = np.empty_like(x)
    for s in range(0, x.size, _CHUNK):
        d = _minimal_image(x[s:s + _CHUNK, None] - x[None, :], ell)
        out[s:s + _CHUNK] = np.where(np.abs(d) <= R, d, 0.0).sum(axis=1)
    return out


def interaction_sums_sorted(x: np.ndarray, ell: float, R: float) -> np.ndarray:
    """Same sums via sorting and prefix sums over three periodic images, O(N log N)."""
    L = 2.0 * ell
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ext = np.concatenate((xs - L, xs, xs + L))
    csum = np.concatenate(([0.0], np.cumsum(ext)))
    lo = np.searchsorted(ext, xs - R, side="left")
    hi = np.searchsorted(ext, xs + R, side="right")
    count = hi - lo
    f_sorted = count * xs - (csum[hi] - csum[lo])
    out = np.empty_like(x)
    out[order] = f_sorted
    return out


def _noise_block(seed: int, step: int, n: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(1, step))
    return np.random.default_rng(ss).standard_normal(n)


def em_step(ens: ParticleEnsemble, params: Params, dt: float, method: str = "auto") -> ParticleEnsemble:
    """One Euler-Maruyama step."""
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if ens.ell != params.ell:
        raise ConfigurationError("ensemble and params disagree on ell")
    x = ens.positions
    if method == "auto":
        method = "pairwise" if ens.n <= PAIRWISE_MAX else "sorted"
    if method == "pairwise":
        f = interaction_sums_pairwise(x, ens.ell, params.radius)
    elif method == "sorted":
        f = interaction_sums_sorted(x, ens.ell, params.radius)
    else:
        raise ValueError(f"unknown method {method!r}")
    new = x - (dt / ens.n) * f
    if params.sigma > 0:
        xi = _noise_block(ens.seed, ens.step, ens.n)[ens.ids]
        new = new + params.sigma * math.sqrt(dt) * xi
    return replace(ens, positions=new, step=ens.step + 1, time=ens.time + dt)


def empirical_density(ens: ParticleEnsemble, grid: Grid) -> DensityField:
    """Histogram on cells ``[x_j - h/2, x_j + h/2)`` centered on the grid nodes."""
    if grid.ell != ens.ell:
        raise ConfigurationError("ensemble and grid disagree on ell")
    idx = np.floor((ens.positions + grid.ell) / grid.h + 0.5).astype(np.int64) % grid.m
    counts = np.bincount(idx, minlength=grid.m)
    return DensityField(grid, counts / (ens.n * grid.h))


def sample_positions(rho0: DensityField, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling from the piecewise-constant density on node-centered cells."""
    v = rho0.values
    if np.any(v < 0) or not total_mass(rho0) > 0:
        raise ConfigurationError("initial density must be nonnegative with positive mass")
    g = rho0.grid
    p = v / v.sum()
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    u = rng.random(n)
    j = np.minimum(np.searchsorted(cdf, u, side="right"), g.m - 1)
    start = cdf[j] - p[j]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(p[j] > 0, (u - start) / p[j], 0.5)
    frac = np.clip(frac, 0.0, 1.0)
    return wrap(g.nodes[j] + g.h * (frac - 0.5), g.ell)


def run_particles(rho0: DensityField, n: int, params: Params, dt: float, t_end: float, seed: int,
                  snapshot_times=None, method: str = "auto", keep_positions: bool = False):
    """Sample ``n`` agents from ``rho0`` and integrate to ``t_end``.

    Returns ``(ensemble, snapshots)`` where ``snapshots`` is a list of
    ``(t, DensityField)`` on ``rho0.grid`` (or ``(t, DensityField, positions)``
    when ``keep_positions``).  Snapshot times are rounded to whole steps;
    ``t=0`` and ``t_end`` are always included.
    """
    if n < 2:
        raise ConfigurationError("need at least 2 agents")
    if not (dt > 0 and t_end >= 0):
        raise ConfigurationError("need dt > 0 and t_end >= 0")
    steps = int(round(t_end / dt))
    if abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        steps = math.ceil(t_end / dt)
        dt = t_end / steps
    wanted = {0, steps}
    for t in (() if snapshot_times is None else snapshot_times):
        wanted.add(min(steps, max(0, int(round(t / dt)))))

    rng0 = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    ens = ParticleEnsemble(sample_positions(rho0, n, rng0), params.ell, seed)
    snaps = []

    def snap(e):
        rec = (e.step * dt, empirical_density(e, rho0.grid))
        snaps.append(rec + (e.positions,) if keep_positions else rec)

    snap(ens)
    for k in range(1, steps + 1):
        ens = em_step(ens, params, dt, method)
        if k in wanted:
            snap(ens)
    return ens, snaps
