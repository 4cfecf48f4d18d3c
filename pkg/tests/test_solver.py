import math

import numpy as np
import pytest

from hkfp.analysis import classify_state
from hkfp.core import (
    ConfigurationError,
    DensityField,
    Params,
    cosine_perturbation,
    make_grid,
    normalize,
    random_density,
    total_mass,
    uniform_density,
)
from hkfp.kernel import apply_g
from hkfp.solver import (
    BlowUpError,
    CFLError,
    PicardNotConverged,
    SolverConfig,
    _Diffusion,
    default_dt,
    picard_solve,
    solve,
    step_imex,
    step_linear_frozen,
)

GRID = make_grid(1.0, 256)


def params(sigma2, R=0.5):
    return Params.from_sigma2(1.0, R, sigma2)


def test_cyclic_solver_matches_dense():
    m, s = 40, 0.73
    A = np.eye(m) * (1 + 2 * s)
    for i in range(m):
        A[i, (i + 1) % m] = A[i, (i - 1) % m] = -s
    b = np.random.default_rng(0).standard_normal(m)
    np.testing.assert_allclose(_Diffusion(m, s).solve(b), np.linalg.solve(A, b), rtol=1e-13, atol=1e-14)


def test_frozen_step_fixed_points():
    rho = uniform_density(GRID)
    zero = DensityField(GRID, np.zeros(GRID.m))
    assert np.array_equal(step_linear_frozen(rho, zero, params(1.0), 1e-3).values, rho.values)
    bumpy = random_density(GRID, np.random.default_rng(1))
    out = step_linear_frozen(bumpy, zero, params(0.0), 1e-3)
    assert np.array_equal(out.values, bumpy.values)


@pytest.mark.parametrize("mode,dt", [(1, 1e-3), (4, 1e-2), (17, 0.05)])
def test_frozen_step_single_mode_amplitude(mode, dt):
    p = params(0.3)
    k = mode * math.pi
    eps = 1e-3
    rho = DensityField(GRID, 0.5 + eps * np.cos(k * GRID.nodes))
    out = step_linear_frozen(rho, DensityField(GRID, np.zeros(GRID.m)), p, dt)
    h = GRID.h
    kd2 = (2 - 2 * math.cos(k * h)) / h**2
    factor = 1 / (1 + dt * p.sigma2 * kd2 / 2)
    amp = (h / 1.0) * np.sum((out.values - 0.5) * np.cos(k * GRID.nodes))
    assert amp == pytest.approx(eps * factor, rel=1e-10)


def test_frozen_step_conserves_mass():
    rng = np.random.default_rng(3)
    rho = random_density(GRID, rng)
    g = DensityField(GRID, 0.2 * rng.standard_normal(GRID.m))
    out = step_linear_frozen(rho, g, params(0.2), 1e-3)
    assert abs(total_mass(out) - total_mass(rho)) <= 1e-13


def test_frozen_step_cfl_guard():
    g = DensityField(GRID, np.full(GRID.m, 10.0))
    with pytest.raises(CFLError):
        step_linear_frozen(uniform_density(GRID), g, params(0.2), 0.01)


def test_undershoot_aborts():
    v = np.zeros(GRID.m)
    v[100] = 1 / GRID.h
    g = np.zeros(GRID.m)
    g[100] = 0.01  # centered flux drives the empty neighbour negative
    with pytest.raises(BlowUpError):
        step_linear_frozen(DensityField(GRID, v), DensityField(GRID, g), params(0.0), 0.5)


def test_step_imex_uniform_unchanged():
    rho = uniform_density(GRID)
    np.testing.assert_allclose(step_imex(rho, params(1.0), 1e-3).values, rho.values, atol=1e-14, rtol=0)


def test_step_imex_equals_frozen_step_with_current_drift():
    p = params(0.2)
    rho = random_density(GRID, np.random.default_rng(7))
    a = step_imex(rho, p, 2e-3)
    b = step_linear_frozen(rho, apply_g(rho, p), p, 2e-3)
    assert np.array_equal(a.values, b.values)


def test_mass_after_1000_steps():
    p = params(0.2)
    rho = random_density(GRID, np.random.default_rng(11))
    dt = default_dt(GRID.h, p)
    for _ in range(1000):
        rho = step_imex(rho, p, dt)
    assert abs(total_mass(rho) - 1.0) <= 1e-10


@pytest.mark.parametrize("sigma2", [0.02, 0.2, 1.0])
def test_step_keeps_nonnegative(sigma2):
    p = params(sigma2)
    rng = np.random.default_rng(int(sigma2 * 1000))
    dt = default_dt(GRID.h, p)
    for _ in range(30):
        kind = rng.integers(3)
        if kind == 0:
            v = rng.uniform(0, 1, GRID.m)
        elif kind == 1:
            v = (rng.uniform(0, 1, GRID.m) < 0.1) * rng.uniform(0, 1, GRID.m) + 1e-300
        else:
            v = random_density(GRID, rng, floor=0.0).values
        rho = DensityField(GRID, v / (GRID.h * v.sum()))
        assert step_imex(rho, p, dt).values.min() >= -1e-10


def test_solver_config_validation():
    with pytest.raises(ConfigurationError):
        SolverConfig(dt=0.1, t_end=0.01)
    with pytest.raises(ConfigurationError):
        SolverConfig(scheme="rk4")
    with pytest.raises(ConfigurationError):
        SolverConfig(picard_max_iter=0)


def test_solve_rejects_bad_initial_data():
    with pytest.raises(ConfigurationError):
        solve(uniform_density(GRID).scale(2.0), params(1.0), SolverConfig(t_end=0.1))


def test_solve_uniform_is_stationary():
    traj = solve(uniform_density(GRID), params(0.05), SolverConfig(t_end=1.0, record_every=10))
    for f in traj.fields:
        np.testing.assert_allclose(f.values, 0.5, atol=1e-12, rtol=0)
    assert np.all(np.diff(traj.times) > 0)
    assert len(traj.diagnostics) == len(traj.times)


def test_supercritical_decay_is_monotone():
    traj = solve(cosine_perturbation(GRID, 0.1), params(1.0), SolverConfig(t_end=3.0, record_every=5))
    t, psi = np.array(traj.times), traj.series("psi_l2")
    tail = psi[(t >= 0.1) & (psi > 1e-13)]
    assert np.all(np.diff(tail) < 0)


def test_subcritical_run_clusters():
    traj = solve(cosine_perturbation(GRID, 0.1), params(0.02), SolverConfig(t_end=20.0, record_every=50))
    psi = traj.series("psi_l2")
    assert psi.max() > 5 * psi[0]
    # saturated: little change over the last stretch
    assert abs(psi[-1] - psi[-5]) < 0.02 * psi[-1]
    assert classify_state(traj.final).label == "Clustered"


def test_picard_uniform_converges_in_one_iteration():
    traj, n, res = picard_solve(uniform_density(GRID), params(1.0), SolverConfig(t_end=0.2))
    assert n == 1 and res == [0.0]


@pytest.mark.parametrize("scheme", ["imex_be", "imex_cn"])
def test_picard_matches_solve(scheme):
    p = params(1.0)
    rho0 = cosine_perturbation(GRID, 0.1)
    cfg = SolverConfig(t_end=0.5, scheme=scheme, picard_tol=1e-8)
    traj, n, res = picard_solve(rho0, p, cfg)
    ref = solve(rho0, p, cfg)
    assert np.max(np.abs(traj.final.values - ref.final.values)) <= 1e-6
    ratios = np.array(res[2:]) / np.array(res[1:-1])
    assert np.all(ratios < 1)


def test_picard_iteration_limit():
    cfg = SolverConfig(t_end=0.5, picard_tol=1e-14, picard_max_iter=2)
    with pytest.raises(PicardNotConverged) as err:
        picard_solve(cosine_perturbation(GRID, 0.2), params(0.2), cfg)
    assert err.value.residual > 0 and len(err.value.residuals) == 2


@pytest.mark.parametrize("scheme,min_order", [("imex_be", 1.0), ("imex_cn", 1.8)])
def test_temporal_order(scheme, min_order):
    grid = make_grid(1.0, 128)
    p = params(0.2)
    rho0 = cosine_perturbation(grid, 0.2, mode=1, phase=0.3)
    dt0, T = 0.02, 0.5
    ref = solve(rho0, p, SolverConfig(t_end=T, dt=dt0 / 16, scheme=scheme)).final.values
    dts = [dt0, dt0 / 2, dt0 / 4]
    errs = [np.max(np.abs(solve(rho0, p, SolverConfig(t_end=T, dt=d, scheme=scheme)).final.values - ref)) for d in dts]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= min_order), orders


def test_cn_rough_data_stays_nonnegative():
    grid = make_grid(1.0, 256)
    rng = np.random.default_rng(11)
    v = rng.random(grid.m) * (rng.random(grid.m) < 0.7)
    rho0 = normalize(DensityField(grid, v))
    for s2 in (0.02, 0.2, 1.0):
        traj = solve(rho0, Params.from_sigma2(1.0, 0.5, s2), SolverConfig(t_end=0.5, scheme="imex_cn"))
        assert traj.series("min_rho").min() >= 0.0
        np.testing.assert_allclose(traj.series("mass"), 1.0, atol=1e-12)
