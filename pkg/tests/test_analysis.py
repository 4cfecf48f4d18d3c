import math

import numpy as np
import pytest

from hkfp.analysis import (
    DecayFit,
    classify_state,
    decay_rate_bound,
    dispersion_growth_rate,
    fit_exponential_decay,
    global_stability_threshold,
    h1_seminorm,
    linear_instability_threshold,
    lp_norm,
    stability_report,
)
from hkfp.core import DensityField, Params, bump_density, make_grid, random_density, uniform_density
from hkfp.solver import SolverConfig, solve

from _numerics import measured_growth_rate


def test_global_threshold_values():
    # (2/pi)(1 + 1/(4 sqrt 3)) and 2(2 + 1/(sqrt 3 pi)), evaluated by hand
    assert global_stability_threshold(Params(1.0, 0.5, 1.0)) == pytest.approx(0.72850792, abs=1e-6)
    assert global_stability_threshold((math.pi, 1.0)) == pytest.approx(4.3675526, rel=1e-7)
    assert global_stability_threshold((1.0, 1e-9)) < 1e-8


def test_decay_bound_values():
    assert decay_rate_bound(Params.from_sigma2(1.0, 0.5, 1.0)) == pytest.approx(-2.3157853, abs=1e-6)
    s2 = global_stability_threshold((1.0, 0.5))
    assert decay_rate_bound(Params.from_sigma2(1.0, 0.5, s2)) == pytest.approx(0.0, abs=1e-9)
    assert decay_rate_bound(Params.from_sigma2(1.0, 0.5, 0.5)) > 0
    with pytest.raises(ValueError):
        decay_rate_bound(Params(1.0, 0.5, 0.0))


def test_threshold_consistency_scan():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        ell = rng.uniform(0.1, 10)
        R = rng.uniform(0.01, 0.99) * ell
        s2_star = global_stability_threshold((ell, R))
        s2 = s2_star * rng.uniform(0.2, 2.0)
        if abs(s2 - s2_star) <= 1e-12 * s2_star:
            continue
        kappa = decay_rate_bound(Params.from_sigma2(ell, R, s2))
        assert (kappa < 0) == (s2 > s2_star)


def test_dispersion_values():
    p = Params.from_sigma2(1.0, 0.5, 0.02)
    assert dispersion_growth_rate(math.pi, p) == pytest.approx(-0.01 * math.pi**2 + 1 / math.pi, rel=1e-14)
    assert dispersion_growth_rate(math.pi, p) == pytest.approx(0.2196138, abs=1e-6)
    assert dispersion_growth_rate(math.pi, Params.from_sigma2(1.0, 0.5, 1.0)) == pytest.approx(-4.6164923, abs=1e-6)
    assert dispersion_growth_rate(0.0, p) == 0.0


def test_dispersion_small_k_form():
    p = Params.from_sigma2(1.0, 0.5, 0.3)
    k = 1e-2
    assert dispersion_growth_rate(k, p) == pytest.approx(-0.15 * k * k + k * k * 0.125 / 3, rel=1e-4)


def test_linear_threshold_values():
    assert linear_instability_threshold((1.0, 0.5)) == pytest.approx(2 / math.pi**3, rel=1e-13)
    assert linear_instability_threshold((1.0, 0.5)) < 2 * 0.125 / 3


def test_linear_threshold_cubic_law():
    ell = 1.0
    for R in (1e-1, 1e-2, 1e-3):
        ratio = linear_instability_threshold((ell, R)) / (2 * R**3 / (3 * ell))
        assert ratio == pytest.approx(1.0, abs=R)
        assert ratio <= 1.0


def test_linear_below_global_scan():
    for ell in (0.5, 1.0, math.pi):
        for frac in np.linspace(0.01, 0.99, 197):
            R = frac * ell
            assert linear_instability_threshold((ell, R)) < global_stability_threshold((ell, R))


@pytest.mark.parametrize("s2,regime", [(1.0, "supercritical"), (0.3, "bistable-candidate"), (0.02, "linearly-unstable")])
def test_stability_report(s2, regime):
    rep = stability_report(Params.from_sigma2(1.0, 0.5, s2))
    assert rep.regime == regime
    assert rep.sigma2_linear <= rep.sigma2_global


def test_growth_rate_matches_linearized_run():
    k = math.pi
    lam = dispersion_growth_rate(k, Params.from_sigma2(1.0, 0.5, 0.05))
    assert measured_growth_rate(k, 0.05) == pytest.approx(lam, rel=0.01)


def test_norm_examples():
    g = make_grid(1.0, 256)
    half = DensityField(g, np.full(256, 0.5))
    assert lp_norm(half, 1) == pytest.approx(1.0, rel=1e-15)
    assert lp_norm(half, 2) == pytest.approx(math.sqrt(0.5), rel=1e-15)
    zero = DensityField(g, np.zeros(256))
    assert lp_norm(zero, 1) == lp_norm(zero, 2) == h1_seminorm(zero) == 0.0
    assert lp_norm(DensityField(g, np.cos(np.pi * g.nodes)), 2) == pytest.approx(1.0, abs=1e-6)
    assert h1_seminorm(DensityField(g, np.cos(np.pi * g.nodes))) == pytest.approx(math.pi, rel=2e-4)
    with pytest.raises(ValueError):
        lp_norm(half, 3)


def test_fit_pure_exponential():
    t = np.arange(11) * 0.1
    fit = fit_exponential_decay(t, np.exp(-2 * t), window=(0.0, 1.0))
    assert isinstance(fit, DecayFit)
    assert fit.rate == pytest.approx(-2.0, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.window[0] < fit.window[1]


def test_fit_constant_series():
    t = np.arange(11) * 0.1
    fit = fit_exponential_decay(t, np.full(11, 3.0), window=(0.0, 1.0))
    assert fit.rate == 0.0 and fit.r_squared == 0.0


def test_fit_errors():
    t = np.arange(11) * 0.1
    with pytest.raises(ValueError):
        fit_exponential_decay(t, np.r_[0.0, np.ones(10)], window=(0.0, 1.0))
    with pytest.raises(ValueError):
        fit_exponential_decay(t[:4], np.ones(4), window=(0.0, 1.0))


def test_supercritical_run_respects_decay_bound():
    g = make_grid(1.0, 256)
    p = Params.from_sigma2(1.0, 0.5, 1.0)
    rho0 = random_density(g, np.random.default_rng(4))
    traj = solve(rho0, p, SolverConfig(t_end=3.0, record_every=4))
    t = np.array(traj.times)
    psi2 = traj.series("psi_l2") ** 2
    kappa = decay_rate_bound(p)
    assert np.all(psi2 <= psi2[0] * np.exp(kappa * t) * 1.05)
    keep = psi2 > 1e-24
    assert fit_exponential_decay(t[keep], psi2[keep], window=(0.5, 3.0)).rate < 0


@pytest.mark.parametrize("m", [8, 16, 64, 256, 1024])
def test_classify_uniform_any_grid(m):
    assert classify_state(uniform_density(make_grid(1.0, m))).label == "Uniform"


def test_classify_bumps():
    g = make_grid(1.0, 256)
    one = bump_density(g, [0.0], 0.05)
    two = bump_density(g, [-0.5, 0.5], 0.05)
    assert str(classify_state(one)) == "Clustered(1)"
    assert str(classify_state(two)) == "Clustered(2)"
    for j in (1, 17, 100):
        assert classify_state(two.shift(j)) == classify_state(two)
