import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.special import jv
from sklearn.base import clone

from lightpulse.analysis import (
    FringeFitter,
    Port,
    arm_chemical_potentials,
    bessel_j,
    default_phase_scan,
    detect_ports,
    dominant_harmonic,
    fit_fringe,
    meanfield_phase_model,
    momentum_port_populations,
    port_populations,
    raman_nath_oracle,
    velocity_acceptance,
    wrap_phase,
)
from lightpulse.errors import ConfigurationError, FitError, LowContrastError, MeasurementError
from lightpulse.grid import HBAR, Grid, rubidium87
from lightpulse.state import WaveFunction, gaussian_packet


@given(
    dphi=st.floats(min_value=-math.pi + 1e-6, max_value=math.pi),
    contrast=st.floats(min_value=0.05, max_value=1.0),
    offset=st.floats(min_value=0.1, max_value=1.0),
    n=st.integers(min_value=1, max_value=4),
    n_points=st.integers(min_value=9, max_value=40),
)
def test_fit_recovers_exact_fringes(dphi, contrast, offset, n, n_points):
    assume(n_points >= 2 * n + 1)
    phis = default_phase_scan(n_points)
    pops = offset * (1 + contrast * np.cos(dphi + n * phis))
    fit = fit_fringe(phis, pops, n)
    assert abs(wrap_phase(fit.delta_phi - dphi)) <= 1e-10
    assert fit.contrast == pytest.approx(contrast, abs=1e-10)
    assert fit.offset == pytest.approx(offset, abs=1e-10)
    assert fit.residual_rms <= 1e-10
    assert fit.dominant_harmonic == n


def test_injected_phase_is_recovered_through_noise():
    rng = np.random.default_rng(7)
    phis = default_phase_scan(24)
    true = 0.4321
    pops = 0.5 * (1 + 0.9 * np.cos(true + phis)) + rng.normal(0, 1e-4, phis.size)
    fit = fit_fringe(phis, pops, 1)
    assert abs(fit.delta_phi - true) < 1e-3
    assert fit.phase_std < 1e-3


def test_flat_scan_has_no_contrast():
    phis = default_phase_scan(12)
    with pytest.raises(LowContrastError):
        fit_fringe(phis, np.full(12, 0.5), 1)


def test_low_contrast_is_a_fit_error():
    assert issubclass(LowContrastError, FitError)


@pytest.mark.parametrize("n_points", [2, 4])
def test_too_few_points(n_points):
    phis = default_phase_scan(n_points)
    with pytest.raises(FitError, match="at least 5"):
        fit_fringe(phis, 0.5 + 0.5 * np.cos(phis), 1)


def test_scan_must_cover_a_period():
    phis = np.linspace(0, 1.0, 10)
    with pytest.raises(FitError, match="period"):
        fit_fringe(phis, np.cos(phis), 1)
    with pytest.raises(ConfigurationError):
        fit_fringe(phis, np.cos(phis), 0)


def test_fringe_fitter_is_a_regressor():
    phis = default_phase_scan(16)
    y = 0.5 * (1 + np.cos(0.3 + 2 * phis))
    est = FringeFitter(n_order=2).fit(phis.reshape(-1, 1), y)
    assert est.delta_phi_ == pytest.approx(0.3, abs=1e-10)
    assert est.score(phis.reshape(-1, 1), y) == pytest.approx(1.0, abs=1e-12)
    c = clone(est)
    assert c.get_params() == {"n_order": 2}
    assert not hasattr(c, "fit_")


def test_dominant_harmonic_finds_second_order():
    phis = default_phase_scan(24)
    pops = 0.5 + 0.3 * np.cos(2 * phis) + 0.05 * np.cos(phis)
    assert dominant_harmonic(phis, pops) == 2


@given(st.floats(min_value=-50, max_value=50))
def test_wrap_phase_range(phi):
    w = wrap_phase(phi)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(phi), abs_tol=1e-9)


@given(n=st.integers(min_value=-8, max_value=8), x=st.floats(min_value=-40, max_value=40))
def test_bessel_matches_scipy(n, x):
    assert bessel_j(n, x) == pytest.approx(float(jv(n, x)), abs=1e-13)


def test_raman_nath_oracle_conserves_probability():
    pops = raman_nath_oracle(50.0, 0.0377, range(-40, 41))
    assert sum(pops.values()) == pytest.approx(1.0, abs=1e-12)
    assert pops[3] == pytest.approx(jv(3, 50 * 0.0377) ** 2, rel=1e-12)


def test_velocity_acceptance_value():
    sp = rubidium87()
    # v_r/(8ω_rτ) at 50 µs is roughly a tenth of a recoil velocity
    assert velocity_acceptance(50e-6, sp) / sp.v_r == pytest.approx(0.1055, abs=5e-4)
    with pytest.raises(ValueError):
        velocity_acceptance(0.0, sp)


@given(dn=st.floats(min_value=-0.2, max_value=0.2))
def test_meanfield_model_equals_chemical_potential_difference(dn):
    sp = rubidium87()
    g1d = 2 * HBAR * 5e-11 * 2 * math.pi * 50
    n, wx, T = 6e4, 2 * math.pi, 5.7e-4
    mu1, mu2 = arm_chemical_potentials(dn, n, g1d, wx, sp)
    expect = 2 * T * (mu1 - mu2) / HBAR
    # μ₁ − μ₂ cancels at tiny δN, so the oracle carries an absolute floor
    scale = meanfield_phase_model(1.0, n, g1d, wx, sp, T)
    assert meanfield_phase_model(dn, n, g1d, wx, sp, T) == pytest.approx(expect, rel=1e-12, abs=1e-12 * scale)


def test_position_ports_trapezoid(small_grid):
    rho = np.ones(small_grid.n_points) / small_grid.length
    psi = WaveFunction(small_grid, np.sqrt(rho).astype(complex))
    w = small_grid.length / 8
    pops = port_populations(psi, [Port(-w, w / 2), Port(w, w / 2)], floor=0.1)
    for r in pops.raw:
        assert r == pytest.approx(1 / 8, rel=2 * small_grid.dx / w)
    assert pops.normalized == pytest.approx((0.5, 0.5), abs=1e-9)


def test_port_errors(small_grid):
    psi = WaveFunction(small_grid, np.ones(small_grid.n_points, complex)).normalized()
    with pytest.raises(MeasurementError, match="overlap"):
        port_populations(psi, [Port(0.0, 2e-6), Port(1e-6, 2e-6)])
    with pytest.raises(MeasurementError, match="outside"):
        port_populations(psi, [Port(small_grid.x_max, 1e-6)])
    with pytest.raises(MeasurementError):
        port_populations(psi, [Port(0.0, 0.0)])


def test_low_signal_warns(small_grid, rb):
    psi = gaussian_packet(small_grid, 0.3 * rb.hbar_k)
    with pytest.warns(UserWarning, match="floor"):
        pops = momentum_port_populations(psi, [4 * rb.hbar_k, 0.0], rb.hbar_k, floor=1.5)
    assert pops.low_signal


def test_momentum_ports_split(small_grid, rb):
    a = gaussian_packet(small_grid, 0.2 * rb.hbar_k).amplitudes
    b = gaussian_packet(small_grid, 0.2 * rb.hbar_k, p0=2 * rb.hbar_k).amplitudes
    psi = WaveFunction(small_grid, math.sqrt(0.3) * a + math.sqrt(0.7) * b)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pops = momentum_port_populations(psi, [0.0, 2 * rb.hbar_k], 2 * rb.hbar_k)
    assert pops.normalized == pytest.approx((0.3, 0.7), abs=1e-5)


def test_detect_ports_refines_centres():
    x = np.linspace(-1, 1, 2001)
    dens = np.exp(-((x + 0.52) ** 2) / 0.002) + np.exp(-((x - 0.47) ** 2) / 0.002)
    ports = detect_ports(dens, x, [-0.5, 0.5])
    assert ports[0].center == pytest.approx(-0.52, abs=1e-3)
    assert ports[1].center == pytest.approx(0.47, abs=1e-3)
    assert ports[0].bounds[1] <= ports[1].bounds[0]
    with pytest.raises(MeasurementError):
        detect_ports(dens, x, [0.0])
