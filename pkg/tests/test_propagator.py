import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lightpulse.errors import ConfigurationError
from lightpulse.grid import HBAR, Grid
from lightpulse.potentials import GravityTerm, LatticeTerm, PulseEnvelope
from lightpulse.propagator import (
    DensityRecorder,
    MeanField,
    Propagator,
    StepScheme,
    build_schedule,
    propagate,
    read_density,
    split_step,
)
from lightpulse.state import gaussian_packet, spectrum_moments


def bragg_terms(rb, omega_wr=1.0573, tau=25e-6, phase=0.0):
    env = PulseEnvelope("gaussian", omega_wr * rb.omega_r, 4 * tau, tau)
    return [LatticeTerm(env, rb.k, rb.v_r, phase)]


def test_free_gaussian_spreads_analytically(small_grid, rb):
    sp = 0.3 * rb.hbar_k
    psi = gaussian_packet(small_grid, sp)
    t = 3e-4
    out = Propagator(small_grid, rb.mass).run(psi, t)
    x = small_grid.x
    var = (x**2 * out.density()).sum() * small_grid.dx
    sx0 = HBAR / (2 * sp)
    assert var == pytest.approx(sx0**2 + (sp * t / rb.mass) ** 2, rel=1e-9)


@given(
    omega=st.floats(min_value=0.1, max_value=10.0),
    order=st.sampled_from(["strang", "third_order"]),
    comp=st.sampled_from(["ruth", "triple_jump"]),
)
@settings(max_examples=12)
def test_unitarity(small_grid, rb, omega, order, comp):
    psi = gaussian_packet(small_grid, 0.2 * rb.hbar_k)
    scheme = StepScheme(order, 1e-6, 1e-5, comp)
    out = propagate(psi, bragg_terms(rb, omega), scheme, None, 2e-4)
    assert out.norm() == pytest.approx(1.0, abs=1e-9)


def test_unitarity_with_mean_field_and_gravity(small_grid, rb):
    psi = gaussian_packet(small_grid, 0.2 * rb.hbar_k)
    terms = bragg_terms(rb) + [GravityTerm(rb.mass, 0.0, 1e4)]
    mf = MeanField.from_waveguide(5e-9, 2 * math.pi * 50, 1e4)
    out = propagate(psi, terms, StepScheme(), mf, 2e-4)
    assert out.norm() == pytest.approx(1.0, abs=1e-9)


def _bragg_error(rb, grid, scheme_order, dts, composition="ruth"):
    psi = gaussian_packet(grid, 0.2 * rb.hbar_k)
    terms = bragg_terms(rb, 3.0)
    ref = propagate(psi, terms, StepScheme("third_order", 2.5e-8, 2.5e-8, "triple_jump"), None, 2e-4)
    errs = []
    for dt in dts:
        out = propagate(psi, terms, StepScheme(scheme_order, dt, dt, composition), None, 2e-4)
        errs.append(np.sqrt(np.sum(np.abs(out.amplitudes - ref.amplitudes) ** 2) * grid.dx))
    return np.array(errs)


def test_strang_is_second_order(small_grid, rb):
    dts = np.array([4e-6, 2e-6, 1e-6])
    e = _bragg_error(rb, small_grid, "strang", dts)
    slope = np.polyfit(np.log(dts), np.log(e), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.15)


@pytest.mark.parametrize(
    "composition,dts",
    [("ruth", [8e-6, 4e-6, 2e-6]), ("triple_jump", [2e-6, 1e-6, 5e-7])],
)
def test_third_order_beats_two(small_grid, rb, composition, dts):
    # the triple jump has a negative inner weight and needs smaller steps
    # before the cutoff-momentum phases reach the asymptotic regime
    dts = np.array(dts)
    e = _bragg_error(rb, small_grid, "third_order", dts, composition)
    slope = np.polyfit(np.log(dts), np.log(e), 1)[0]
    assert slope > 2.5


def test_backward_run_recovers_initial_state(small_grid, rb):
    psi = gaussian_packet(small_grid, 0.2 * rb.hbar_k)
    prop = Propagator(small_grid, rb.mass, bragg_terms(rb), StepScheme())
    fwd = prop.run(psi, 2e-4)
    back = prop.run(fwd, 0.0)
    assert back.t == 0.0
    assert back.fidelity(psi) >= 1 - 1e-10


def test_recorder_path_matches_fused_path(small_grid, rb):
    psi = gaussian_packet(small_grid, 0.2 * rb.hbar_k)
    mf = MeanField(1e-40, 1e4)
    fused = propagate(psi, bragg_terms(rb), StepScheme(), mf, 3e-4)
    rec = DensityRecorder(stride=10, free_interval=1e-5)
    plain = propagate(psi, bragg_terms(rb), StepScheme(), mf, 3e-4, rec)
    assert np.max(np.abs(fused.amplitudes - plain.amplitudes)) < 1e-10
    assert rec.matrix.shape[1] == small_grid.n_points
    assert rec.times[0] == 0.0 and np.all(np.diff(rec.times) > 0)


def test_density_files_round_trip(tmp_path, small_grid, rb):
    psi = gaussian_packet(small_grid, 0.2 * rb.hbar_k)
    rec = DensityRecorder(stride=20, free_interval=5e-5)
    propagate(psi, bragg_terms(rb), StepScheme(), None, 4e-4, rec)
    header = rec.write(tmp_path / "density", csv_every=(2, 8))
    h, mat = read_density(tmp_path / "density")
    assert h == header
    assert np.array_equal(mat, rec.matrix)
    lines = (tmp_path / "density.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,x,density"
    assert len(lines) - 1 == len(rec.times[::2]) * len(small_grid.x[::8])


def test_gravity_changes_momentum_linearly(small_grid, rb):
    psi = gaussian_packet(small_grid, 0.3 * rb.hbar_k)
    g = 0.5
    out = propagate(psi, [GravityTerm(rb.mass, g)], StepScheme("strang", 1e-6, 1e-5), None, 1e-3)
    mean, _ = spectrum_moments(out)
    assert mean == pytest.approx(rb.mass * g * 1e-3, rel=1e-6)


def test_schedule_uses_fine_steps_only_inside_pulses(rb):
    terms = bragg_terms(rb, tau=1e-5)  # support [0, 8e-5]
    sch = StepScheme("strang", 1e-6, 1e-4)
    steps = build_schedule(terms, sch, False, 0.0, 1e-3)
    fine = [s for s in steps if not s.free]
    assert all(s.dt <= 1e-6 + 1e-18 for s in fine)
    assert sum(s.dt for s in steps) == pytest.approx(1e-3, rel=1e-12)
    assert sum(1 for s in steps if s.free) == 1
    coarse = build_schedule(terms, sch, True, 0.0, 1e-3)
    assert max(s.dt for s in coarse) <= 1e-4 * (1 + 1e-9)


def test_split_step_advances_time(small_grid, rb):
    psi = gaussian_packet(small_grid, 0.2 * rb.hbar_k)
    out = split_step(psi, bragg_terms(rb), StepScheme(), None, 1e-6)
    assert out.t == pytest.approx(1e-6)
    with pytest.raises(ConfigurationError):
        split_step(psi, [], StepScheme(), None, 0.0)


@pytest.mark.parametrize(
    "kw",
    [
        dict(order="fourth"),
        dict(composition="yoshida"),
        dict(dt_interaction=0.0),
        dict(dt_interaction=1e-4, dt_free=1e-5),
    ],
)
def test_bad_schemes(kw):
    with pytest.raises(ConfigurationError):
        StepScheme(**kw)


def test_grid_mismatch_is_rejected(small_grid, rb):
    psi = gaussian_packet(small_grid, 0.2 * rb.hbar_k)
    other = Grid(small_grid.x_min, small_grid.x_max, 2048)
    with pytest.raises(ConfigurationError):
        Propagator(other, rb.mass).run(psi, 1e-4)


def test_mean_field_phase_matches_local_rotation(small_grid, rb):
    # no kinetic term matters for a single step of zero potential? use tiny dt:
    # the nonlinear phase must equal -g N |ψ|² dt / ħ to first order
    psi = gaussian_packet(small_grid, 0.2 * rb.hbar_k)
    mf = MeanField(1e-40, 1e3)
    dt = 1e-9
    out = split_step(psi, [], StepScheme("strang", dt, dt), mf, dt)
    free = split_step(psi, [], StepScheme("strang", dt, dt), None, dt)
    dphi = np.angle(out.amplitudes / free.amplitudes)
    expect = -mf.coupling * psi.density() * dt / HBAR
    mask = psi.density() > 1e-3 * psi.density().max()
    assert np.allclose(dphi[mask], expect[mask], rtol=1e-4, atol=1e-12)
