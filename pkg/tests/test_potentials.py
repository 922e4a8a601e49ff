import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from lightpulse.errors import ConfigurationError, OutOfRangeError
from lightpulse.grid import HBAR
from lightpulse.potentials import (
    BlochTerm,
    GravityTerm,
    LatticeTerm,
    PulseEnvelope,
    apply_mirror_k_correction,
    bloch_lattice_state,
    double_bragg_pair,
    eval_potential,
)


@pytest.mark.parametrize(
    "env",
    [
        PulseEnvelope("gaussian", 2.0, 1.0, 0.1),
        PulseEnvelope("gaussian", 2.0, 1.0, 0.1, truncation=2.5),
        PulseEnvelope("rectangular", 3.0, 0.0, 0.5),
        PulseEnvelope("ramp", 1.5, 0.0, 1.0),
        PulseEnvelope("ramp", 1.5, 0.0, 1.0, rise=0.1),
    ],
)
def test_envelope_area_matches_quadrature(env):
    t0, t1 = env.support()
    num, _ = quad(env.value, t0, t1, points=[env.center], limit=200)
    assert env.area() == pytest.approx(num, rel=1e-7)


def test_envelope_is_zero_outside_support():
    env = PulseEnvelope("gaussian", 1.0, 0.0, 1.0)
    assert env.value(4.0001) == 0.0 and env.value(-4.0001) == 0.0
    assert env.value(0.0) == 1.0


@pytest.mark.parametrize(
    "kw",
    [
        dict(kind="lorentzian", peak_rabi=1, center=0, duration=1),
        dict(kind="gaussian", peak_rabi=1, center=0, duration=-1),
        dict(kind="ramp", peak_rabi=1, center=0, duration=1, rise=0.6),
    ],
)
def test_bad_envelopes(kw):
    with pytest.raises(ConfigurationError):
        PulseEnvelope(**kw)


@given(
    x=st.floats(min_value=-1e-5, max_value=1e-5),
    t=st.floats(min_value=-1e-4, max_value=1e-4),
    phase=st.floats(min_value=-10, max_value=10),
    v=st.floats(min_value=-0.05, max_value=0.05),
    origin=st.floats(min_value=-1e-3, max_value=1e-3),
    d=st.sampled_from([1, -1]),
)
def test_lattice_formula(small_grid, rb, x, t, phase, v, origin, d):
    env = PulseEnvelope("rectangular", 3.0, 0.0, 1.0)
    term = LatticeTerm(env, rb.k, v, phase, origin, d)
    vx = term.potential(small_grid, t)
    i = int(np.argmin(np.abs(small_grid.x - x)))
    xi = small_grid.x[i]
    expect = HBAR * 3.0 * (1 + math.cos(2 * rb.k * (xi - origin - d * v * t) + phase))
    assert vx[i] == pytest.approx(expect, rel=1e-6, abs=1e-9 * HBAR * 3.0)


def test_inactive_lattice_gives_none(small_grid, rb):
    env = PulseEnvelope("rectangular", 3.0, 0.0, 1.0)
    assert LatticeTerm(env, rb.k).potential(small_grid, 2.0) is None
    assert np.all(eval_potential([LatticeTerm(env, rb.k)], small_grid, 2.0) == 0)


def test_double_bragg_pair_moves_apart(rb):
    env = PulseEnvelope("gaussian", 1.0, 0.0, 1e-5)
    up, down = double_bragg_pair(env, rb.k, rb.v_r)
    assert up.direction == 1 and down.direction == -1
    assert up.velocity == down.velocity == rb.v_r


@given(n=st.integers(min_value=-3, max_value=3).filter(lambda n: n != 0))
def test_bloch_velocity_change(rb, n):
    term = BlochTerm(4.0, rb.k, 2 * rb.v_r, n, 5e-4, 5e-4, 5e-4, 1e-3, rb.v_r, x_start=1e-6)
    _, v0, om0 = bloch_lattice_state(term, term.t_start)
    _, v1, om1 = bloch_lattice_state(term, term.t_end)
    assert v1 - v0 == pytest.approx(2 * n * rb.v_r, rel=1e-12)
    assert om0 == 0.0 and om1 == pytest.approx(0.0, abs=1e-12)
    mid = term.t_start + term.tau_al + 0.5 * term.tau_bo
    x, v, om = bloch_lattice_state(term, mid)
    assert om == 4.0
    assert v == pytest.approx(2 * rb.v_r + n * rb.v_r, rel=1e-12)
    # position is the integral of the velocity
    kink = term.t_start + term.tau_al
    num, _ = quad(lambda s: bloch_lattice_state(term, s)[1], term.t_start, mid, points=[kink], limit=200)
    assert x - 1e-6 == pytest.approx(num, rel=1e-9)


def test_bloch_state_outside_window(rb):
    term = BlochTerm(4.0, rb.k, 0.0, 1, 1e-4, 1e-4, 1e-4, 0.0, rb.v_r)
    with pytest.raises(OutOfRangeError):
        bloch_lattice_state(term, 1.0)


def test_bloch_chirp_requires_duration(rb):
    with pytest.raises(ConfigurationError):
        BlochTerm(4.0, rb.k, 0.0, 1, 1e-4, 0.0, 1e-4, 0.0, rb.v_r)


def test_gravity_potential(small_grid, rb):
    g = GravityTerm(rb.mass, 9.81, 3e-6, x_origin=2e-6)
    u = small_grid.x - 2e-6
    expect = -rb.mass * 9.81 * u - 0.5 * rb.mass * 3e-6 * u**2
    assert np.allclose(g.potential(small_grid), expect, rtol=1e-14, atol=0)
    assert g.support() is None


@given(dk=st.floats(min_value=-1e3, max_value=1e3), n=st.integers(min_value=1, max_value=4))
def test_mirror_k_correction(rb, dk, n):
    env = PulseEnvelope("gaussian", 1.0, 0.0, 1e-5)
    term = LatticeTerm(env, rb.k, rb.v_r)
    out = apply_mirror_k_correction(term, dk, n)
    assert 2 * n * out.k_lattice == pytest.approx(2 * n * rb.k + dk, rel=1e-14)
    assert out.envelope == term.envelope and out.velocity == term.velocity


def test_mirror_k_correction_rejects_order_zero(rb):
    env = PulseEnvelope("gaussian", 1.0, 0.0, 1e-5)
    with pytest.raises(ConfigurationError):
        apply_mirror_k_correction(LatticeTerm(env, rb.k), 1.0, 0)
