"""Declarative potential terms: pulsed lattices, Bloch lattices, gravity.

Every term exposes ``support()`` (time window, or ``None`` when static) and
``potential(grid, t)`` returning an array in joules, or ``None`` while the
term is switched off.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, OutOfRangeError
from .grid import HBAR, Grid

TWO_PI = 2.0 * math.pi
ENVELOPE_KINDS = ("gaussian", "rectangular", "ramp")


@dataclass(frozen=True)
class PulseEnvelope:
    """Time profile Ω(t) of a pulse.

    ``gaussian``: Ω·exp(−(t−t_c)²/2τ²) cut at ±truncation·τ.
    ``rectangular``: Ω on [t_c − τ/2, t_c + τ/2).
    ``ramp``: trapezoid on the same window with linear edges of length ``rise``.
    """

    kind: str
    peak_rabi: float
    center: float
    duration: float
    truncation: float = 4.0
    rise: float | None = None

    def __post_init__(self):
        if self.kind not in ENVELOPE_KINDS:
            raise ConfigurationError(f"unknown envelope kind {self.kind!r}", "kind")
        if not self.duration >= 0:
            raise ConfigurationError("duration must be >= 0", "tau")
        if self.kind == "gaussian" and not self.truncation > 0:
            raise ConfigurationError("truncation must be positive", "truncation")
        if self.kind == "ramp":
            r = self.duration / 4 if self.rise is None else self.rise
            if not 0 <= 2 * r <= self.duration:
                raise ConfigurationError("ramp edges longer than the pulse", "rise")

    def support(self) -> tuple[float, float]:
        if self.kind == "gaussian":
            half = self.truncation * self.duration
        else:
            half = 0.5 * self.duration
        return (self.center - half, self.center + half)

    def value(self, t: float) -> float:
        t0, t1 = self.support()
        if self.kind == "gaussian":
            if t < t0 or t > t1 or self.duration == 0:
                return 0.0
            u = (t - self.center) / self.duration
            return self.peak_rabi * math.exp(-0.5 * u * u)
        if not t0 <= t < t1:
            return 0.0
        if self.kind == "rectangular":
            return self.peak_rabi
        r = self.duration / 4 if self.rise is None else self.rise
        if r == 0:
            return self.peak_rabi
        return self.peak_rabi * min(1.0, (t - t0) / r, (t1 - t) / r)

    def area(self) -> float:
        """∫Ω(t)dt over the support."""
        if self.kind == "gaussian":
            a = math.sqrt(TWO_PI) * self.duration * math.erf(self.truncation / math.sqrt(2))
            return self.peak_rabi * a
        r = self.duration / 4 if (self.kind == "ramp" and self.rise is None) else (
            self.rise or 0.0
        )
        if self.kind == "rectangular":
            r = 0.0
        return self.peak_rabi * (self.duration - r)

    def shifted(self, dt: float) -> "PulseEnvelope":
        return dataclasses.replace(self, center=self.center + dt)


@lru_cache(maxsize=32)
def _lattice_basis(grid: Grid, k: float) -> tuple[np.ndarray, np.ndarray]:
    arg = 2.0 * k * np.asarray(grid.x)
    c, s = np.cos(arg), np.sin(arg)
    c.flags.writeable = False
    s.flags.writeable = False
    return c, s


def _standing_wave(grid: Grid, k: float, theta: float) -> np.ndarray:
    """1 + cos(2kx + theta) on the grid."""
    c, s = _lattice_basis(grid, k)
    return 1.0 + math.cos(theta) * c - math.sin(theta) * s


@dataclass(frozen=True)
class LatticeTerm:
    """Moving lattice V = 2ħΩ(t)cos²(k(x − x_origin − d·v·t) + φ/2).

    ``phase`` is the full laser phase φ; ``direction`` d = ±1 flips the
    lattice velocity for double-Bragg pairs.
    """

    envelope: PulseEnvelope
    k_lattice: float
    velocity: float = 0.0
    phase: float = 0.0
    x_origin: float = 0.0
    direction: int = 1

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ConfigurationError("direction must be +1 or -1", "direction")
        if not self.k_lattice > 0:
            raise ConfigurationError("k_lattice must be positive", "k")

    def support(self):
        return self.envelope.support()

    def phase_at(self, t: float) -> float:
        base = math.remainder(self.phase - 2.0 * self.k_lattice * self.x_origin, TWO_PI)
        drift = math.remainder(2.0 * self.k_lattice * self.direction * self.velocity * t, TWO_PI)
        return base - drift

    def potential(self, grid: Grid, t: float):
        omega = self.envelope.value(t)
        if omega == 0.0:
            return None
        return (HBAR * omega) * _standing_wave(grid, self.k_lattice, self.phase_at(t))

    def with_phase(self, phase: float) -> "LatticeTerm":
        return dataclasses.replace(self, phase=phase)


def double_bragg_pair(
    envelope: PulseEnvelope, k_lattice: float, velocity: float, **kw
) -> tuple[LatticeTerm, LatticeTerm]:
    """Two counter-moving lattices at ±velocity sharing one envelope."""
    return (
        LatticeTerm(envelope, k_lattice, velocity, direction=1, **kw),
        LatticeTerm(envelope, k_lattice, velocity, direction=-1, **kw),
    )


@dataclass(frozen=True)
class BlochTerm:
    """Lattice loaded at ``v_start``, chirped by 2·n_bloch·v_recoil, unloaded.

    The depth ramps linearly to ``peak_rabi`` over ``tau_al``, holds for the
    chirp ``tau_bo``, and ramps down over ``tau_aul``. A negative
    ``n_bloch`` decelerates.
    """

    peak_rabi: float
    k_lattice: float
    v_start: float
    n_bloch: int
    tau_al: float
    tau_bo: float
    tau_aul: float
    t_start: float
    v_recoil: float
    x_start: float = 0.0
    phase: float = 0.0
    x_origin: float = 0.0

    def __post_init__(self):
        if min(self.tau_al, self.tau_bo, self.tau_aul) < 0:
            raise ConfigurationError("Bloch durations must be >= 0")
        if self.tau_bo == 0 and self.n_bloch != 0:
            raise ConfigurationError("chirp needs tau_bo > 0", "tau_bo")

    @property
    def t_end(self) -> float:
        return self.t_start + self.tau_al + self.tau_bo + self.tau_aul

    @property
    def acceleration(self) -> float:
        if self.tau_bo == 0:
            return 0.0
        return 2.0 * self.n_bloch * self.v_recoil / self.tau_bo

    def support(self):
        return (self.t_start, self.t_end)

    def potential(self, grid: Grid, t: float):
        if not self.t_start <= t <= self.t_end:
            return None
        x_l, _, omega = bloch_lattice_state(self, t)
        if omega == 0.0:
            return None
        theta = math.remainder(self.phase - 2.0 * self.k_lattice * self.x_origin, TWO_PI)
        theta -= math.remainder(2.0 * self.k_lattice * x_l, TWO_PI)
        return (HBAR * omega) * _standing_wave(grid, self.k_lattice, theta)


def bloch_lattice_state(term: BlochTerm, t: float) -> tuple[float, float, float]:
    """Lattice position, velocity and depth at ``t``."""
    if not term.t_start <= t <= term.t_end:
        raise OutOfRangeError(
            f"t={t} outside Bloch window [{term.t_start}, {term.t_end}]"
        )
    a = term.acceleration
    v0 = term.v_start
    t1 = term.t_start + term.tau_al
    t2 = t1 + term.tau_bo
    x1 = term.x_start + v0 * term.tau_al
    if t < t1:
        s = t - term.t_start
        om = term.peak_rabi * (s / term.tau_al if term.tau_al > 0 else 1.0)
        return term.x_start + v0 * s, v0, om
    if t < t2 or term.tau_aul == 0:
        s = min(t, t2) - t1
        return x1 + v0 * s + 0.5 * a * s * s, v0 + a * s, term.peak_rabi
    s = t - t2
    v_f = v0 + a * term.tau_bo
    x2 = x1 + v0 * term.tau_bo + 0.5 * a * term.tau_bo**2
    return x2 + v_f * s, v_f, term.peak_rabi * (1.0 - s / term.tau_aul)


@dataclass(frozen=True)
class GravityTerm:
    """Static V = −m·g·(x − x_origin) − ½·m·Γ·(x − x_origin)²."""

    mass: float
    g: float = 0.0
    gamma: float = 0.0
    x_origin: float = 0.0

    def support(self):
        return None

    def potential(self, grid: Grid, t: float = 0.0):
        u = np.asarray(grid.x) - self.x_origin
        return -self.mass * self.g * u - 0.5 * self.mass * self.gamma * u * u


def is_static(term) -> bool:
    return term.support() is None


def is_active(term, t: float) -> bool:
    sup = term.support()
    if sup is None:
        return True
    return sup[0] <= t <= sup[1]


def eval_potential(terms, grid: Grid, t: float) -> np.ndarray:
    """Sum of all terms at time ``t``; inactive terms contribute zero."""
    v = np.zeros(grid.n_points)
    for term in terms:
        part = term.potential(grid, t)
        if part is not None:
            v += part
    return v


def apply_mirror_k_correction(term: LatticeTerm, delta_k_eff: float, n_order: int) -> LatticeTerm:
    """Shift k_lattice so the effective 2n·k changes by ``delta_k_eff``."""
    if n_order < 1:
        raise ConfigurationError("n_order must be >= 1")
    if delta_k_eff == 0:
        return term
    return dataclasses.replace(term, k_lattice=term.k_lattice + delta_k_eff / (2 * n_order))
