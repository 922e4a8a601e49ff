"""Split-operator propagation of the 1D Schrödinger / Gross-Pitaevskii equation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .errors import ConfigurationError, NumericalError
from .grid import HBAR, Grid, rubidium87
from .potentials import is_static
from .state import WaveFunction

SCHEME_ORDERS = ("strang", "third_order")
COMPOSITIONS = ("ruth", "triple_jump")

# Ruth's third-order symplectic composition: alternating potential kicks
# (coefficients _RUTH_V) and kinetic drifts (_RUTH_T), applied left to right.
_RUTH_V = (7.0 / 24.0, 3.0 / 4.0, -1.0 / 24.0)
_RUTH_T = (2.0 / 3.0, -2.0 / 3.0, 1.0)
_CBRT2 = 2.0 ** (1.0 / 3.0)
_TJ_OUTER = 1.0 / (2.0 - _CBRT2)
_TJ_INNER = -_CBRT2 / (2.0 - _CBRT2)

_CHECK_EVERY = 32


@dataclass(frozen=True)
class StepScheme:
    """Splitting scheme and the two time steps.

    ``composition`` selects the third-order variant: ``ruth`` (three
    kick/drift pairs) or ``triple_jump`` (Strang steps of w₁dt, w₀dt, w₁dt,
    which is in fact fourth order).
    """

    order: str = "strang"
    dt_interaction: float = 1e-6
    dt_free: float = 1e-5
    composition: str = "ruth"

    def __post_init__(self):
        if self.order not in SCHEME_ORDERS:
            raise ConfigurationError(f"unknown scheme {self.order!r}", "numerics.scheme")
        if self.composition not in COMPOSITIONS:
            raise ConfigurationError(
                f"unknown composition {self.composition!r}", "numerics.composition"
            )
        if not (self.dt_interaction > 0 and self.dt_free > 0):
            raise ConfigurationError("time steps must be positive", "numerics")
        if self.dt_interaction > self.dt_free:
            raise ConfigurationError(
                "dt_interaction must not exceed dt_free", "numerics.dt_interaction"
            )

    def describe(self) -> dict:
        d = {
            "order": self.order,
            "dt_interaction": self.dt_interaction,
            "dt_free": self.dt_free,
        }
        if self.order == "third_order":
            d["composition"] = self.composition
        return d


@dataclass(frozen=True)
class MeanField:
    """Contact interaction g1d·N·|ψ|² with g1d = 2ħ·a_eff·ω⊥."""

    g1d: float
    n_atoms: float

    def __post_init__(self):
        if self.g1d < 0 or self.n_atoms < 0:
            raise ConfigurationError("g1d and n_atoms must be >= 0", "mean_field")

    @property
    def coupling(self) -> float:
        return self.g1d * self.n_atoms

    @classmethod
    def from_waveguide(cls, a_eff: float, omega_perp: float, n_atoms: float) -> "MeanField":
        return cls(2.0 * HBAR * a_eff * omega_perp, n_atoms)


class Recorder:
    """Base observer called with the state every ``stride`` steps.

    ``free_interval`` (s) splits exact free drifts into chunks so that
    snapshots are also taken during long time of flight.
    """

    def __init__(self, stride: int = 1, free_interval: float | None = None):
        if stride < 1:
            raise ConfigurationError("stride must be >= 1", "density_stride")
        self.stride = int(stride)
        self.free_interval = free_interval

    def record(self, amplitudes: np.ndarray, t: float, grid: Grid) -> None:
        raise NotImplementedError


class DensityRecorder(Recorder):
    """Stores |ψ|² snapshots as float32 rows."""

    def __init__(self, stride: int = 1, free_interval: float | None = None):
        super().__init__(stride, free_interval)
        self.times: list[float] = []
        self.rows: list[np.ndarray] = []
        self.grid: Grid | None = None

    def record(self, amplitudes, t, grid):
        self.grid = grid
        self.times.append(float(t))
        self.rows.append((amplitudes.real**2 + amplitudes.imag**2).astype(np.float32))

    @property
    def matrix(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, 0), dtype=np.float32)
        return np.vstack(self.rows)

    def write(self, stem, csv_every: tuple[int, int] | None = None) -> dict:
        """Write ``stem.json`` + ``stem.bin`` (and ``stem.csv`` when asked).

        ``csv_every`` = (time stride, space stride) for the plotting CSV.
        """
        stem = Path(stem)
        mat = self.matrix
        header = {
            "grid": self.grid.describe() if self.grid else None,
            "stride": self.stride,
            "times": self.times,
            "shape": list(mat.shape),
            "dtype": "<f4",
            "order": "C",
        }
        stem.with_suffix(".json").write_text(json.dumps(header, indent=1))
        stem.with_suffix(".bin").write_bytes(mat.astype("<f4").tobytes())
        if csv_every is not None and self.grid is not None:
            ts, xs = csv_every
            x = self.grid.x[::xs]
            with open(stem.with_suffix(".csv"), "w", encoding="utf-8") as fh:
                fh.write("t,x,density\n")
                for t, row in zip(self.times[::ts], mat[::ts]):
                    for xi, r in zip(x, row[::xs]):
                        fh.write(f"{t!r},{float(xi)!r},{float(r)!r}\n")
        return header


def read_density(stem) -> tuple[dict, np.ndarray]:
    stem = Path(stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    mat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f4")
    return header, mat.reshape(header["shape"])


@dataclass
class _Step:
    t0: float
    dt: float
    free: bool  # exact kinetic evolution, no potential


@dataclass
class PropagationStats:
    n_steps: int = 0
    n_free: int = 0
    segments: list = field(default_factory=list)


def _windows(terms, pad: float):
    spans = sorted(
        (s[0] - pad, s[1] + pad) for s in (t.support() for t in terms) if s is not None
    )
    merged: list[list[float]] = []
    for a, b in spans:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [tuple(w) for w in merged]


def _split_segment(t0: float, t1: float, dt: float, free: bool) -> list[_Step]:
    length = t1 - t0
    n = max(1, math.ceil(length / dt - 1e-9))
    h = length / n
    return [_Step(t0 + i * h, h, free) for i in range(n)]


def build_schedule(terms, scheme: StepScheme, always_interacting: bool, t0: float, t1: float):
    """Steps covering [t0, t1] (t0 < t1).

    Inside padded pulse windows the step is ``dt_interaction``. Elsewhere it
    is ``dt_free``, or one exact kinetic step when nothing acts on the atoms.
    """
    windows = [
        (max(a, t0), min(b, t1))
        for a, b in _windows(terms, scheme.dt_interaction)
        if b > t0 and a < t1
    ]
    steps: list[_Step] = []
    cursor = t0
    for a, b in windows:
        if a > cursor:
            steps += _gap(cursor, a, scheme, always_interacting)
        steps += _split_segment(a, b, scheme.dt_interaction, False)
        cursor = b
    if cursor < t1:
        steps += _gap(cursor, t1, scheme, always_interacting)
    return steps


def _gap(a, b, scheme, always_interacting):
    if always_interacting:
        return _split_segment(a, b, scheme.dt_free, False)
    return [_Step(a, b - a, True)]


class Propagator:
    """Reusable split-operator engine bound to one grid, mass and term list."""

    def __init__(
        self,
        grid: Grid,
        mass: float,
        terms=(),
        scheme: StepScheme | None = None,
        mean_field: MeanField | None = None,
    ):
        self.grid = grid
        self.mass = float(mass)
        self.terms = tuple(terms)
        self.scheme = scheme or StepScheme()
        self.mean_field = mean_field
        self._kin = np.asarray(grid.p) ** 2 / (2.0 * self.mass * HBAR)
        self._kin_cache: dict[float, np.ndarray] = {}
        self._static = [t for t in self.terms if is_static(t)]
        self._dynamic = [t for t in self.terms if not is_static(t)]
        self._v_static = None
        if self._static:
            self._v_static = sum(np.asarray(t.potential(grid, 0.0)) for t in self._static)
        self._gn = mean_field.coupling if mean_field and mean_field.coupling > 0 else 0.0
        self.stats = PropagationStats()

    # -- building blocks --------------------------------------------------
    def kinetic_factor(self, dt: float) -> np.ndarray:
        f = self._kin_cache.get(dt)
        if f is None:
            if len(self._kin_cache) > 64:
                self._kin_cache.clear()
            f = np.exp(-1j * self._kin * dt)
            self._kin_cache[dt] = f
        return f

    def drift(self, a: np.ndarray, dt: float) -> np.ndarray:
        b = sfft.fft(a)
        b *= self.kinetic_factor(dt)
        return sfft.ifft(b, overwrite_x=True)

    def potential(self, t: float):
        """External potential at ``t`` in joules, or ``None`` if zero."""
        v = self._v_static
        for term in self._dynamic:
            part = term.potential(self.grid, t)
            if part is not None:
                v = part if v is None else v + part
        return v

    def _kick(self, a: np.ndarray, phase) -> np.ndarray:
        # phase in radians; applies exp(-i*phase)
        if phase is None:
            return a
        a *= np.exp(-1j * phase)
        return a

    def _strang(self, a, t0, dt):
        tm = t0 + 0.5 * dt
        v = self.potential(tm)
        c = 0.5 * dt / HBAR
        a = self._kick(a, self._phase(v, a, c))
        a = self.drift(a, dt)
        return self._kick(a, self._phase(v, a, c))

    def _phase(self, v, a, c):
        if self._gn:
            dens = a.real**2 + a.imag**2
            w = self._gn * dens if v is None else v + self._gn * dens
            return w * c
        return None if v is None else v * c

    def step(self, a: np.ndarray, t0: float, dt: float) -> np.ndarray:
        """One step of the configured scheme starting at ``t0``."""
        sch = self.scheme
        if sch.order == "strang":
            return self._strang(a, t0, dt)
        if sch.composition == "triple_jump":
            t = t0
            for w in (_TJ_OUTER, _TJ_INNER, _TJ_OUTER):
                a = self._strang(a, t, w * dt)
                t += w * dt
            return a
        t = t0
        for cv, ct in zip(_RUTH_V, _RUTH_T):
            a = self._kick(a, self._phase(self.potential(t), a, cv * dt / HBAR))
            a = self.drift(a, ct * dt)
            t += ct * dt
        return a

    # -- driver -----------------------------------------------------------
    def run(self, psi: WaveFunction, t_end: float, recorder: Recorder | None = None) -> WaveFunction:
        """Propagate to ``t_end``; a ``t_end`` before ``psi.t`` runs backwards."""
        if psi.grid != self.grid:
            raise ConfigurationError("state and propagator grids differ")
        t_start = psi.t
        if t_end == t_start:
            return psi.copy()
        forward = t_end > t_start
        lo, hi = (t_start, t_end) if forward else (t_end, t_start)
        always = self._v_static is not None or self._gn > 0
        steps = build_schedule(self._dynamic, self.scheme, always, lo, hi)
        if not forward:
            steps = [_Step(s.t0 + s.dt, -s.dt, s.free) for s in reversed(steps)]
        a = psi.amplitudes.copy()
        if recorder is not None:
            recorder.record(a, t_start, self.grid)
        merge = self.scheme.order == "strang" and recorder is None
        if merge:
            a = self._run_merged(a, steps)
        else:
            a = self._run_plain(a, steps, recorder)
        self.stats.n_steps += len(steps)
        if not np.isfinite(a).all():
            raise NumericalError("non-finite amplitudes", step=len(steps))
        return WaveFunction(self.grid, a, t_end)

    def _run_plain(self, a, steps, recorder):
        stride = recorder.stride if recorder else 0
        for i, s in enumerate(steps, 1):
            if s.free:
                a = self._free(a, s, recorder)
            else:
                a = self.step(a, s.t0, s.dt)
            if i % _CHECK_EVERY == 0 and not math.isfinite(a[0].real + a.sum().real):
                raise NumericalError("non-finite amplitudes", step=i)
            if recorder is not None and not s.free and i % stride == 0:
                recorder.record(a, s.t0 + s.dt, self.grid)
        return a

    def _free(self, a, s, recorder):
        fi = recorder.free_interval if recorder else None
        if not fi:
            self.stats.n_free += 1
            return self.drift(a, s.dt)
        sub = _split_segment(0.0, abs(s.dt), fi, True)
        sign = 1.0 if s.dt > 0 else -1.0
        for q in sub:
            a = self.drift(a, sign * q.dt)
            recorder.record(a, s.t0 + sign * (q.t0 + q.dt), self.grid)
        return a

    def _run_merged(self, a, steps):
        """Strang loop fusing the trailing half kick of a step with the next
        step's leading half kick into one exponential."""
        pend_v = None  # pending external phase (rad)
        pend_c = 0.0  # pending mean-field time factor dt/2ħ
        gn = self._gn
        for i, s in enumerate(steps, 1):
            if s.free:
                a = self._flush(a, pend_v, pend_c)
                pend_v, pend_c = None, 0.0
                self.stats.n_free += 1
                a = self.drift(a, s.dt)
                continue
            c = 0.5 * s.dt / HBAR
            v = self.potential(s.t0 + 0.5 * s.dt)
            half = None if v is None else v * c
            ph = half if pend_v is None else (pend_v if half is None else pend_v + half)
            if gn:
                dens = a.real**2 + a.imag**2
                mf = dens * (gn * (pend_c + c))
                ph = mf if ph is None else ph + mf
            a = self._kick(a, ph)
            a = self.drift(a, s.dt)
            pend_v, pend_c = half, c
            if i % _CHECK_EVERY == 0 and not math.isfinite(a[0].real + a.sum().real):
                raise NumericalError("non-finite amplitudes", step=i)
        return self._flush(a, pend_v, pend_c)

    def _flush(self, a, pend_v, pend_c):
        ph = pend_v
        if self._gn and pend_c:
            mf = (a.real**2 + a.imag**2) * (self._gn * pend_c)
            ph = mf if ph is None else ph + mf
        return self._kick(a, ph)


def split_step(
    psi: WaveFunction,
    terms,
    scheme: StepScheme,
    mean_field: MeanField | None,
    dt: float,
    *,
    mass: float | None = None,
) -> WaveFunction:
    """Single step of length ``dt`` starting at ``psi.t``.

    ``mass`` defaults to Rb-87.
    """
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    prop = Propagator(psi.grid, _mass(mass), terms, scheme, mean_field)
    a = prop.step(psi.amplitudes.copy(), psi.t, dt)
    if not np.isfinite(a).all():
        raise NumericalError("non-finite amplitudes", step=1)
    return WaveFunction(psi.grid, a, psi.t + dt)


def propagate(
    psi: WaveFunction,
    terms,
    scheme: StepScheme,
    mean_field: MeanField | None,
    t_end: float,
    recorder: Recorder | None = None,
    *,
    mass: float | None = None,
) -> WaveFunction:
    """Propagate ``psi`` to ``t_end`` with the dual-step schedule.

    ``mass`` defaults to Rb-87.
    """
    prop = Propagator(psi.grid, _mass(mass), terms, scheme, mean_field)
    return prop.run(psi, t_end, recorder)


def _mass(mass):
    return rubidium87().mass if mass is None else float(mass)
