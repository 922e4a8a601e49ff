"""Interferometer schedules: specification, builders, execution and scans."""

from __future__ import annotations

import dataclasses
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .analysis import (
    FringeFit,
    Port,
    PortPopulations,
    default_phase_scan,
    detect_ports,
    fit_fringe,
    momentum_port_populations,
    port_populations,
)
from .errors import CalibrationError, ConfigurationError, FitError, MeasurementError
from .grid import HBAR, Grid, Species, grid_for_spacing
from .potentials import BlochTerm, GravityTerm, LatticeTerm, PulseEnvelope, apply_mirror_k_correction
from .propagator import MeanField, Propagator, Recorder, StepScheme
from .state import WaveFunction, gaussian_packet, ground_state_gpe, momentum_spectrum

FRAMES = ("lab", "freely_falling")


# ---------------------------------------------------------------------------
# specification types


@dataclass(frozen=True)
class PulseSpec:
    """One light pulse made of one or more lattice terms acting together."""

    terms: tuple
    label: str = ""
    order: int = 1
    composite: bool = False

    def __post_init__(self):
        if not self.terms:
            raise ConfigurationError("pulse without lattice terms", self.label or "pulses")

    @property
    def window(self) -> tuple[float, float]:
        spans = [t.support() for t in self.terms]
        return (min(s[0] for s in spans), max(s[1] for s in spans))

    def with_extra_phase(self, phi: float) -> "PulseSpec":
        if phi == 0:
            return self
        terms = tuple(dataclasses.replace(t, phase=t.phase + phi) for t in self.terms)
        return dataclasses.replace(self, terms=terms)

    def with_k_correction(self, delta_k_eff: float) -> "PulseSpec":
        terms = tuple(
            apply_mirror_k_correction(t, delta_k_eff, self.order) if isinstance(t, LatticeTerm) else t
            for t in self.terms
        )
        return dataclasses.replace(self, terms=terms)


@dataclass(frozen=True)
class InitialState:
    """Gaussian packet (``sigma_p``, ``x0``, ``p0`` in SI) or a trapped BEC."""

    kind: str = "gaussian"
    sigma_p: float = 0.0
    x0: float = 0.0
    p0: float = 0.0
    omega_x: float = 0.0
    tol: float = 1e-13

    def __post_init__(self):
        if self.kind not in ("gaussian", "bec"):
            raise ConfigurationError(f"unknown initial state {self.kind!r}", "initial_state.kind")
        if self.kind == "gaussian" and not self.sigma_p > 0:
            raise ConfigurationError("sigma_p must be positive", "initial_state.sigma_p")
        if self.kind == "bec" and not self.omega_x > 0:
            raise ConfigurationError("omega_x must be positive", "initial_state.omega_x")


@dataclass(frozen=True)
class Measurement:
    """Port read-out.

    ``ports`` are momenta (SI). In position mode the windows are centred on
    the ballistic predictions x_ref + (p + p_offset)/m·(t_end − t_ref),
    refined to the nearest density maxima. In momentum mode they are bins
    of width ``bin_width`` (default ħk).
    """

    ports: tuple
    mode: str = "position"
    x_ref: float = 0.0
    t_ref: float = 0.0
    half_width: float | None = None
    bin_width: float | None = None
    phase_pulse: int = -1
    n_order: int = 1
    plus_port: int = 0
    floor: float = 0.5
    parasitic_radius: float | None = None
    min_separation_sigmas: float = 4.0

    def __post_init__(self):
        if self.mode not in ("position", "momentum"):
            raise ConfigurationError(f"unknown measurement mode {self.mode!r}", "measurement.mode")
        if not self.ports:
            raise ConfigurationError("at least one port is required", "measurement.ports")
        if not 0 <= self.plus_port < len(self.ports):
            raise ConfigurationError("plus_port out of range", "measurement.plus_port")


@dataclass(frozen=True)
class SequenceSpec:
    species: Species
    grid: Grid
    initial: InitialState
    pulses: tuple
    tof: float
    measurement: Measurement
    scheme: StepScheme = field(default_factory=StepScheme)
    mean_field: MeanField | None = None
    static_terms: tuple = ()
    T: float | None = None
    phi0: float = 0.0
    frame: str = "lab"
    kind: str = "custom"
    t_start: float | None = None

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise ConfigurationError(f"unknown frame {self.frame!r}", "frame")
        if self.tof < 0:
            raise ConfigurationError("time of flight must be >= 0", "measurement.tof")
        if self.initial.kind == "bec" and self.mean_field is None:
            raise ConfigurationError("a BEC initial state needs [mean_field]", "mean_field")
        wins = [p.window for p in self.pulses]
        for i in range(1, len(wins)):
            if wins[i][0] < wins[i - 1][0]:
                raise ConfigurationError("pulses must be ordered in time", f"pulses[{i}]")
            if wins[i][0] < wins[i - 1][1] and not self.pulses[i].composite:
                raise ConfigurationError(
                    "pulse windows overlap; mark the pulse composite if intended", f"pulses[{i}]"
                )
        if self.pulses:
            k = len(self.pulses)
            if not -k <= self.measurement.phase_pulse < k:
                raise ConfigurationError("phase_pulse out of range", "measurement.phase_pulse")

    @property
    def start_time(self) -> float:
        if self.t_start is not None:
            return self.t_start
        if not self.pulses:
            return 0.0
        return min(0.0, self.pulses[0].window[0])

    @property
    def end_time(self) -> float:
        last = self.pulses[-1].window[1] if self.pulses else self.start_time
        return max(last, self.start_time) + self.tof

    def with_phase(self, phi0: float) -> "SequenceSpec":
        return dataclasses.replace(self, phi0=phi0)

    def pulse_list(self, phi0: float | None = None) -> list[PulseSpec]:
        phi = self.phi0 if phi0 is None else phi0
        pulses = list(self.pulses)
        if pulses and phi:
            i = self.measurement.phase_pulse % len(pulses)
            pulses[i] = pulses[i].with_extra_phase(phi)
        return pulses

    def terms(self, phi0: float | None = None) -> list:
        out = [t for p in self.pulse_list(phi0) for t in p.terms]
        return out + list(self.static_terms)


# ---------------------------------------------------------------------------
# execution


@dataclass
class RunResult:
    final: WaveFunction
    populations: PortPopulations
    ports: list
    phi0: float = 0.0
    parasitic: float | None = None
    recorder: Recorder | None = None
    wall_time: float = 0.0
    n_steps: int = 0
    norm_drift: float = 0.0

    @property
    def normalized(self):
        return self.populations.normalized

    @property
    def raw(self):
        return self.populations.raw


@lru_cache(maxsize=8)
def _cached_ground_state(grid, species, omega_x, g1d, n_atoms, tol):
    return ground_state_gpe(grid, species, omega_x, g1d, n_atoms, tol)


def initial_wavefunction(spec: SequenceSpec) -> WaveFunction:
    ini = spec.initial
    if ini.kind == "gaussian":
        psi = gaussian_packet(spec.grid, ini.sigma_p, ini.x0, ini.p0)
    else:
        mf = spec.mean_field
        gs = _cached_ground_state(spec.grid, spec.species, ini.omega_x, mf.g1d, mf.n_atoms, ini.tol)
        psi = gs.copy()
        if ini.p0:
            psi.amplitudes = psi.amplitudes * np.exp(1j * ini.p0 / HBAR * np.asarray(spec.grid.x))
    psi.t = spec.start_time
    return psi


def _propagator(spec: SequenceSpec, phi0=None) -> Propagator:
    return Propagator(spec.grid, spec.species.mass, spec.terms(phi0), spec.scheme, spec.mean_field)


def predicted_port_centers(spec: SequenceSpec) -> list[float]:
    m = spec.species.mass
    meas = spec.measurement
    dt = spec.end_time - meas.t_ref
    return [meas.x_ref + p / m * dt for p in meas.ports]


def _packet_width(spec: SequenceSpec, t: float) -> float:
    ini = spec.initial
    m = spec.species.mass
    if ini.kind == "gaussian":
        sx0 = HBAR / (2 * ini.sigma_p)
        sp = ini.sigma_p
    else:
        from .state import thomas_fermi_radius

        mf = spec.mean_field
        sx0 = thomas_fermi_radius(mf.g1d, mf.n_atoms, ini.omega_x, m) / math.sqrt(5)
        sp = HBAR / (2 * sx0)
    return math.hypot(sx0, sp * t / m)


def resolve_ports(spec: SequenceSpec, density: np.ndarray) -> list[Port]:
    """Position windows for ``spec`` detected on ``density``."""
    meas = spec.measurement
    centers = predicted_port_centers(spec)
    if len(centers) > 1:
        gap = float(np.min(np.diff(sorted(centers))))
        width = _packet_width(spec, spec.end_time - spec.start_time)
        if gap < meas.min_separation_sigmas * width:
            raise MeasurementError(
                f"ports separated by {gap:.3g} m but packets are {width:.3g} m wide; "
                "increase the time of flight"
            )
    return detect_ports(density, np.asarray(spec.grid.x), centers, meas.half_width)


def measure(spec: SequenceSpec, psi: WaveFunction, ports=None):
    """Port populations of ``psi``; returns (populations, ports, parasitic)."""
    meas = spec.measurement
    sp = spec.species
    if meas.mode == "momentum":
        width = meas.bin_width or sp.hbar_k
        pops = momentum_port_populations(psi, meas.ports, width, meas.floor)
        return pops, list(meas.ports), 1.0 - pops.total
    if ports is None:
        ports = resolve_ports(spec, psi.density())
    pops = port_populations(psi, ports, meas.floor)
    parasitic = None
    if meas.parasitic_radius:
        narrow = [Port(p.center, meas.parasitic_radius) for p in ports]
        parasitic = 1.0 - port_populations(psi, narrow, 0.0).total
    return pops, ports, parasitic


def run_sequence(
    spec: SequenceSpec, phi0: float | None = None, recorder: Recorder | None = None, ports=None
) -> RunResult:
    """Propagate the initial state through the whole schedule and read out."""
    t0 = time.perf_counter()
    psi = initial_wavefunction(spec)
    prop = _propagator(spec, phi0)
    final = prop.run(psi, spec.end_time, recorder)
    pops, used, parasitic = measure(spec, final, ports)
    return RunResult(
        final,
        pops,
        used,
        spec.phi0 if phi0 is None else phi0,
        parasitic,
        recorder,
        time.perf_counter() - t0,
        prop.stats.n_steps,
        abs(final.norm() - psi.norm()),
    )


def reverse_fidelity(spec: SequenceSpec, result: RunResult | None = None) -> float:
    """|<ψ₀|U⁻¹Uψ₀>| from propagating the final state back to the start."""
    result = result or run_sequence(spec)
    back = _propagator(spec, result.phi0).run(result.final, spec.start_time)
    return initial_wavefunction(spec).fidelity(back)


def _check_mz(spec: SequenceSpec, n_pulses: int, n_ports: int, what: str):
    if len(spec.pulses) < n_pulses:
        raise ConfigurationError(f"{what} needs {n_pulses} pulses", "pulses")
    if len(spec.measurement.ports) != n_ports:
        raise ConfigurationError(f"{what} needs {n_ports} ports", "measurement.ports")


def run_mach_zehnder(spec: SequenceSpec, **kw) -> RunResult:
    _check_mz(spec, 3, 2, "Mach-Zehnder")
    return run_sequence(spec, **kw)


def run_double_bragg(spec: SequenceSpec, **kw) -> RunResult:
    _check_mz(spec, 3, 3, "double-Bragg interferometer")
    return run_sequence(spec, **kw)


def raman_nath_validity(omega: float, tau: float, species: Species) -> float:
    """τ·√(2Ω ω_r); the Raman-Nath picture needs this ≪ 1."""
    return tau * math.sqrt(2 * omega * species.omega_r)


def run_raman_nath(spec: SequenceSpec, **kw) -> RunResult:
    pulse = spec.pulses[0]
    env = pulse.terms[0].envelope
    # two terms at rest add up; the relevant Ω is the summed depth
    omega = sum(t.envelope.peak_rabi for t in pulse.terms)
    ratio = raman_nath_validity(omega, env.duration, spec.species)
    if ratio > 1:
        warnings.warn(f"pulse too long for the Raman-Nath regime (τ√(2Ωω_r) = {ratio:.2f})", stacklevel=2)
    return run_sequence(spec, **kw)


def landau_zener_exponent(term: BlochTerm) -> float:
    """Exponent of the first-gap Landau-Zener loss exp(−πΩ²/(4k·a))."""
    a = abs(term.acceleration)
    if a == 0:
        return math.inf
    return math.pi * term.peak_rabi**2 / (4 * term.k_lattice * a)


class PopulationTrace(Recorder):
    """Records normalized momentum-bin populations during a run."""

    def __init__(self, momenta, width, stride=1):
        super().__init__(stride)
        self.momenta = tuple(momenta)
        self.width = width
        self.times: list[float] = []
        self.values: list[tuple] = []

    def record(self, amplitudes, t, grid):
        psi = WaveFunction(grid, amplitudes, t)
        p = np.asarray(grid.p_centered)
        dens = momentum_spectrum(psi) * grid.p_step
        h = 0.5 * self.width
        self.times.append(float(t))
        self.values.append(tuple(float(dens[(p >= c - h) & (p < c + h)].sum()) for c in self.momenta))


def run_bragg_bloch(spec: SequenceSpec, trace_stride: int = 10, **kw):
    """Run a Bragg + Bloch schedule; returns (RunResult, PopulationTrace)."""
    for p in spec.pulses:
        for t in p.terms:
            if isinstance(t, BlochTerm) and landau_zener_exponent(t) < 5:
                warnings.warn("Bloch chirp is not adiabatic for the first band gap", stacklevel=2)
    sp = spec.species
    trace = PopulationTrace(spec.measurement.ports, spec.measurement.bin_width or sp.hbar_k, trace_stride)
    res = run_sequence(spec, recorder=trace, **kw)
    return res, trace


# ---------------------------------------------------------------------------
# fringe scans


@dataclass
class FringeScan:
    phis: np.ndarray
    p_plus: np.ndarray
    populations: list
    fit: FringeFit | None
    ports: list
    wall_time: float = 0.0

    @property
    def p_minus(self) -> np.ndarray:
        return 1.0 - self.p_plus


def split_time(spec: SequenceSpec) -> float:
    """Latest time before the phase-carrying pulse can act."""
    i = spec.measurement.phase_pulse % len(spec.pulses)
    start = spec.pulses[i].window[0] - 2 * spec.scheme.dt_interaction
    return max(spec.start_time, start)


def scan_states(spec: SequenceSpec, phis, threads: int = 1) -> list[WaveFunction]:
    """Final states for each laser phase, sharing the common prefix."""
    psi = initial_wavefunction(spec)
    t_split = split_time(spec)
    if t_split > psi.t:
        psi = _propagator(spec, 0.0).run(psi, t_split)

    def branch(phi):
        return _propagator(spec, float(phi)).run(psi, spec.end_time)

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        return list(pool.map(branch, phis))


def fringe_scan(spec: SequenceSpec, phis=None, threads: int = 1, fit: bool = True) -> FringeScan:
    """Scan the laser phase of the designated pulse and fit the fringe.

    Position windows are detected once on the scan-averaged density so that
    every point is integrated over identical intervals.
    """
    t0 = time.perf_counter()
    phis = default_phase_scan() if phis is None else np.asarray(phis, float)
    finals = scan_states(spec, phis, threads)
    ports = None
    if spec.measurement.mode == "position":
        mean_density = np.mean([f.density() for f in finals], axis=0)
        ports = resolve_ports(spec, mean_density)
    pops = [measure(spec, f, ports)[0] for f in finals]
    plus = np.array([p.normalized[spec.measurement.plus_port] for p in pops])
    result = None
    if fit:
        result = fit_fringe(phis, plus, spec.measurement.n_order)
    return FringeScan(phis, plus, pops, result, ports or list(spec.measurement.ports), time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# builders


def _env(kind, omega, center, tau):
    return PulseEnvelope(kind, omega, center, tau)


def auto_grid(
    species: Species, x_lo: float, x_hi: float, margin: float, per_lambda: int = 16, sigma_p: float = 0.0
) -> Grid:
    """Power-of-two grid with dx = λ/per_lambda covering [x_lo − margin, x_hi + margin].

    With ``sigma_p`` (SI) the length is also large enough for the packet to
    span ten momentum samples.
    """
    dx = species.lambda_light / per_lambda
    lo, hi = x_lo - margin, x_hi + margin
    length = hi - lo
    if sigma_p > 0:
        length = max(length, 10.5 * 2 * math.pi * HBAR / sigma_p)
    return grid_for_spacing(dx, length, 0.5 * (lo + hi))


def _per_lambda(max_hk: float) -> int:
    # keep Δp/ħk = per_lambda >= 2·(max momentum + 4)
    per = 16
    while per < 2 * (max_hk + 4):
        per *= 2
    return per


def mach_zehnder(
    species: Species,
    order: int,
    T: float,
    tof: float,
    sigma_p: float,
    omega: float,
    tau_bs: float,
    omega_m: float | None = None,
    tau_m: float | None = None,
    *,
    grid: Grid | None = None,
    scheme: StepScheme | None = None,
    kind: str = "gaussian",
    mode: str = "position",
    phi0: float = 0.0,
    x_origin: float = 0.0,
    gamma: float = 0.0,
    mirror_delta_k: float = 0.0,
    initial: InitialState | None = None,
    mean_field: MeanField | None = None,
    splitter_omega: float | None = None,
    n_scan_order: int | None = None,
) -> SequenceSpec:
    """π/2 – π – π/2 Bragg interferometer of order n with pulses at 0, T, 2T.

    Mirror defaults: same peak Rabi frequency at twice the splitter length.
    ``splitter_omega`` overrides the first pulse only (imbalance studies).
    ``gamma`` adds a gravity-gradient term in the freely falling frame,
    referenced (with the lattices) to ``x_origin``.
    """
    omega_m = omega if omega_m is None else omega_m
    tau_m = 2 * tau_bs if tau_m is None else tau_m
    k, v = species.k, order * species.v_r
    hk = species.hbar_k
    s1 = omega if splitter_omega is None else splitter_omega
    mk = lambda env: LatticeTerm(env, k, v, x_origin=x_origin)  # noqa: E731
    pulses = (
        PulseSpec((mk(_env(kind, s1, 0.0, tau_bs)),), "splitter", order),
        PulseSpec((mk(_env(kind, omega_m, T, tau_m)),), "mirror", order).with_k_correction(mirror_delta_k),
        PulseSpec((mk(_env(kind, omega, 2 * T, tau_bs)),), "recombiner", order),
    )
    initial = initial or InitialState("gaussian", sigma_p * hk)
    p0 = initial.p0
    x_close = 2 * order * species.v_r * T + p0 / species.mass * 2 * T
    t_end = 2 * T + 4 * tau_bs + tof
    if grid is None:
        x_far = 2 * order * species.v_r * t_end + p0 / species.mass * t_end
        sx = HBAR / (2 * sigma_p * hk)
        spread = sigma_p * hk / species.mass * t_end
        margin = 12 * math.hypot(sx, spread) + 20e-6
        grid = auto_grid(species, min(0.0, x_far), max(0.0, x_far), margin, _per_lambda(2 * order + 2), sigma_p * hk)
    ports = (p0, p0 + 2 * order * hk)
    meas = Measurement(
        ports,
        mode,
        x_ref=x_close,
        t_ref=2 * T,
        n_order=order if n_scan_order is None else n_scan_order,
        parasitic_radius=order * species.v_r * T if mode == "position" else None,
    )
    static = (GravityTerm(species.mass, 0.0, gamma, x_origin),) if gamma else ()
    return SequenceSpec(
        species,
        grid,
        initial,
        pulses,
        tof,
        meas,
        scheme or StepScheme(),
        mean_field,
        static,
        T,
        phi0,
        "freely_falling" if gamma else "lab",
        "mach_zehnder",
    )


def raman_nath(
    species: Species,
    omega: float,
    tau: float,
    sigma_p: float,
    tof: float,
    *,
    max_order: int = 3,
    grid: Grid | None = None,
    scheme: StepScheme | None = None,
) -> SequenceSpec:
    """Rectangular standing-wave pulse (lattice at rest) and a free drift.

    Populations are read out in ħk-wide momentum bins at 2nħk, |n| ≤ max_order.
    """
    hk = species.hbar_k
    env = _env("rectangular", omega, 0.5 * tau, tau)
    pulse = PulseSpec((LatticeTerm(env, species.k, 0.0),), "raman_nath", 1)
    if grid is None:
        t_end = tau + tof
        x_far = 2 * (max_order + 2) * species.v_r * t_end
        margin = 12 * math.hypot(HBAR / (2 * sigma_p * hk), sigma_p * hk / species.mass * t_end) + 20e-6
        grid = auto_grid(species, -x_far, x_far, margin, _per_lambda(2 * max_order + 4), sigma_p * hk)
    ports = tuple(2 * n * hk for n in range(-max_order, max_order + 1))
    meas = Measurement(ports, "momentum", plus_port=max_order, floor=0.0)
    return SequenceSpec(
        species, grid, InitialState("gaussian", sigma_p * hk), (pulse,), tof, meas,
        scheme or StepScheme("strang", 1e-8, 1e-5), kind="raman_nath", t_start=0.0,
    )


def double_bragg(
    species: Species,
    order: int,
    T: float,
    tof: float,
    sigma_p: float,
    omega_bs: float,
    tau_bs: float,
    omega_m: float,
    tau_m: float,
    omega_rec: float | None = None,
    *,
    grid: Grid | None = None,
    scheme: StepScheme | None = None,
    mode: str = "position",
    include_mirror: bool = True,
    lock_phases: bool = True,
) -> SequenceSpec:
    """Symmetric double-Bragg interferometer.

    Splitter and recombiner are lattice pairs at ±n·v_r; the mirror is a
    pair at rest (a standing wave) of per-lattice Rabi frequency ``omega_m``
    driving ±2nħk → ∓2nħk.

    Counter-moving lattices drift apart in phase by 4k·n·v_r·t. With
    ``lock_phases`` each beam's phase is reset to zero at its pulse centre;
    otherwise the arms close with a relative phase 8k·n·v_r·T (mod 2π).
    """
    k, v, hk = species.k, order * species.v_r, species.hbar_k
    omega_rec = omega_bs if omega_rec is None else omega_rec

    def pair(omega, center, tau, vel, label):
        env = _env("gaussian", omega, center, tau)
        terms = []
        for d in (1, -1):
            # zero lattice phase at the pulse centre for both beams
            phase = math.remainder(2 * k * d * vel * center, 2 * math.pi) if lock_phases else 0.0
            terms.append(LatticeTerm(env, k, vel, phase=phase, direction=d))
        return PulseSpec(tuple(terms), label, order)

    t_rec = 2 * T if include_mirror else 8 * tau_bs
    pulses = [pair(omega_bs, 0.0, tau_bs, v, "splitter")]
    if include_mirror:
        pulses.append(pair(omega_m, T, tau_m, 0.0, "mirror"))
    pulses.append(pair(omega_rec, t_rec, tau_bs, v, "recombiner"))
    if grid is None:
        t_end = t_rec + 4 * tau_bs + tof
        x_far = 2 * order * species.v_r * t_end
        margin = 12 * math.hypot(HBAR / (2 * sigma_p * hk), sigma_p * hk / species.mass * t_end) + 20e-6
        grid = auto_grid(species, -x_far, x_far, margin, _per_lambda(2 * order + 2), sigma_p * hk)
    ports = (-2 * order * hk, 0.0, 2 * order * hk)
    meas = Measurement(ports, mode, x_ref=0.0, t_ref=t_rec, plus_port=1, n_order=2 * order)
    return SequenceSpec(
        species, grid, InitialState("gaussian", sigma_p * hk), tuple(pulses), tof, meas,
        scheme or StepScheme(), T=T, kind="double_bragg",
    )


def bloch_term(
    species: Species,
    omega: float,
    v_start: float,
    n_bloch: int,
    t_start: float,
    tau_al: float,
    tau_bo: float,
    tau_aul: float,
    x_origin: float = 0.0,
) -> BlochTerm:
    return BlochTerm(
        omega, species.k, v_start, n_bloch, tau_al, tau_bo, tau_aul, t_start, species.v_r,
        x_start=v_start * t_start, x_origin=x_origin,
    )


def bragg_bloch_transfer(
    species: Species,
    omega_bragg: float,
    tau_bragg: float,
    omega_bloch: float,
    tau_al: float,
    tau_bo: float,
    tau_aul: float,
    *,
    t_bragg: float = 0.5e-3,
    t_bloch: float = 1.0e-3,
    n_bloch: int = 1,
    grid: Grid,
    scheme: StepScheme | None = None,
    initial: InitialState,
    mean_field: MeanField | None = None,
    settle: float = 0.1e-3,
) -> SequenceSpec:
    """Bragg π pulse 0 → 2ħk followed by one Bloch sequence 2ħk → (2 + 2n_bloch)ħk."""
    k, v_r, hk = species.k, species.v_r, species.hbar_k
    bragg = PulseSpec((LatticeTerm(_env("gaussian", omega_bragg, t_bragg, tau_bragg), k, v_r),), "bragg", 1)
    bloch = PulseSpec(
        (bloch_term(species, omega_bloch, 2 * v_r, n_bloch, t_bloch, tau_al, tau_bo, tau_aul),), "bloch", 1
    )
    top = 2 + 2 * n_bloch
    if n_bloch == 0:
        meas = Measurement((0.0, 2 * hk), "momentum", plus_port=1, floor=0.0)
    else:
        meas = Measurement((0.0, 2 * hk, top * hk), "momentum", plus_port=2, floor=0.0)
    return SequenceSpec(
        species, grid, initial, (bragg, bloch), settle, meas, scheme or StepScheme(),
        mean_field, kind="bragg_bloch", t_start=0.0,
    )


def bragg_bloch_mz(
    species: Species,
    T: float,
    tof: float,
    sigma_p: float,
    omega_bs: float,
    tau_bs: float,
    omega_m: float,
    tau_m: float,
    omega_bloch: float,
    tau_al: float,
    tau_bo: float,
    tau_aul: float,
    t_bloch: float,
    *,
    grid: Grid | None = None,
    scheme: StepScheme | None = None,
    x_origin: float = 0.0,
    gamma: float = 0.0,
    mirror_delta_k: float = 0.0,
    mode: str = "momentum",
) -> SequenceSpec:
    """(2+2)ħk interferometer: 2ħk Bragg splitter, Bloch 2 → 4ħk on the
    deflected arm, 4ħk Bragg mirror at T, time-mirrored Bloch 4 → 2ħk on the
    other arm, 2ħk Bragg recombiner at 2T.

    ``t_bloch`` is the start of the first Bloch sequence; the second ends
    ``t_bloch`` before 2T.
    """
    k, v_r, hk = species.k, species.v_r, species.hbar_k
    dur = tau_al + tau_bo + tau_aul
    lat = lambda env, n: LatticeTerm(env, k, n * v_r, x_origin=x_origin)  # noqa: E731
    pulses = (
        PulseSpec((lat(_env("gaussian", omega_bs, 0.0, tau_bs), 1),), "splitter", 1),
        PulseSpec(
            (BlochTerm(omega_bloch, k, 2 * v_r, 1, tau_al, tau_bo, tau_aul, t_bloch, v_r, x_origin=x_origin),),
            "bloch_up", 1,
        ),
        PulseSpec((lat(_env("gaussian", omega_m, T, tau_m), 2),), "mirror", 2).with_k_correction(mirror_delta_k),
        PulseSpec(
            (BlochTerm(omega_bloch, k, 4 * v_r, -1, tau_al, tau_bo, tau_aul, 2 * T - t_bloch - dur, v_r,
                       x_origin=x_origin),),
            "bloch_down", 1,
        ),
        PulseSpec((lat(_env("gaussian", omega_bs, 2 * T, tau_bs), 1),), "recombiner", 1),
    )
    t_end = 2 * T + 4 * tau_bs + tof
    x_close = 2 * v_r * (t_bloch + tau_al) + 3 * v_r * tau_bo + 4 * v_r * (T - t_bloch - tau_al - tau_bo)
    if grid is None:
        x_far = 4 * v_r * t_end
        margin = 12 * math.hypot(HBAR / (2 * sigma_p * hk), sigma_p * hk / species.mass * t_end) + 20e-6
        grid = auto_grid(species, 0.0, x_far, margin, _per_lambda(8), sigma_p * hk)
    # the Bloch lattice also scatters the arm 2ħk away from it; those atoms
    # leave the ports, so the usual 50 % low-signal floor would always trip
    meas = Measurement((0.0, 2 * hk), mode, x_ref=x_close, t_ref=2 * T, n_order=1, floor=0.25)
    static = (GravityTerm(species.mass, 0.0, gamma, x_origin),) if gamma else ()
    return SequenceSpec(
        species, grid, InitialState("gaussian", sigma_p * hk), pulses, tof, meas,
        scheme or StepScheme(), None, static, T, 0.0,
        "freely_falling" if gamma else "lab", "bragg_bloch_mz",
    )


# ---------------------------------------------------------------------------
# gradiometer


@dataclass
class GradiometerResult:
    delta_k: np.ndarray
    phi_upper: np.ndarray
    phi_lower: np.ndarray
    fits_upper: list
    fits_lower: list
    analytic_phase: float  # k_eff·Γ·h·T² at Δk_eff = 0
    delta_k_bragg: float  # Γ·k_eff·T²/2

    @property
    def phase(self) -> np.ndarray:
        return self.phi_upper - self.phi_lower

    def zero_crossing(self) -> float:
        """Δk_eff where a straight-line fit of Φ(Δk_eff) vanishes."""
        slope, icpt = np.polyfit(self.delta_k, self.phase, 1)
        return float(-icpt / slope)

    def phase_at(self, dk: float) -> float:
        """Φ interpolated linearly from the scan."""
        slope, icpt = np.polyfit(self.delta_k, self.phase, 1)
        return float(slope * dk + icpt)


def run_gradiometer(
    make_spec,
    baseline: float,
    delta_k_scan,
    *,
    k_eff: float,
    gamma: float,
    T: float,
    phis=None,
    threads: int = 1,
) -> GradiometerResult:
    """Two interferometers at x_origin = baseline (upper) and 0 (lower).

    ``make_spec(x_origin, delta_k_eff)`` returns the SequenceSpec of one
    interferometer with the mirror k shifted by ``delta_k_eff``.
    """
    phis = default_phase_scan(8) if phis is None else phis
    out = {"upper": ([], []), "lower": ([], [])}
    for dk in delta_k_scan:
        for label, origin in (("upper", baseline), ("lower", 0.0)):
            spec = make_spec(origin, dk)
            try:
                fit = fringe_scan(spec, phis, threads).fit
            except FitError as exc:
                raise FitError(f"{label} interferometer at Δk_eff={dk:g}: {exc}", exc.trace) from exc
            out[label][0].append(fit.delta_phi)
            out[label][1].append(fit)
    up = np.unwrap(np.array(out["upper"][0]))
    lo = np.unwrap(np.array(out["lower"][0]))
    return GradiometerResult(
        np.asarray(delta_k_scan, float), up, lo, out["upper"][1], out["lower"][1],
        k_eff * gamma * baseline * T**2, 0.5 * gamma * k_eff * T**2,
    )


# ---------------------------------------------------------------------------
# trapped interferometer with mean field


def splitter_imbalance(spec: SequenceSpec, omega: float) -> float:
    """(N_deflected − N_undeflected)/N after the first pulse alone at peak Ω."""
    first = spec.pulses[0]
    terms = tuple(dataclasses.replace(t, envelope=dataclasses.replace(t.envelope, peak_rabi=omega)) for t in first.terms)
    psi = initial_wavefunction(spec)
    t1 = first.window[1]
    prop = Propagator(spec.grid, spec.species.mass, terms, spec.scheme, spec.mean_field)
    out = prop.run(psi, t1)
    hk = spec.species.hbar_k
    pops = momentum_port_populations(out, spec.measurement.ports, hk, floor=0.0).normalized
    return pops[1] - pops[0]


def with_splitter_omega(spec: SequenceSpec, omega: float) -> SequenceSpec:
    first = spec.pulses[0]
    terms = tuple(dataclasses.replace(t, envelope=dataclasses.replace(t.envelope, peak_rabi=omega)) for t in first.terms)
    return dataclasses.replace(spec, pulses=(dataclasses.replace(first, terms=terms),) + tuple(spec.pulses[1:]))


@dataclass
class TrappedResult:
    delta_n: float
    splitter_omega: float
    scan: FringeScan

    @property
    def delta_phi(self) -> float:
        return self.scan.fit.delta_phi

    @property
    def contrast(self) -> float:
        return self.scan.fit.contrast


def run_trapped_mz(
    spec: SequenceSpec, delta_n: float, bracket=None, phis=None, threads: int = 1, tol: float = 1e-3
) -> TrappedResult:
    """Mach-Zehnder with GPE dynamics and a splitter detuned to imbalance δN/N."""
    if spec.mean_field is None or spec.mean_field.coupling <= 0:
        raise ConfigurationError("trapped interferometer needs a positive mean field", "mean_field")
    om0 = spec.pulses[0].terms[0].envelope.peak_rabi
    lo, hi = bracket or (0.5 * om0, 1.5 * om0)
    f = lambda w: splitter_imbalance(spec, w) - delta_n  # noqa: E731
    f_lo, f_hi = f(lo), f(hi)
    if f_lo * f_hi > 0:
        raise CalibrationError(
            f"imbalance {delta_n:g} not reachable in [{lo:g}, {hi:g}] rad/s",
            ((lo, f_lo + delta_n), (hi, f_hi + delta_n)),
        )
    omega = brentq(f, lo, hi, xtol=1e-9 * om0, rtol=1e-12)
    achieved = f(omega) + delta_n
    if abs(achieved - delta_n) > tol:
        raise CalibrationError(f"imbalance search stalled at {achieved:g}")
    tuned = with_splitter_omega(spec, omega)
    scan = fringe_scan(tuned, phis if phis is not None else default_phase_scan(12), threads)
    return TrappedResult(achieved, omega, scan)


def arm_chemical_potentials_numeric(
    psi: WaveFunction, mean_field: MeanField, arm_momenta, width: float
) -> list[float]:
    """Density-weighted mean-field energy g·N·<ρ> of each momentum-filtered arm."""
    g = psi.grid
    a = psi.momentum_amplitudes()
    p = np.asarray(g.p)
    rho = psi.density()
    out = []
    from scipy import fft as sfft

    for c in arm_momenta:
        mask = np.abs(p - c) < 0.5 * width
        arm = sfft.ifft(np.where(mask, a, 0)) / math.sqrt(g.dx / g.n_points)
        d = np.abs(arm) ** 2
        out.append(float(mean_field.coupling * (rho * d).sum() / d.sum()))
    return out


# ---------------------------------------------------------------------------
# in-sequence tuning


def with_pulse_rabi(spec: SequenceSpec, index: int, omega: float) -> SequenceSpec:
    """Copy of ``spec`` with every lattice of pulse ``index`` at peak Ω."""
    pulses = list(spec.pulses)
    p = pulses[index]
    terms = tuple(
        dataclasses.replace(t, envelope=dataclasses.replace(t.envelope, peak_rabi=omega))
        if isinstance(t, LatticeTerm) else dataclasses.replace(t, peak_rabi=omega)
        for t in p.terms
    )
    pulses[index] = dataclasses.replace(p, terms=terms)
    return dataclasses.replace(spec, pulses=tuple(pulses))


def tune_pulse_rabi(
    spec: SequenceSpec, index: int, port: int, target: float, bracket, xtol: float = 1e-4
) -> tuple[SequenceSpec, RunResult]:
    """Adjust the peak Ω of pulse ``index`` so the normalized population of
    ``port`` at the end of the full sequence equals ``target``.

    ``bracket`` is (lo, hi) in rad/s and must straddle the target. The
    schedule up to the tuned pulse is propagated once and reused.
    """
    lo, hi = bracket
    before = spec.pulses[index].window[0] - 2 * spec.scheme.dt_interaction
    psi = initial_wavefunction(spec)
    if before > psi.t:
        psi = _propagator(spec).run(psi, before)
    cache = {}

    def outcome(omega):
        trial = with_pulse_rabi(spec, index, omega)
        final = _propagator(trial).run(psi, trial.end_time)
        pops, ports, parasitic = measure(trial, final)
        cache[omega] = (trial, RunResult(final, pops, ports, trial.phi0, parasitic))
        return pops.normalized[port] - target

    f_lo, f_hi = outcome(lo), outcome(hi)
    if f_lo * f_hi > 0:
        raise CalibrationError(
            f"port {port} does not reach {target:g} for Ω in [{lo:g}, {hi:g}]",
            ((lo, f_lo + target), (hi, f_hi + target)),
        )
    omega = brentq(outcome, lo, hi, xtol=xtol * spec.species.omega_r)
    if omega not in cache:
        outcome(omega)
    return cache[omega]
