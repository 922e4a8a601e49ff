"""Peak-Rabi-frequency calibration of single pulses by direct simulation."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_bracket, check_positive
from .analysis import momentum_port_populations
from .errors import CalibrationError, ConfigurationError
from .grid import Grid, Species, rubidium87
from .potentials import LatticeTerm, PulseEnvelope
from .propagator import Propagator, StepScheme
from .state import gaussian_packet

# π/2 peak Rabi frequencies (units of ω_r) for 25 µs Gaussians, used only to
# place default brackets
_HALF_GUESS = {1: 1.06, 2: 3.7, 3: 8.4}

LATTICE_MODES = ("single", "double", "standing")


@dataclass(frozen=True)
class PulseProbe:
    """Single-pulse experiment: packet at ``p0`` hit by one lattice pulse.

    ``mode``: ``single`` is one lattice at +n·v_r; ``double`` is the pair at
    ±n·v_r; ``standing`` is the pair at rest. ``ports`` and ``target`` are
    momenta in units of ħk; the transfer is the normalized population of
    the target ports.
    """

    species: Species
    order: int
    tau: float
    kind: str = "gaussian"
    sigma_p: float = 0.01  # ħk
    p0: float = 0.0  # ħk
    mode: str = "single"
    ports: tuple = (0.0, 2.0)
    target: tuple = (2.0,)
    grid: Grid | None = None
    scheme: StepScheme = field(default_factory=lambda: StepScheme("strang", 1e-6, 1e-5))

    def __post_init__(self):
        if self.order < 1:
            raise ConfigurationError("order must be >= 1", "order")
        check_positive(self.tau, "tau")
        if self.mode not in LATTICE_MODES:
            raise ConfigurationError(f"unknown lattice mode {self.mode!r}", "mode")
        if not set(self.target) <= set(self.ports):
            raise ConfigurationError("target ports must be among the ports", "target")

    def resolved_grid(self) -> Grid:
        if self.grid is not None:
            return self.grid
        reach = max(abs(p) for p in self.ports) + 2 * self.order + 4
        per_lambda = 16 if reach <= 8 else 32
        # momentum step ħk/1024 or finer so that σ_p spans >= 10 steps
        n_lambda = 1024
        while self.sigma_p * n_lambda < 10:
            n_lambda *= 2
        return Grid.from_spacing(self.species.lambda_light / per_lambda, n_lambda * per_lambda)

    def envelope(self, omega: float) -> PulseEnvelope:
        return PulseEnvelope(self.kind, omega, 0.0, self.tau)

    def terms(self, omega: float):
        sp = self.species
        env = self.envelope(omega)
        v = self.order * sp.v_r
        if self.mode == "single":
            return [LatticeTerm(env, sp.k, v)]
        if self.mode == "double":
            return [LatticeTerm(env, sp.k, v, direction=1), LatticeTerm(env, sp.k, v, direction=-1)]
        return [LatticeTerm(env, sp.k, 0.0), LatticeTerm(env, sp.k, 0.0)]

    def transfer(self, omega: float) -> float:
        sp = self.species
        grid = self.resolved_grid()
        psi = gaussian_packet(grid, self.sigma_p * sp.hbar_k, 0.0, self.p0 * sp.hbar_k)
        t0, t1 = self.envelope(omega).support()
        psi.t = t0
        out = Propagator(grid, sp.mass, self.terms(omega), self.scheme).run(psi, t1)
        pops = momentum_port_populations(
            out, [p * sp.hbar_k for p in self.ports], sp.hbar_k, floor=0.0
        )
        return float(sum(n for p, n in zip(self.ports, pops.normalized) if p in self.target))


@dataclass(frozen=True)
class CalibrationResult:
    omega_star: float  # rad/s
    transfer: float
    residual: float  # |P − ½| for half, 1 − P for full
    order: int
    tau: float
    kind: str
    target: str
    curve: tuple = ()
    n_evaluations: int = 0

    def as_dict(self, omega_r: float | None = None) -> dict:
        d = {
            "order": self.order,
            "tau": self.tau,
            "envelope": self.kind,
            "target": self.target,
            "omega_star": self.omega_star,
            "transfer": self.transfer,
            "residual": self.residual,
            "n_evaluations": self.n_evaluations,
        }
        if omega_r:
            d["omega_star_wr"] = self.omega_star / omega_r
        return d


def default_bracket(order: int, tau: float, target: str, omega_r: float) -> tuple[float, float]:
    base = _HALF_GUESS.get(order)
    if base is None:
        raise ConfigurationError(f"no default bracket for order {order}; pass one", "bracket")
    est = base * (25e-6 / tau) ** (1.0 / order) * omega_r
    if target == "full":
        est *= 2.0 ** (1.0 / order)
        return 0.6 * est, 1.5 * est
    return 0.5 * est, 1.6 * est


def _bisect(f, lo, hi, f_lo, tol, max_iter=60):
    n = 0
    mid, f_mid = lo, f_lo
    for n in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if abs(f_mid) <= tol:
            break
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return mid, f_mid, n


def _golden_max(f, lo, hi, xtol):
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    while b - a > xtol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
        n += 1
    return (c, fc, n) if fc > fd else (d, fd, n)


def optimize_rabi(
    order: int,
    tau: float,
    kind: str = "gaussian",
    target: str = "half",
    sigma_p: float = 0.01,
    bracket=None,
    species: Species | None = None,
    probe: PulseProbe | None = None,
    n_samples: int = 6,
    threads: int = 1,
    tol: float = 1e-4,
    omega_tol: float = 1e-3,
) -> CalibrationResult:
    """Peak Rabi frequency giving half or full transfer.

    ``sigma_p`` is in units of ħk; ``bracket`` and the result in rad/s.
    ``omega_tol`` (units of ω_r) bounds the golden-section interval.
    """
    if target not in ("half", "full"):
        raise ConfigurationError("target must be 'half' or 'full'", "target")
    species = species or (probe.species if probe else rubidium87())
    if probe is None:
        probe = PulseProbe(species, order, tau, kind, sigma_p, ports=(0.0, 2.0 * order), target=(2.0 * order,))
    wr = species.omega_r
    lo, hi = check_bracket(bracket or default_bracket(order, tau, target, wr))
    grid_omegas = np.linspace(lo, hi, max(3, n_samples))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        values = list(pool.map(probe.transfer, grid_omegas))
    curve = tuple(zip(grid_omegas.tolist(), values))
    n_eval = len(values)

    if target == "half":
        g = [v - 0.5 for v in values]
        for i in range(len(g) - 1):
            if g[i] == 0:
                return CalibrationResult(grid_omegas[i], values[i], 0.0, order, tau, kind, target, curve, n_eval)
            if (g[i] > 0) != (g[i + 1] > 0):
                om, gm, n = _bisect(lambda w: probe.transfer(w) - 0.5, grid_omegas[i], grid_omegas[i + 1], g[i], tol)
                return CalibrationResult(float(om), gm + 0.5, abs(gm), order, tau, kind, target, curve, n_eval + n)
        raise CalibrationError("transfer does not cross 1/2 inside the bracket", curve)

    i = int(np.argmax(values))
    if i == 0 or i == len(values) - 1:
        raise CalibrationError("transfer maximum is not inside the bracket", curve)
    om, p, n = _golden_max(probe.transfer, grid_omegas[i - 1], grid_omegas[i + 1], omega_tol * wr)
    return CalibrationResult(float(om), p, 1.0 - p, order, tau, kind, target, curve, n_eval + n)


class RabiCalibrator(BaseEstimator):
    """Estimator wrapper: ``fit`` calibrates, ``predict`` maps Ω to transfer.

    Parameters mirror :func:`optimize_rabi`; frequencies are in units of ω_r.
    """

    def __init__(self, order=1, tau=25e-6, kind="gaussian", target="half", sigma_p=0.01,
                 bracket=None, n_samples=6, threads=1):
        self.order = order
        self.tau = tau
        self.kind = kind
        self.target = target
        self.sigma_p = sigma_p
        self.bracket = bracket
        self.n_samples = n_samples
        self.threads = threads

    def _probe(self, species):
        n = self.order
        return PulseProbe(species, n, self.tau, self.kind, self.sigma_p, ports=(0.0, 2.0 * n), target=(2.0 * n,))

    def fit(self, X=None, y=None, species: Species | None = None):
        sp = species or rubidium87()
        wr = sp.omega_r
        br = None if self.bracket is None else (self.bracket[0] * wr, self.bracket[1] * wr)
        self.species_ = sp
        self.result_ = optimize_rabi(
            self.order, self.tau, self.kind, self.target, self.sigma_p, br, sp,
            probe=self._probe(sp), n_samples=self.n_samples, threads=self.threads,
        )
        self.omega_ = self.result_.omega_star / wr
        self.transfer_ = self.result_.transfer
        return self

    def predict(self, X):
        """Transfer at each peak Rabi frequency in ``X`` (units of ω_r)."""
        check_is_fitted(self, "result_")
        X = np.asarray(X, dtype=float).ravel()
        probe = self._probe(self.species_)
        return np.array([probe.transfer(w * self.species_.omega_r) for w in X])
