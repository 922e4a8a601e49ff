"""Coupled-mode reference solver on the momentum ladder p = (m + δ)ħk.

For a spatially uniform lattice at rest, V = ħΩ(t)(1 + cos(2kx + θ)), each
sub-offset δ evolves independently:

    i ġ_m = ((m+δ)² ω_r + Ω) g_m + (Ω/2)(e^{iθ} g_{m−2} + e^{−iθ} g_{m+2})

Orders outside [−N_m, N_m] are dropped. Inhomogeneous beams and mean-field
couplings would turn the ladder into a dense system; they are not handled.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .errors import ConfigurationError, TruncationError
from .grid import HBAR, Grid, Species
from .potentials import LatticeTerm, PulseEnvelope
from .propagator import Propagator, StepScheme
from .state import WaveFunction


@dataclass
class ModeBasis:
    """Amplitudes g[m, δ] with orders −n_max..n_max and ``n_delta`` sub-offsets."""

    n_max: int
    n_delta: int
    amplitudes: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if self.n_delta < 1 or self.n_max < 1:
            raise ConfigurationError("n_max and n_delta must be >= 1")
        a = np.asarray(self.amplitudes, dtype=np.complex128)
        if a.shape != (2 * self.n_max + 1, self.n_delta):
            raise ConfigurationError("amplitude array has the wrong shape")
        self.amplitudes = a

    @property
    def orders(self) -> np.ndarray:
        return np.arange(-self.n_max, self.n_max + 1)

    @property
    def deltas(self) -> np.ndarray:
        return -0.5 + np.arange(self.n_delta) / self.n_delta

    @property
    def momenta(self) -> np.ndarray:
        """(m + δ) in units of ħk, same shape as the amplitudes."""
        return self.orders[:, None] + self.deltas[None, :]

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def populations(self) -> dict[int, float]:
        p = np.sum(np.abs(self.amplitudes) ** 2, axis=1)
        return {int(m): float(v) for m, v in zip(self.orders, p)}

    def copy(self) -> "ModeBasis":
        return ModeBasis(self.n_max, self.n_delta, self.amplitudes.copy(), self.t)

    @classmethod
    def gaussian(cls, n_max: int, n_delta: int, sigma_p: float, center: float = 0.0) -> "ModeBasis":
        """Gaussian momentum weights of width ``sigma_p`` (ħk units) about ``center``."""
        b = cls(n_max, n_delta, np.zeros((2 * n_max + 1, n_delta)))
        q = b.momenta - center
        a = np.exp(-(q**2) / (4 * sigma_p**2))
        b.amplitudes = (a / math.sqrt(np.sum(a**2))).astype(np.complex128)
        return b

    @classmethod
    def from_wavefunction(cls, psi: WaveFunction, species: Species, n_max: int) -> "ModeBasis":
        g = psi.grid
        n_delta = _n_delta(g, species)
        j = np.rint(np.asarray(g.p) / g.p_step).astype(np.int64)
        coef = sfft.fft(psi.amplitudes) * math.sqrt(g.dx / g.n_points)
        coef *= np.exp(-1j * np.asarray(g.p) * g.x_min / HBAR)
        m = np.floor(j / n_delta + 0.5).astype(np.int64)
        d = j - m * n_delta + n_delta // 2
        keep = np.abs(m) <= n_max
        lost = float(np.sum(np.abs(coef[~keep]) ** 2))
        if lost > 1e-10:
            raise TruncationError(f"population {lost:.2e} outside orders ±{n_max}")
        amps = np.zeros((2 * n_max + 1, n_delta), dtype=np.complex128)
        amps[m[keep] + n_max, d[keep]] = coef[keep]
        return cls(n_max, n_delta, amps, psi.t)

    def to_wavefunction(self, grid: Grid, species: Species) -> WaveFunction:
        n_delta = _n_delta(grid, species)
        if n_delta != self.n_delta:
            raise ConfigurationError("grid momentum spacing does not match n_delta")
        j = np.rint(np.asarray(grid.p) / grid.p_step).astype(np.int64)
        m = np.floor(j / n_delta + 0.5).astype(np.int64)
        d = j - m * n_delta + n_delta // 2
        keep = np.abs(m) <= self.n_max
        coef = np.zeros(grid.n_points, dtype=np.complex128)
        coef[keep] = self.amplitudes[m[keep] + self.n_max, d[keep]]
        coef *= np.exp(1j * np.asarray(grid.p) * grid.x_min / HBAR)
        psi = sfft.ifft(coef) * math.sqrt(grid.n_points / grid.dx)
        return WaveFunction(grid, psi, self.t)


def _n_delta(grid: Grid, species: Species) -> int:
    ratio = species.hbar_k / grid.p_step
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * ratio:
        raise ConfigurationError(
            "grid momentum step must divide ħk (choose n_points·dx = integer·λ)"
        )
    return n


def _rhs(g, omega, kin, phase_up, phase_dn):
    out = (kin + omega) * g
    half = 0.5 * omega
    out[2:] += (half * phase_up) * g[:-2]
    out[:-2] += (half * phase_dn) * g[2:]
    return -1j * out


def ode_propagate(
    basis: ModeBasis,
    omega_of_t,
    t_end: float,
    rk_dt: float,
    species: Species,
    theta: float = 0.0,
    boundary_tol: float = 1e-6,
) -> ModeBasis:
    """Integrate the ladder from ``basis.t`` to ``t_end`` with classic RK4.

    ``omega_of_t`` is a ``PulseEnvelope`` or any callable Ω(t) in rad/s.
    """
    if not rk_dt > 0:
        raise ConfigurationError("rk_dt must be positive")
    omega = omega_of_t.value if isinstance(omega_of_t, PulseEnvelope) else omega_of_t
    span = t_end - basis.t
    n = max(1, math.ceil(abs(span) / rk_dt - 1e-9))
    h = span / n
    kin = species.omega_r * basis.momenta**2
    up, dn = np.exp(1j * theta), np.exp(-1j * theta)
    g = basis.amplitudes.copy()
    t = basis.t
    for i in range(n):
        w0 = omega(t)
        wm = omega(t + 0.5 * h)
        w1 = omega(t + h)
        k1 = _rhs(g, w0, kin, up, dn)
        k2 = _rhs(g + 0.5 * h * k1, wm, kin, up, dn)
        k3 = _rhs(g + 0.5 * h * k2, wm, kin, up, dn)
        k4 = _rhs(g + h * k3, w1, kin, up, dn)
        g = g + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = basis.t + (i + 1) * h
    edge = float(np.sum(np.abs(g[:2]) ** 2) + np.sum(np.abs(g[-2:]) ** 2))
    if edge > boundary_tol:
        raise TruncationError(f"boundary orders hold {edge:.2e} of the population")
    return ModeBasis(basis.n_max, basis.n_delta, g, t_end)


def complexity_benchmark(
    sizes, species: Species, n_steps: int = 20, repeats: int = 3, n_max: int = 8
) -> dict:
    """Time ``n_steps`` of each solver at matched size N_eq ≈ N_grid.

    The grid uses dx = λ/16 so N_δ = N/16; the ladder has 2·n_max+1 orders.
    Returns rows (N, t_ode, t_pde) in seconds per step and log-log slopes.
    """
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes):
        raise ConfigurationError("sizes must be ascending")
    rows = []
    dt = 1e-7
    env = PulseEnvelope("rectangular", 2 * species.omega_r, 0.0, 1.0)
    for n in sizes:
        n_delta = max(1, n // 16)
        basis = ModeBasis.gaussian(n_max, n_delta, 0.05)
        t_ode = _best_time(lambda: ode_propagate(basis, env, n_steps * dt, dt, species, boundary_tol=1.0), repeats)
        grid = Grid.from_spacing(species.lambda_light / 16, n)
        psi = WaveFunction(grid, np.ones(n, complex) / math.sqrt(grid.length))
        prop = Propagator(grid, species.mass, [LatticeTerm(env, species.k)], StepScheme("strang", dt, dt))
        t_pde = _best_time(lambda: prop.run(psi, n_steps * dt), repeats)
        rows.append((n, t_ode / n_steps, t_pde / n_steps))
    out = {"rows": rows, "slope_ode": math.nan, "slope_pde": math.nan}
    if len(rows) > 1:
        ln = np.log([r[0] for r in rows])
        out["slope_ode"] = float(np.polyfit(ln, np.log([r[1] for r in rows]), 1)[0])
        out["slope_pde"] = float(np.polyfit(ln, np.log([r[2] for r in rows]), 1)[0])
    return out


def _best_time(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best
