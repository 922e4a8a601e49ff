"""Wavefunctions on a grid: Gaussian packets, GPE ground states, spectra, I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .errors import ConfigurationError, NumericalError
from .grid import HBAR, Grid, Species


@dataclass
class WaveFunction:
    """Complex field ψ(x) sampled on ``grid`` at time ``t``.

    Treated as a value: operations return new instances.
    """

    grid: Grid
    amplitudes: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=np.complex128)
        if a.shape != (self.grid.n_points,):
            raise ConfigurationError(
                f"amplitude shape {a.shape} does not match grid of {self.grid.n_points}"
            )
        self.amplitudes = a

    def copy(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.amplitudes.copy(), self.t)

    def density(self) -> np.ndarray:
        a = self.amplitudes
        return a.real**2 + a.imag**2

    def norm(self) -> float:
        return float(self.density().sum() * self.grid.dx)

    def normalized(self) -> "WaveFunction":
        n = self.norm()
        if not n > 0:
            raise NumericalError("cannot normalize a zero state")
        return WaveFunction(self.grid, self.amplitudes / math.sqrt(n), self.t)

    def inner(self, other: "WaveFunction") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.grid.dx)

    def fidelity(self, other: "WaveFunction") -> float:
        """|<self|other>| for normalized states."""
        return abs(self.inner(other))

    def momentum_amplitudes(self) -> np.ndarray:
        """Discrete momentum amplitudes in FFT order with Σ|a|² = norm."""
        return sfft.fft(self.amplitudes) * math.sqrt(self.grid.dx / self.grid.n_points)

    def mean_position(self) -> float:
        rho = self.density()
        return float((self.grid.x * rho).sum() / rho.sum())


def momentum_spectrum(psi: WaveFunction) -> np.ndarray:
    """Momentum probability density on ``psi.grid.p_centered``.

    Normalized so that ``spectrum.sum() * grid.p_step`` equals the norm.
    """
    a = psi.momentum_amplitudes()
    rho = (a.real**2 + a.imag**2) / psi.grid.p_step
    return np.fft.fftshift(rho)


def spectrum_moments(psi: WaveFunction) -> tuple[float, float]:
    """Mean and standard deviation of the momentum distribution."""
    p = psi.grid.p_centered
    w = momentum_spectrum(psi)
    w = w / w.sum()
    mean = float((p * w).sum())
    return mean, float(math.sqrt(((p - mean) ** 2 * w).sum()))


def gaussian_packet(
    grid: Grid, sigma_p: float, x0: float = 0.0, p0: float = 0.0
) -> WaveFunction:
    """Minimum-uncertainty Gaussian with momentum width ``sigma_p``."""
    if not sigma_p > 0:
        raise ConfigurationError("sigma_p must be positive", "initial_state.sigma_p")
    if sigma_p < 10.0 * grid.p_step:
        raise ConfigurationError(
            f"sigma_p is {sigma_p / grid.p_step:.2f} momentum steps; need >= 10",
            "initial_state.sigma_p",
        )
    sigma_x = HBAR / (2.0 * sigma_p)
    if x0 - 5 * sigma_x < grid.x_min or x0 + 5 * sigma_x > grid.x_max:
        raise ConfigurationError(
            "packet envelope (5 sigma_x) does not fit inside the grid",
            "initial_state.x0",
        )
    if abs(p0) + 5 * sigma_p > grid.p_max:
        raise ConfigurationError("p0 beyond representable momenta", "initial_state.p0")
    u = grid.x - x0
    psi = np.exp(-(u**2) / (4 * sigma_x**2) + 1j * (p0 / HBAR) * u)
    return WaveFunction(grid, psi).normalized()


def harmonic_ground_state(grid: Grid, species: Species, omega_x: float) -> WaveFunction:
    """Analytic ground state of ½mω²x² centered on x = 0."""
    sigma_x = math.sqrt(HBAR / (2 * species.mass * omega_x))
    psi = np.exp(-(grid.x**2) / (4 * sigma_x**2)).astype(np.complex128)
    return WaveFunction(grid, psi).normalized()


def thomas_fermi_radius(g1d: float, n_atoms: float, omega_x: float, mass: float) -> float:
    """Half-width of the 1D Thomas-Fermi profile."""
    return (3.0 * g1d * n_atoms / (2.0 * mass * omega_x**2)) ** (1.0 / 3.0)


def gpe_energy(psi: WaveFunction, v_ext: np.ndarray, mass: float, gn: float) -> float:
    """Energy per particle of the GPE functional."""
    g = psi.grid
    a = psi.momentum_amplitudes()
    kin = float(((g.p**2 / (2 * mass)) * (a.real**2 + a.imag**2)).sum())
    rho = psi.density()
    pot = float((v_ext * rho).sum() * g.dx)
    inter = float(0.5 * gn * (rho**2).sum() * g.dx)
    return kin + pot + inter


def ground_state_gpe(
    grid: Grid,
    species: Species,
    omega_x: float,
    g1d: float,
    n_atoms: float,
    tol: float = 1e-13,
    dtau_schedule=None,
    max_iter: int = 200_000,
) -> WaveFunction:
    """Ground state of the 1D GPE in ½mω²x² by imaginary-time Strang splitting.

    Each stage of ``dtau_schedule`` (in units of 1/omega_x) runs until the
    relative energy change per step drops below ``tol``. The state is
    renormalized after every step.
    """
    if not omega_x > 0:
        raise ConfigurationError("omega_x must be positive")
    if g1d < 0 or n_atoms < 0 or not tol > 0:
        raise ConfigurationError("g1d, n_atoms must be >= 0 and tol > 0")
    m = species.mass
    gn = g1d * n_atoms
    v_ext = 0.5 * m * omega_x**2 * grid.x**2
    sigma_ho = math.sqrt(HBAR / (2 * m * omega_x))
    # start from a Gaussian with the Thomas-Fermi variance R²/5 when wider
    sigma0 = sigma_ho
    if gn > 0:
        sigma0 = max(sigma_ho, thomas_fermi_radius(g1d, n_atoms, omega_x, m) / math.sqrt(5))
    psi = np.exp(-(grid.x**2) / (4 * sigma0**2)).astype(np.complex128)
    psi /= math.sqrt((np.abs(psi) ** 2).sum() * grid.dx)
    if dtau_schedule is None:
        dtau_schedule = (1e-2, 1e-3)
    kin = grid.p**2 / (2 * m * HBAR)
    energy = math.inf
    it = 0
    for stage in dtau_schedule:
        dtau = stage / omega_x
        kfac = np.exp(-kin * dtau)
        prev = math.inf
        while True:
            it += 1
            if it > max_iter:
                raise NumericalError(
                    "imaginary-time iteration did not converge",
                    step=it,
                    residual=abs(energy - prev) / abs(energy),
                )
            half = np.exp(-(v_ext + gn * np.abs(psi) ** 2) * (0.5 * dtau / HBAR))
            psi *= half
            psi = sfft.ifft(kfac * sfft.fft(psi))
            psi *= np.exp(-(v_ext + gn * np.abs(psi) ** 2) * (0.5 * dtau / HBAR))
            psi /= math.sqrt((psi.real**2 + psi.imag**2).sum() * grid.dx)
            if not np.isfinite(psi[0]):
                raise NumericalError("non-finite amplitudes in imaginary time", step=it)
            prev, energy = energy, gpe_energy(WaveFunction(grid, psi), v_ext, m, gn)
            if abs(energy - prev) <= tol * abs(energy):
                break
    # remove the arbitrary global phase
    psi = np.abs(psi).astype(np.complex128)
    return WaveFunction(grid, psi, 0.0)


def save_csv(psi: WaveFunction, path) -> None:
    data = np.column_stack([psi.grid.x, psi.amplitudes.real, psi.amplitudes.imag])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header="x,re,im", comments="")


def load_csv(path, t: float = 0.0) -> WaveFunction:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return _from_triplets(data, t)


def save_binary(psi: WaveFunction, path) -> None:
    data = np.column_stack([psi.grid.x, psi.amplitudes.real, psi.amplitudes.imag])
    Path(path).write_bytes(data.astype("<f8").tobytes())


def load_binary(path, t: float = 0.0) -> WaveFunction:
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f8").reshape(-1, 3)
    return _from_triplets(data, t)


def _from_triplets(data: np.ndarray, t: float) -> WaveFunction:
    grid = Grid(float(data[0, 0]), float(data[-1, 0]), data.shape[0])
    return WaveFunction(grid, data[:, 1] + 1j * data[:, 2], t)
