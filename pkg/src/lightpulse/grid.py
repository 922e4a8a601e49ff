"""Position/momentum grids, atomic species and resolution diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import constants

from .errors import ConfigurationError

HBAR = constants.hbar


@dataclass(frozen=True)
class Species:
    """Atomic species driven by a lattice of wavelength ``lambda_light``.

    All quantities are SI. ``k``, ``omega_r`` and ``v_r`` are derived.
    """

    mass: float
    lambda_light: float
    a_s: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if not (self.mass > 0 and self.lambda_light > 0):
            raise ConfigurationError("mass and wavelength must be positive")
        if self.a_s < 0:
            raise ConfigurationError("scattering length must be non-negative")

    @property
    def k(self) -> float:
        return 2.0 * math.pi / self.lambda_light

    @property
    def hbar_k(self) -> float:
        return HBAR * self.k

    @property
    def omega_r(self) -> float:
        return HBAR * self.k**2 / (2.0 * self.mass)

    @property
    def v_r(self) -> float:
        return HBAR * self.k / self.mass


def rubidium87(lambda_light: float = 780e-9) -> Species:
    """Rb-87 on the D2 line."""
    return Species(
        mass=86.909180527 * constants.atomic_mass,
        lambda_light=lambda_light,
        a_s=5.272e-9,
        name="Rb87",
    )


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``n_points`` samples spanning [x_min, x_max] inclusive.

    ``dp`` and ``delta_p_total`` are the nominal conjugate scales
    2πħ/L and 2πħ/dx. The discrete Fourier transform treats the sample
    vector as periodic with period ``n_points * dx``, so the spacing of
    the momentum samples is ``p_step = 2πħ/(n_points*dx)``, slightly
    smaller than ``dp``.
    """

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        n = self.n_points
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise ConfigurationError("n_points must be an integer", "grid.n_points")
        if not _is_pow2(int(n)):
            raise ConfigurationError(
                f"n_points={n} is not a power of two >= 2", "grid.n_points"
            )
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise ConfigurationError("grid bounds must be finite", "grid")
        if not self.x_max > self.x_min:
            raise ConfigurationError("x_max must exceed x_min", "grid.x_max")
        object.__setattr__(self, "n_points", int(n))
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))

    @classmethod
    def from_spacing(cls, dx: float, n_points: int, center: float = 0.0) -> "Grid":
        """Grid with exact spacing ``dx`` centered on ``center``."""
        if not dx > 0:
            raise ConfigurationError("dx must be positive", "grid.dx")
        half = 0.5 * dx * (n_points - 1)
        return cls(center - half, center + half, n_points)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / (self.n_points - 1)

    @property
    def dp(self) -> float:
        return 2.0 * math.pi * HBAR / self.length

    @property
    def delta_p_total(self) -> float:
        return 2.0 * math.pi * HBAR / self.dx

    @property
    def p_step(self) -> float:
        return 2.0 * math.pi * HBAR / (self.n_points * self.dx)

    @property
    def p_max(self) -> float:
        """Largest representable momentum magnitude."""
        return 0.5 * self.delta_p_total

    # cached_property writes to __dict__, which frozen dataclasses allow.
    @cached_property
    def x(self) -> np.ndarray:
        x = np.linspace(self.x_min, self.x_max, self.n_points)
        x.flags.writeable = False
        return x

    @cached_property
    def p(self) -> np.ndarray:
        """Momentum samples in FFT order."""
        p = np.fft.fftfreq(self.n_points, d=self.dx) * (2.0 * math.pi * HBAR)
        p.flags.writeable = False
        return p

    @cached_property
    def p_centered(self) -> np.ndarray:
        """Momentum samples in ascending order (``fftshift`` of ``p``)."""
        p = np.fft.fftshift(self.p)
        p.flags.writeable = False
        return p

    def describe(self) -> dict:
        return {
            "x_min": self.x_min,
            "x_max": self.x_max,
            "n_points": self.n_points,
            "dx": self.dx,
            "dp": self.dp,
            "delta_p_total": self.delta_p_total,
            "p_step": self.p_step,
        }


def make_grid(x_min: float, x_max: float, n_points: int) -> Grid:
    return Grid(x_min, x_max, n_points)


def grid_for_spacing(dx: float, min_length: float, center: float = 0.0) -> Grid:
    """Smallest power-of-two grid with spacing ``dx`` covering ``min_length``."""
    if not (dx > 0 and min_length > 0):
        raise ConfigurationError("dx and length must be positive", "grid")
    n = 2
    while (n - 1) * dx < min_length:
        n *= 2
    return Grid.from_spacing(dx, n, center)


@dataclass(frozen=True)
class ResolutionReport:
    """Advisory grid diagnostics; ``flags`` maps constraint name to failure."""

    dp_over_hbar_k: float
    sigma_p_over_dp: float
    extent_over_separation: float
    delta_p_over_hbar_k: float
    required_delta_p_over_hbar_k: float
    dx_over_lambda: float
    flags: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.flags.values())

    @property
    def truncation(self) -> bool:
        return self.flags.get("momentum_truncation", False)


def check_resolution(
    grid: Grid,
    species: Species,
    max_order: int,
    sigma_p: float,
    max_separation: float,
    margin: int = 2,
) -> ResolutionReport:
    """Check a grid against the usual split-operator resolution bounds.

    ``max_order`` is the largest momentum of interest in units of ħk.
    Nothing is raised; each failed constraint sets its flag.
    """
    if max_order < 1 or not sigma_p > 0:
        raise ConfigurationError("max_order >= 1 and sigma_p > 0 required")
    hk = species.hbar_k
    dp_ratio = grid.dp / hk
    sp_ratio = sigma_p / grid.dp
    ext_ratio = grid.length / max_separation if max_separation > 0 else math.inf
    dP = grid.delta_p_total / hk
    need = 2.0 * (max_order + margin)
    dxl = grid.dx / species.lambda_light
    flags = {
        "momentum_resolution": not (dp_ratio <= 0.1 and sp_ratio >= 10.0),
        "position_extent": ext_ratio < 1.0,
        "momentum_truncation": dP < need,
        "lattice_sampling": dxl > 0.1,
    }
    return ResolutionReport(dp_ratio, sp_ratio, ext_ratio, dP, need, dxl, flags)
