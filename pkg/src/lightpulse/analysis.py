"""Port integration, fringe fitting and closed-form reference models."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fringe_data
from .errors import FitError, LowContrastError, MeasurementError
from .grid import HBAR, Species
from .state import WaveFunction, momentum_spectrum, thomas_fermi_radius


# ---------------------------------------------------------------------------
# ports


@dataclass(frozen=True)
class Port:
    """Integration window [center − half_width, center + half_width]."""

    center: float
    half_width: float

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.center - self.half_width, self.center + self.half_width)


@dataclass(frozen=True)
class PortPopulations:
    raw: tuple
    normalized: tuple
    low_signal: bool = False

    @property
    def total(self) -> float:
        return float(sum(self.raw))


def _as_ports(ports) -> list[Port]:
    return [p if isinstance(p, Port) else Port(float(p[0]), float(p[1])) for p in ports]


def _check_disjoint(ports: list[Port], lo: float, hi: float) -> None:
    for p in ports:
        if not p.half_width > 0:
            raise MeasurementError("port half-width must be positive")
        a, b = p.bounds
        if a < lo or b > hi:
            raise MeasurementError(f"port at {p.center:g} extends outside the domain")
    order = sorted(ports, key=lambda p: p.center)
    for left, right in zip(order, order[1:]):
        if left.bounds[1] > right.bounds[0]:
            raise MeasurementError(
                f"ports at {left.center:g} and {right.center:g} overlap"
            )


def _normalize(raw, floor):
    total = float(sum(raw))
    if total <= 0:
        raise MeasurementError("no population in any port")
    low = total < floor
    if low:
        warnings.warn(f"port populations sum to {total:.3g} < floor {floor}", stacklevel=3)
    return PortPopulations(tuple(raw), tuple(r / total for r in raw), low)


def port_populations(psi: WaveFunction, ports, floor: float = 0.5) -> PortPopulations:
    """Trapezoid-rule populations of position-space windows, raw and normalized."""
    ports = _as_ports(ports)
    g = psi.grid
    _check_disjoint(ports, g.x_min, g.x_max)
    x = np.asarray(g.x)
    rho = psi.density()
    raw = []
    for p in ports:
        a, b = p.bounds
        i0 = int(np.searchsorted(x, a, side="left"))
        i1 = int(np.searchsorted(x, b, side="right"))
        raw.append(float(trapezoid(rho[i0:i1], x[i0:i1])) if i1 - i0 > 1 else 0.0)
    return _normalize(raw, floor)


def momentum_port_populations(
    psi: WaveFunction, centers, width: float, floor: float = 0.5
) -> PortPopulations:
    """Populations of momentum bins [c − width/2, c + width/2)."""
    g = psi.grid
    p = np.asarray(g.p_centered)
    dens = momentum_spectrum(psi)
    half = 0.5 * width
    ports = [Port(float(c), half) for c in centers]
    _check_disjoint(ports, -math.inf, math.inf)
    raw = []
    for c in centers:
        mask = (p >= c - half) & (p < c + half)
        raw.append(float(dens[mask].sum() * g.p_step))
    return _normalize(raw, floor)


def detect_ports(density: np.ndarray, x: np.ndarray, predicted, half_width: float | None = None):
    """Port windows centred on the density maxima nearest the predicted centres.

    The search for each maximum is limited to half the window around its
    prediction. ``half_width`` defaults to half the minimal spacing of the
    predictions.
    """
    predicted = [float(c) for c in predicted]
    if not predicted:
        raise MeasurementError("no ports requested")
    if half_width is None:
        if len(predicted) == 1:
            raise MeasurementError("a single port needs an explicit half-width")
        half_width = 0.5 * float(np.min(np.diff(sorted(predicted))))
    if not half_width > 0:
        raise MeasurementError("predicted ports coincide")
    centers = []
    for c in predicted:
        i0 = int(np.searchsorted(x, c - 0.5 * half_width))
        i1 = int(np.searchsorted(x, c + 0.5 * half_width))
        if i1 - i0 < 1:
            raise MeasurementError(f"predicted port {c:g} lies outside the grid")
        centers.append(float(x[i0 + int(np.argmax(density[i0:i1]))]))
    # refining may pull centres closer; shrink so windows stay disjoint
    if len(centers) > 1:
        gap = float(np.min(np.diff(sorted(centers))))
        half_width = min(half_width, 0.5 * gap)
    return [Port(c, half_width) for c in centers]


# ---------------------------------------------------------------------------
# fringe fitting


@dataclass(frozen=True)
class FringeFit:
    """P(φ₀) = offset·(1 + C·cos(Δφ + n·φ₀))."""

    delta_phi: float
    contrast: float
    offset: float
    residual_rms: float
    n_order: int
    iterations: int = 0
    phase_std: float = float("nan")
    dominant_harmonic: int = 0
    trace: list = field(default_factory=list, compare=False, repr=False)

    def predict(self, phis) -> np.ndarray:
        phis = np.asarray(phis, dtype=float)
        return self.offset * (1 + self.contrast * np.cos(self.delta_phi + self.n_order * phis))

    def as_dict(self) -> dict:
        return {
            "delta_phi": self.delta_phi,
            "contrast": self.contrast,
            "offset": self.offset,
            "residual_rms": self.residual_rms,
            "n_order": self.n_order,
            "iterations": self.iterations,
            "phase_std": self.phase_std,
            "dominant_harmonic": self.dominant_harmonic,
        }


def wrap_phase(phi: float) -> float:
    """Map into (−π, π]."""
    w = math.remainder(phi, 2 * math.pi)
    return math.pi if w == -math.pi else w


def _harmonic(phis, pops, n):
    return np.mean(pops * np.exp(1j * n * phis))


def dominant_harmonic(phis, pops, max_harmonic: int = 6) -> int:
    """Index of the strongest non-zero harmonic of the scan."""
    phis = np.asarray(phis, float)
    pops = np.asarray(pops, float)
    # harmonics above (N−1)/2 alias onto lower ones
    max_harmonic = max(1, min(max_harmonic, (len(phis) - 1) // 2))
    amps = [abs(_harmonic(phis, pops - pops.mean(), h)) for h in range(1, max_harmonic + 1)]
    return int(np.argmax(amps)) + 1


def fit_fringe(phis, pops, n_order: int, max_iter: int = 100, tol: float = 1e-14) -> FringeFit:
    """Least-squares fit of the fringe model at harmonic ``n_order``.

    Starts from the discrete Fourier component at harmonic n, then refines
    (Δφ, C, offset) by Gauss-Newton.
    """
    phis, pops = check_fringe_data(phis, pops, n_order)
    n = n_order
    comp = _harmonic(phis, pops, n)
    offset = float(pops.mean())
    if offset == 0:
        raise LowContrastError("all populations are zero")
    theta = np.array([-np.angle(comp), 2 * abs(comp) / offset, offset])
    trace = [theta.copy()]
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        arg = theta[0] + n * phis
        c, s = np.cos(arg), np.sin(arg)
        model = theta[2] * (1 + theta[1] * c)
        jac = np.column_stack([-theta[2] * theta[1] * s, theta[2] * c, 1 + theta[1] * c])
        step, *_ = np.linalg.lstsq(jac, pops - model, rcond=None)
        theta = theta + step
        trace.append(theta.copy())
        if not np.all(np.isfinite(theta)):
            raise FitError("fringe fit diverged", trace)
        if np.max(np.abs(step) / np.maximum(np.abs(theta), 1.0)) < tol:
            converged = True
            break
    # the last step may still shrink slowly at roundoff level
    if not converged and np.max(np.abs(step)) > 1e-9:
        raise FitError("Gauss-Newton did not converge", trace)
    dphi, contrast, off = (float(v) for v in theta)
    if contrast < 0:
        contrast, dphi = -contrast, dphi + math.pi
    resid = pops - off * (1 + contrast * np.cos(dphi + n * phis))
    rms = float(np.sqrt(np.mean(resid**2)))
    if contrast < 1e-12 or contrast < 3 * rms:
        raise LowContrastError(f"contrast {contrast:.3g} below noise floor {3 * rms:.3g}", trace)
    dof = max(len(phis) - 3, 1)
    sigma2 = float(np.sum(resid**2)) / dof
    std = math.sqrt(2 * sigma2 / len(phis)) / (off * contrast)
    return FringeFit(
        wrap_phase(dphi),
        contrast,
        off,
        rms,
        n,
        it,
        std,
        dominant_harmonic(phis, pops),
        trace,
    )


class FringeFitter(BaseEstimator, RegressorMixin):
    """Estimator view of :func:`fit_fringe`: ``X`` holds laser phases φ₀,
    ``y`` the normalized port population. ``score`` is R²."""

    def __init__(self, n_order: int = 1):
        self.n_order = n_order

    def fit(self, X, y):
        phis = np.asarray(X, dtype=float).reshape(-1)
        self.fit_ = fit_fringe(phis, np.asarray(y, dtype=float).reshape(-1), self.n_order)
        self.delta_phi_ = self.fit_.delta_phi
        self.contrast_ = self.fit_.contrast
        self.offset_ = self.fit_.offset
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return self.fit_.predict(np.asarray(X, dtype=float).reshape(-1))


def default_phase_scan(n_points: int = 24) -> np.ndarray:
    """Uniform laser phases on [0, 2π)."""
    return 2 * math.pi * np.arange(n_points) / n_points


# ---------------------------------------------------------------------------
# reference formulas


def velocity_acceptance(tau: float, species: Species) -> float:
    """Velocity width σ_v = v_r/(8 ω_r τ) accepted by a pulse of duration τ."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return species.v_r / (8 * species.omega_r * tau)


def bessel_j(n: int, x: float) -> float:
    """Bessel function J_n(x) of integer order by Miller's backward recurrence."""
    n = int(n)
    sign = 1.0
    if n < 0:
        n = -n
        sign = -1.0 if n % 2 else 1.0
    if x < 0:
        x = -x
        sign *= -1.0 if n % 2 else 1.0
    if x == 0:
        return sign * (1.0 if n == 0 else 0.0)
    if x < 1.0:
        # power series; the recurrence below would overflow for tiny x
        term = (0.5 * x) ** n / math.factorial(n)
        total = term
        q = -0.25 * x * x
        for m in range(1, 40):
            term *= q / (m * (m + n))
            total += term
            if abs(term) <= 1e-17 * abs(total):
                break
        return sign * total
    top = int(max(n, x) + 30 + 4 * math.sqrt(max(n, x)))
    top += top % 2
    j_next, j_cur = 0.0, 1e-300
    norm = 0.0
    result = 0.0
    for k in range(top, 0, -1):
        j_prev = (2 * k / x) * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if abs(j_cur) > 1e250:  # rescale to avoid overflow
            j_next *= 1e-250
            j_cur *= 1e-250
            norm *= 1e-250
            result *= 1e-250
        # j_cur now holds J_{k-1}
        if k - 1 == n:
            result = j_cur
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2 * j_cur
    norm += j_cur  # J_0
    return sign * result / norm


def raman_nath_oracle(omega: float, tau: float, orders) -> dict:
    """Populations J_n²(Ωτ) of diffraction orders n (momentum 2nħk)."""
    x = omega * tau
    return {int(n): bessel_j(int(n), x) ** 2 for n in orders}


def arm_chemical_potentials(
    delta_n: float, n_atoms: float, g1d: float, omega_x: float, species: Species
) -> tuple[float, float]:
    """Uniform-density chemical potentials (N/2 ± δN/2)·g1d/(2R_TF) of the two arms."""
    r = thomas_fermi_radius(g1d, n_atoms, omega_x, species.mass)
    dn = delta_n * n_atoms
    return (
        (0.5 * n_atoms + 0.5 * dn) * g1d / (2 * r),
        (0.5 * n_atoms - 0.5 * dn) * g1d / (2 * r),
    )


def meanfield_phase_model(
    delta_n: float, n_atoms: float, g1d: float, omega_x: float, species: Species, T: float
) -> float:
    """Phase 2T·(μ₁ − μ₂)/ħ accumulated over an interferometer of duration 2T.

    ``delta_n`` is the relative imbalance δN/N.
    """
    if not -1 <= delta_n <= 1:
        raise ValueError("delta_n must lie in [-1, 1]")
    coef = (math.sqrt(species.mass) * g1d * omega_x / (2 * math.sqrt(3))) ** (2.0 / 3.0)
    return (2 * T / HBAR) * coef * (delta_n * n_atoms) / n_atoms ** (1.0 / 3.0)
