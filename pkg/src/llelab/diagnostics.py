"""Decay-rate fits, damping energies and inequality-structure checks.

All constants that the underlying estimates leave unquantified are fitted per
run and reported; the acceptance-style checks assert only stability of those
fitted constants under halving of the initial size, never a-priori values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError
from .spectral import RealPairField, compose_shift, norm, scalar_norm, spectral_derivative

__all__ = [
    "DecayReport",
    "EnergyTrack",
    "TemplateTrack",
    "DampingReport",
    "RelateReport",
    "fit_decay",
    "damping_energy",
    "energy_track",
    "verify_damping_inequality",
    "relate_check",
    "template_eta",
]


@dataclass
class DecayReport:
    norm_name: str
    model: str
    exponent: float
    window: tuple
    r_squared: float
    boundary_valid: bool = True
    num_points: int = 0

    def to_dict(self):
        return {
            "norm_name": self.norm_name,
            "model": self.model,
            "exponent": self.exponent,
            "window": list(self.window),
            "r_squared": self.r_squared,
            "boundary_valid": self.boundary_valid,
            "num_points": self.num_points,
        }


def fit_decay(times, values, model="algebraic", window=None, norm_name="", valid_mask=None):
    """Least-squares decay fit of a positive series.

    model="algebraic": log y ~ -kappa * log(1+t); the reported exponent is
    kappa (y ~ (1+t)^{-kappa}). model="exponential": log y ~ -delta * t.
    Samples outside `window` or flagged invalid in `valid_mask` are excluded;
    algebraic fits demand >= 10 samples spanning a decade in (1+t).
    """
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    if np.any(values <= 0):
        raise ValueError("fit_decay needs strictly positive values")
    keep = np.ones(times.size, bool)
    if valid_mask is not None:
        keep &= np.asarray(valid_mask, bool)
    if window is not None:
        keep &= (times >= window[0]) & (times <= window[1])
    t = times[keep]
    y = values[keep]
    if t.size < 10:
        raise InsufficientDataError(f"fit window has {t.size} samples; need >= 10")
    if model == "algebraic":
        span = (1.0 + t.max()) / (1.0 + t.min())
        if span < 10.0:
            raise InsufficientDataError(
                f"fit window spans factor {span:.2f} in (1+t); need a decade"
            )
        x = np.log1p(t)
    elif model == "exponential":
        x = t
    else:
        raise ValueError(f"unknown model {model!r}")
    logy = np.log(y)
    slope, intercept = np.polyfit(x, logy, 1)
    pred = slope * x + intercept
    ss_res = float(((logy - pred) ** 2).sum())
    ss_tot = float(((logy - logy.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayReport(
        norm_name=norm_name,
        model=model,
        exponent=float(-slope),
        window=(float(t.min()), float(t.max())),
        r_squared=float(r2),
        num_points=int(t.size),
    )


def _jm_matrix_entries(phi_ring_data):
    """Entries of the symmetric matrix J*M(phi_ring) with
    M = 2*[[-2ab, a^2-b^2], [a^2-b^2, 2ab]] (a, b the profile components)."""
    a, b = phi_ring_data
    d = a * a - b * b
    o = 2.0 * a * b
    # J*M = 2*[[-d, -o], [-o, d]]
    return -2.0 * d, -2.0 * o, 2.0 * d


def shifted_profile(wave, gamma, num_cells):
    """phi(x + gamma(x)) on the full grid (zero shift short-circuits)."""
    phi_full = wave.profile.tile(num_cells)
    g = np.asarray(gamma, float)
    if not np.any(g):
        return phi_full
    return compose_shift(phi_full, -g)


def damping_energy(ring_v, gamma, wave, j, phi_ring=None):
    """Modified H^j energy E_j = ||d^j v||^2 - (1/2beta) <J M(phi_ring) d^{j-1} v, d^{j-1} v>."""
    if j not in (1, 2, 3):
        raise ValueError("j must be 1, 2 or 3")
    grid = ring_v.grid
    if phi_ring is None:
        phi_ring = shifted_profile(wave, gamma, grid.num_cells)
    dj = spectral_derivative(ring_v, j)
    djm1 = spectral_derivative(ring_v, j - 1)
    m11, m12, m22 = _jm_matrix_entries(phi_ring.data)
    w0, w1 = djm1.data
    quad = grid.spacing * float((m11 * w0 * w0 + 2.0 * m12 * w0 * w1 + m22 * w1 * w1).sum())
    return norm(dj, "L2") ** 2 - quad / (2.0 * wave.params.beta)


@dataclass
class EnergyTrack:
    times: np.ndarray
    energies: np.ndarray  # shape (n, 3): E_1..E_3
    derivative_sq: np.ndarray  # shape (n, 3): ||d^j ring_v||^2

    def coercivity_constant(self, ring_l2):
        """Smallest C with ||d^j v||^2 <= 2 E_j + C ||v||_L2^2 along the track."""
        ring_l2 = np.asarray(ring_l2, float)
        c = 0.0
        for i in range(len(self.times)):
            if ring_l2[i] <= 1e-300:
                continue
            for j in range(3):
                gap = self.derivative_sq[i, j] - 2.0 * self.energies[i, j]
                c = max(c, gap / ring_l2[i] ** 2)
        return c


def energy_track(times, ring_fields, gammas, wave):
    """EnergyTrack out of forward-modulated snapshots and gamma snapshots."""
    n = len(times)
    energies = np.zeros((n, 3))
    deriv = np.zeros((n, 3))
    for i in range(n):
        rv = ring_fields[i]
        phi_ring = shifted_profile(wave, gammas[i], rv.grid.num_cells)
        for j in (1, 2, 3):
            energies[i, j - 1] = damping_energy(rv, gammas[i], wave, j, phi_ring=phi_ring)
            deriv[i, j - 1] = norm(spectral_derivative(rv, j), "L2") ** 2
    return EnergyTrack(times=np.asarray(times, float), energies=energies, derivative_sq=deriv)


@dataclass
class DampingReport:
    c_fit: float
    tightest_time: float
    structural_failure: bool
    num_checked: int

    def to_dict(self):
        return {
            "c_fit": self.c_fit,
            "tightest_time": self.tightest_time,
            "structural_failure": self.structural_failure,
            "num_checked": self.num_checked,
        }


def verify_damping_inequality(
    times, ring_h3, ring_l2, gamma_x_h4, gamma_t_h3, v0_h3, valid_mask=None, c_limit=1e6
):
    """Fit the smallest C in the integrated damping inequality

        ||v(t)||_H3^2 <= C * (e^{-t} ||v0||_H3^2 + ||v(t)||_L2^2
                              + int_0^t e^{-(t-s)} (||v||_L2^2 + ||g_x||_H4^2
                                                    + ||g_t||_H3^2) ds).
    """
    times = np.asarray(times, float)
    ring_h3 = np.asarray(ring_h3, float)
    ring_l2 = np.asarray(ring_l2, float)
    src = ring_l2**2 + np.asarray(gamma_x_h4, float) ** 2 + np.asarray(gamma_t_h3, float) ** 2
    n = times.size
    integral = np.zeros(n)
    for i in range(1, n):
        dt = times[i] - times[i - 1]
        integral[i] = np.exp(-dt) * integral[i - 1] + 0.5 * dt * (
            np.exp(-dt) * src[i - 1] + src[i]
        )
    keep = np.ones(n, bool) if valid_mask is None else np.asarray(valid_mask, bool)
    c_fit = 0.0
    tightest = times[0]
    checked = 0
    for i in range(n):
        if not keep[i]:
            continue
        lhs = ring_h3[i] ** 2
        rhs = np.exp(-times[i]) * v0_h3**2 + ring_l2[i] ** 2 + integral[i]
        if lhs <= 0:
            checked += 1
            continue
        if rhs <= 0:
            return DampingReport(np.inf, float(times[i]), True, checked)
        checked += 1
        ratio = lhs / rhs
        if ratio > c_fit:
            c_fit = ratio
            tightest = times[i]
    return DampingReport(
        c_fit=float(c_fit),
        tightest_time=float(tightest),
        structural_failure=bool(c_fit > c_limit),
        num_checked=checked,
    )


@dataclass
class RelateReport:
    c_ring_by_hat: float  # ||ring_v||_L2 <= C (||hat_v||_L2 + ||g_x||_L2)
    c_hat_by_ring: float  # ||hat_v||_H3 <= C (||ring_v||_H3 + ||g_x||_H3)
    c_linf: float  # ||ring_v||_Linf <= C (||hat_v||_Linf + ||g_x||_Linf)
    excluded: list = field(default_factory=list)

    def to_dict(self):
        return {
            "c_ring_by_hat": self.c_ring_by_hat,
            "c_hat_by_ring": self.c_hat_by_ring,
            "c_linf": self.c_linf,
            "excluded": self.excluded,
        }


def relate_check(snapshots):
    """Per-snapshot ratio fit of the three forward/inverse relating bounds.

    snapshots: iterable of dicts with keys t, ring_l2, ring_h3, ring_linf,
    hat_l2, hat_h3, hat_linf, gx_l2, gx_h3, gx_linf. Snapshots violating the
    hypothesis ||g_x||_Linf <= 1/2 are excluded and logged.
    """
    c1 = c2 = c3 = 0.0
    excluded = []
    for s in snapshots:
        if s["gx_linf"] > 0.5:
            excluded.append((s["t"], "gamma_x Linf hypothesis violated"))
            continue
        d1 = s["hat_l2"] + s["gx_l2"]
        d2 = s["ring_h3"] + s["gx_h3"]
        d3 = s["hat_linf"] + s["gx_linf"]
        if d1 > 1e-300:
            c1 = max(c1, s["ring_l2"] / d1)
        if d2 > 1e-300:
            c2 = max(c2, s["hat_h3"] / d2)
        if d3 > 1e-300:
            c3 = max(c3, s["ring_linf"] / d3)
    return RelateReport(c_ring_by_hat=c1, c_hat_by_ring=c2, c_linf=c3, excluded=excluded)


@dataclass
class TemplateTrack:
    times: np.ndarray
    eta: np.ndarray


def template_eta(times, ring_h3, gamma_x_h4, gamma_t_h3, gamma_l2):
    """Running supremum of the weighted iteration template

        (1+s)^{1/2} (||ring_v(s)||_H3 + ||(g_x, g_s)(s)||_{H4 x H3}) + ||g(s)||_L2.
    """
    times = np.asarray(times, float)
    pair = np.sqrt(np.asarray(gamma_x_h4, float) ** 2 + np.asarray(gamma_t_h3, float) ** 2)
    pointwise = np.sqrt(1.0 + times) * (np.asarray(ring_h3, float) + pair) + np.asarray(
        gamma_l2, float
    )
    return TemplateTrack(times=times, eta=np.maximum.accumulate(pointwise))
