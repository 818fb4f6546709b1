"""Smooth cutoff functions.

The temporal cutoff chi vanishes on [0,1], equals 1 on [2,oo) and transitions
with the classical C-infinity bump quotient; the same step underlies the
frequency cutoff used by the critical-mode propagator and the smoothed cell
indicators of the tooth initial data. All transitions are exactly 0 / exactly 1
outside the transition interval, so supports are exact, not just small.
"""

from __future__ import annotations

import numpy as np

__all__ = ["smooth_step", "smooth_step_derivative", "chi", "chi_prime", "freq_cutoff"]


def _bump(s):
    out = np.zeros_like(s, dtype=float)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_step(s):
    """C-infinity step: 0 for s<=0, 1 for s>=1, monotone in between."""
    s = np.asarray(s, dtype=float)
    a = _bump(s)
    b = _bump(1.0 - s)
    return a / (a + b)


def smooth_step_derivative(s, eps=1e-6):
    """Derivative of smooth_step by central differences (only used for chi')."""
    return (smooth_step(np.asarray(s) + eps) - smooth_step(np.asarray(s) - eps)) / (2 * eps)


def chi(t):
    """Temporal cutoff: chi=0 on [0,1], chi=1 on [2,oo), smooth monotone between."""
    return smooth_step(np.asarray(t, dtype=float) - 1.0)


def chi_prime(t):
    return smooth_step_derivative(np.asarray(t, dtype=float) - 1.0)


def freq_cutoff(xi, xi0):
    """Smooth frequency cutoff rho: 1 for |xi| <= xi0/2, 0 for |xi| >= xi0."""
    r = np.abs(np.asarray(xi, dtype=float)) / float(xi0)
    return 1.0 - smooth_step(2.0 * r - 1.0)
