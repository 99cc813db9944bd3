"""Smooth dyadic cutoff system.

The base profile ``phi`` is an even C-infinity function with values in
[0, 1], equal to 1 on [-5/4, 5/4] and supported in [-8/5, 8/5], built
from the standard exp(-1/x) mollified step.  Everything else is derived
from it:

    phi_k(x)    = phi(x / 2^k) - phi(x / 2^(k-1))      (annulus at 2^k)
    phi_le(a)   = phi(x / 2^a)                         (ball, telescoped sum)
    phi_ge(a)   = 1 - phi_le(a - 1)
    phi_band    = sum of phi_k over an integer interval

The same profile drives frequency projections, spatial atoms, kernel
localizations and time-window partitions, so every smooth-cutoff
constant in the package is shared.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "PLATEAU",
    "SUPPORT",
    "phi",
    "phi_k",
    "phi_le",
    "phi_ge",
    "phi_band",
    "support_of_phi_k",
    "support_of_phi_le",
]

PLATEAU = 1.25  # phi == 1 on [-5/4, 5/4]
SUPPORT = 1.6  # phi == 0 outside [-8/5, 8/5]


def _smoothstep(y: np.ndarray) -> np.ndarray:
    """C-infinity transition: 0 for y <= 0, 1 for y >= 1."""
    y = np.asarray(y, float)
    with np.errstate(over="ignore", divide="ignore"):
        a = np.where(y > 0.0, np.exp(-1.0 / np.maximum(y, 1e-300)), 0.0)
        b = np.where(y < 1.0, np.exp(-1.0 / np.maximum(1.0 - y, 1e-300)), 0.0)
    return a / (a + b)


def phi(x) -> np.ndarray:
    """Even bump: 1 on [-5/4, 5/4], 0 outside [-8/5, 8/5], smooth between."""
    r = np.abs(np.asarray(x, float))
    return _smoothstep((SUPPORT - r) / (SUPPORT - PLATEAU))


def phi_le(x, a: float) -> np.ndarray:
    """Ball cutoff phi(<= a): the telescoped sum of phi_k for k <= a."""
    return phi(np.asarray(x, float) * 2.0 ** (-a))


def phi_k(x, k: float) -> np.ndarray:
    """Annulus cutoff at dyadic level k."""
    return phi_le(x, k) - phi_le(x, k - 1)


def phi_ge(x, a: float) -> np.ndarray:
    """Tail cutoff phi(>= a) = 1 - phi(<= a-1)."""
    return 1.0 - phi_le(x, a - 1)


def phi_band(x, lo: int, hi: int) -> np.ndarray:
    """Sum of phi_k over integer k in [lo, hi] (telescoping difference)."""
    if hi < lo:
        return np.zeros_like(np.asarray(x, float))
    return phi_le(x, hi) - phi_le(x, lo - 1)


def support_of_phi_k(k: float) -> tuple[float, float]:
    """Interval of |x| outside of which phi_k vanishes."""
    return (PLATEAU / 2.0 * 2.0**k, SUPPORT * 2.0**k)


def support_of_phi_le(a: float) -> float:
    """phi(<= a) vanishes for |x| above this radius."""
    return SUPPORT * 2.0**a
