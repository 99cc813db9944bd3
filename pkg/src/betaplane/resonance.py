"""Closed-form resonance geometry of the quadratic interaction.

Everything here is a pure function of a frequency pair (xi, eta) in
R^2 x R^2: the oscillation phase

    Phi(xi, eta) = xi1/|xi|^2 - (xi1-eta1)/|xi-eta|^2 - eta1/|eta|^2,

its gradients (with closed-form magnitudes), the original interaction
symbol xi.eta^perp / |eta|^2, its symmetrization that vanishes to
second order on the space-resonant set {xi = 2 eta}, and the curvature
quantities whose algebraic identity

    Gamma/2 - 2 Theta = 3 (xi1 - eta1)

is used as an exactness cross-check on the finite-difference mixed
Hessian.  The perpendicular is (a, b)^perp = (-b, a) throughout; all
magnitude-level results are orientation independent.

Functions are vectorized over leading axes: inputs of shape (..., 2)
produce outputs of shape (...).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import SingularConfigurationError

__all__ = [
    "FreqPair",
    "GUARD",
    "NullOrderScan",
    "ResonanceDiagnostics",
    "curvature",
    "grad_check",
    "grad_eta_phi",
    "grad_xi_phi",
    "grad_eta_mag",
    "grad_xi_mag",
    "m_orig",
    "m_sym",
    "null_order_scan",
    "phase",
    "write_scan_csv",
]

GUARD = 1e-9


def _norm_sq(v: np.ndarray) -> np.ndarray:
    return v[..., 0] ** 2 + v[..., 1] ** 2


def _perp(v: np.ndarray) -> np.ndarray:
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _check_guards(xi: np.ndarray, eta: np.ndarray, curvature_guards: bool) -> None:
    mags = [_norm_sq(xi), _norm_sq(eta), _norm_sq(xi - eta)]
    if curvature_guards:
        mags += [_norm_sq(xi - 2.0 * eta), _norm_sq(eta - 2.0 * xi)]
    for m in mags:
        if np.any(m < GUARD**2):
            raise SingularConfigurationError(
                "frequency pair within guard distance of the singular set"
            )


@dataclass(frozen=True)
class FreqPair:
    """A guarded (xi, eta) pair away from the singular set."""

    xi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, float)
        eta = np.asarray(self.eta, float)
        if xi.shape[-1] != 2 or eta.shape[-1] != 2:
            raise ValueError("xi and eta must have trailing dimension 2")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "eta", eta)
        _check_guards(xi, eta, curvature_guards=False)


def _l(v: np.ndarray) -> np.ndarray:
    return v[..., 0] / _norm_sq(v)


def _grad_l(v: np.ndarray) -> np.ndarray:
    """Gradient of L(v) = v1 / |v|^2."""
    n2 = _norm_sq(v)
    n4 = n2 * n2
    return np.stack(
        [(v[..., 1] ** 2 - v[..., 0] ** 2) / n4, -2.0 * v[..., 0] * v[..., 1] / n4],
        axis=-1,
    )


def phase(xi, eta) -> np.ndarray:
    """Phi(xi, eta) = L(xi) - L(xi - eta) - L(eta)."""
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    _check_guards(xi, eta, curvature_guards=False)
    return _l(xi) - _l(xi - eta) - _l(eta)


def grad_xi_phi(xi, eta) -> np.ndarray:
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    return _grad_l(xi) - _grad_l(xi - eta)


def grad_eta_phi(xi, eta) -> np.ndarray:
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    return _grad_l(xi - eta) - _grad_l(eta)


def grad_xi_mag(xi, eta) -> np.ndarray:
    """Closed form |grad_xi Phi| = |eta| |eta - 2 xi| / (|xi-eta|^2 |xi|^2)."""
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    return np.sqrt(_norm_sq(eta) * _norm_sq(eta - 2.0 * xi)) / (
        _norm_sq(xi - eta) * _norm_sq(xi)
    )


def grad_eta_mag(xi, eta) -> np.ndarray:
    """Closed form |grad_eta Phi| = |xi| |xi - 2 eta| / (|xi-eta|^2 |eta|^2)."""
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    return np.sqrt(_norm_sq(xi) * _norm_sq(xi - 2.0 * eta)) / (
        _norm_sq(xi - eta) * _norm_sq(eta)
    )


def m_orig(xi, eta) -> np.ndarray:
    """Unsymmetrized interaction symbol xi . eta^perp / |eta|^2."""
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    cross = xi[..., 1] * eta[..., 0] - xi[..., 0] * eta[..., 1]
    return cross / _norm_sq(eta)


def m_sym(xi, eta) -> np.ndarray:
    """Symmetrized symbol; vanishes to second order on xi = 2 eta."""
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    cross = xi[..., 1] * eta[..., 0] - xi[..., 0] * eta[..., 1]
    radial = np.sum(xi * (xi - 2.0 * eta), axis=-1)
    return 0.5 * cross * radial / (_norm_sq(eta) * _norm_sq(xi - eta))


@dataclass(frozen=True)
class NullOrderScan:
    """Fitted vanishing order of a symbol approaching xi = 2 eta."""

    eps: np.ndarray
    sup_values: np.ndarray
    slope: float
    degenerate: bool


_SYMBOLS = {
    "sym": m_sym,
    "orig": m_orig,
    "const": lambda xi, eta: np.ones(np.broadcast(xi[..., 0], eta[..., 0]).shape),
}


def null_order_scan(
    eta,
    direction=None,
    eps_list=None,
    symbol: Literal["sym", "orig", "const"] = "sym",
    n_directions: int = 32,
) -> NullOrderScan:
    """Probe |symbol(2 eta + eps d, eta)| along shrinking offsets.

    For each eps the supremum over a fan of unit directions (or the
    single given direction) is recorded; the returned slope is the
    least-squares fit of log sup vs log eps.  eps values must span at
    least two decades inside (0, 0.1].
    """
    eta = np.asarray(eta, float)
    if eps_list is None:
        eps_list = np.geomspace(1e-4, 1e-1, 13)
    eps = np.asarray(eps_list, float)
    if eps.min() <= 0 or eps.max() > 0.1 or eps.max() / eps.min() < 99.0:
        raise SingularConfigurationError(
            "eps_list must span at least two decades within (0, 0.1]"
        )
    if direction is None:
        ang = np.linspace(0.0, 2.0 * np.pi, n_directions, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    else:
        d = np.asarray(direction, float)
        dirs = (d / np.hypot(d[0], d[1]))[None, :]
    fn = _SYMBOLS[symbol]
    sup = np.empty(eps.shape)
    for i, e in enumerate(eps):
        xi = 2.0 * eta[None, :] + e * dirs
        sup[i] = np.max(np.abs(fn(xi, np.broadcast_to(eta, xi.shape))))
    degenerate = bool(np.all(sup < 1e-14))
    if degenerate:
        slope = float("nan")
    else:
        slope = float(np.polyfit(np.log(eps), np.log(np.maximum(sup, 1e-300)), 1)[0])
    return NullOrderScan(eps=eps, sup_values=sup, slope=slope, degenerate=degenerate)


@dataclass(frozen=True)
class ResonanceDiagnostics:
    """Per-pair record of the phase, symbols and curvature quantities."""

    xi: np.ndarray
    eta: np.ndarray
    phi: np.ndarray
    grad_xi: np.ndarray
    grad_eta: np.ndarray
    m_orig: np.ndarray
    m_sym: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    upsilon: np.ndarray
    identity_residual: np.ndarray


def _mixed_hessian_fd(xi: np.ndarray, eta: np.ndarray, rel_step: float) -> np.ndarray:
    """d^2 Phi / dxi_a deta_b by central differences of the analytic grad_eta."""
    scale = np.maximum(np.sqrt(np.maximum(_norm_sq(xi), _norm_sq(eta))), 1.0)
    h = rel_step * scale
    out = np.empty(xi.shape[:-1] + (2, 2))
    for a in range(2):
        step = np.zeros_like(xi)
        step[..., a] = h
        gp = grad_eta_phi(xi + step, eta)
        gm = grad_eta_phi(xi - step, eta)
        out[..., a, :] = (gp - gm) / (2.0 * h)[..., None]
    return out


def curvature(xi, eta, rel_step: float = 1e-6) -> ResonanceDiagnostics:
    """Curvature quantities and the residual of the algebraic identity.

    Theta = Phi |xi-eta|^2; Upsilon is the mixed Hessian of Phi
    contracted with the unit perpendiculars of its two gradients (the
    Hessian taken by finite differences of the analytic gradients at
    relative step ``rel_step``); Gamma = Upsilon |xi-eta|^8
    |grad_xi Phi| |grad_eta Phi|; and

        identity_residual = | Gamma/2 - 2 Theta - 3 (xi1 - eta1) |.
    """
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    _check_guards(xi, eta, curvature_guards=True)
    phi = _l(xi) - _l(xi - eta) - _l(eta)
    gx = grad_xi_phi(xi, eta)
    ge = grad_eta_phi(xi, eta)
    gx_mag = np.sqrt(_norm_sq(gx))
    ge_mag = np.sqrt(_norm_sq(ge))
    hess = _mixed_hessian_fd(xi, eta, rel_step)
    ex = _perp(gx) / gx_mag[..., None]
    ee = _perp(ge) / ge_mag[..., None]
    upsilon = np.einsum("...a,...ab,...b->...", ex, hess, ee)
    sep = _norm_sq(xi - eta)
    theta = phi * sep
    gamma = upsilon * sep**4 * gx_mag * ge_mag
    residual = np.abs(0.5 * gamma - 2.0 * theta - 3.0 * (xi[..., 0] - eta[..., 0]))
    return ResonanceDiagnostics(
        xi=xi,
        eta=eta,
        phi=phi,
        grad_xi=gx,
        grad_eta=ge,
        m_orig=m_orig(xi, eta),
        m_sym=m_sym(xi, eta),
        gamma=gamma,
        theta=theta,
        upsilon=upsilon,
        identity_residual=residual,
    )


def grad_check(xi, eta, rel_step: float = 1e-6) -> float:
    """Worst relative error among gradient cross-checks.

    Compares analytic gradients of Phi against central finite
    differences of Phi itself and against the closed-form magnitudes.
    """
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    _check_guards(xi, eta, curvature_guards=False)
    gx = grad_xi_phi(xi, eta)
    ge = grad_eta_phi(xi, eta)
    scale = np.maximum(np.sqrt(np.maximum(_norm_sq(xi), _norm_sq(eta))), 1.0)
    h = rel_step * scale

    worst = 0.0
    for a in range(2):
        step = np.zeros_like(xi)
        step[..., a] = h
        fd_x = (phase(xi + step, eta) - phase(xi - step, eta)) / (2.0 * h)
        fd_e = (phase(xi, eta + step) - phase(xi, eta - step)) / (2.0 * h)
        ref_x = np.maximum(np.abs(gx[..., a]), np.sqrt(_norm_sq(gx)))
        ref_e = np.maximum(np.abs(ge[..., a]), np.sqrt(_norm_sq(ge)))
        worst = max(worst, float(np.max(np.abs(fd_x - gx[..., a]) / ref_x)))
        worst = max(worst, float(np.max(np.abs(fd_e - ge[..., a]) / ref_e)))

    mag_x = np.sqrt(_norm_sq(gx))
    mag_e = np.sqrt(_norm_sq(ge))
    worst = max(
        worst, float(np.max(np.abs(mag_x - grad_xi_mag(xi, eta)) / mag_x))
    )
    worst = max(
        worst, float(np.max(np.abs(mag_e - grad_eta_mag(xi, eta)) / mag_e))
    )
    return worst


_SCAN_COLUMNS = [
    "xi1",
    "xi2",
    "eta1",
    "eta2",
    "phi",
    "grad_xi_mag",
    "grad_eta_mag",
    "m_orig",
    "m_sym",
    "gamma",
    "theta",
    "upsilon",
    "identity_residual",
]


def write_scan_csv(diag: ResonanceDiagnostics, path: str | Path) -> None:
    """One row per sampled pair, fixed column order."""
    xi = diag.xi.reshape(-1, 2)
    eta = diag.eta.reshape(-1, 2)
    cols = [
        xi[:, 0],
        xi[:, 1],
        eta[:, 0],
        eta[:, 1],
        diag.phi.reshape(-1),
        np.sqrt(_norm_sq(diag.grad_xi)).reshape(-1),
        np.sqrt(_norm_sq(diag.grad_eta)).reshape(-1),
        diag.m_orig.reshape(-1),
        diag.m_sym.reshape(-1),
        diag.gamma.reshape(-1),
        diag.theta.reshape(-1),
        diag.upsilon.reshape(-1),
        diag.identity_residual.reshape(-1),
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_SCAN_COLUMNS)
        for row in zip(*cols):
            w.writerow([f"{v:.17g}" for v in row])
