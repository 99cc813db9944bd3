"""Spectral representation of real fields on a periodic torus.

Fields live on an n-by-n grid over [0, l)^2 and are stored as rfft2
coefficients scaled to approximate the continuum transform

    g_hat(xi) = (2 pi)^(-1) * integral e^(-i x.xi) g(x) dx,

i.e. ``coeffs = (dx^2 / 2 pi) * rfft2(g)``.  With this scaling the
transform is unitary: the physical L2 norm equals the spectral L2 norm
(both as integrals, not plain sums).  Wavevectors are integer multiples
of k_min = 2 pi / l; axis 0 of the arrays is the x1 (zonal) direction,
axis 1 the x2 direction reduced to its non-negative half by rfft2.

All operations are pure: they return new fields and never mutate their
inputs.  The 2D perpendicular is fixed globally as (a, b)^perp = (-b, a);
the scalar curl below is oriented to match, so that the Biot-Savart
inversion is a right inverse of ``curl``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Union

import numpy as np
import scipy.fft as sfft

from .errors import ConfigError, MultiplierError, ZeroModeError

__all__ = [
    "GridSpec",
    "SpectralField",
    "VelocityField",
    "apply_multiplier",
    "biot_savart",
    "curl",
    "l1_semigroup",
    "transport_nonlinearity",
    "read_snapshot",
    "write_snapshot",
]

_SNAPSHOT_MAGIC = b"BPF1"

SymbolLike = Union[np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class GridSpec:
    """Periodic grid: n points per axis on a torus of side l.

    ``dealias_fraction`` is the retained fraction of the Nyquist
    wavenumber per axis (2/3 rule by default); ``k_min = 2 pi / l`` is
    the smallest nonzero wavenumber magnitude.
    """

    n: int
    l: float = 64.0
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.n < 16 or (self.n & (self.n - 1)) != 0:
            raise ConfigError(f"n must be a power of two >= 16, got {self.n}")
        if not self.l > 0:
            raise ConfigError(f"torus side must be positive, got {self.l}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ConfigError(
                f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction}"
            )

    @property
    def dx(self) -> float:
        return self.l / self.n

    @property
    def k_min(self) -> float:
        return 2.0 * np.pi / self.l

    @property
    def nyquist(self) -> float:
        return np.pi * self.n / self.l

    @property
    def spectral_shape(self) -> tuple[int, int]:
        return (self.n, self.n // 2 + 1)

    @cached_property
    def x(self) -> np.ndarray:
        """Physical coordinates along one axis, shape (n,)."""
        return self.dx * np.arange(self.n)

    @property
    def center(self) -> float:
        return 0.5 * self.l

    @cached_property
    def kx(self) -> np.ndarray:
        """Wavenumber along axis 0 (full range), shape (n, 1)."""
        out = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)[:, None]
        out.flags.writeable = False
        return out

    @cached_property
    def ky(self) -> np.ndarray:
        """Wavenumber along axis 1 (non-negative half), shape (1, n//2+1)."""
        out = 2.0 * np.pi * np.fft.rfftfreq(self.n, d=self.dx)[None, :]
        out.flags.writeable = False
        return out

    @cached_property
    def k_sq(self) -> np.ndarray:
        out = self.kx**2 + self.ky**2
        out.flags.writeable = False
        return out

    @cached_property
    def k_mag(self) -> np.ndarray:
        out = np.sqrt(self.k_sq)
        out.flags.writeable = False
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.dealias_fraction * self.nyquist
        out = (np.abs(self.kx) <= cut) & (np.abs(self.ky) <= cut)
        out.flags.writeable = False
        return out

    @cached_property
    def mode_weight(self) -> np.ndarray:
        """Multiplicity of each stored rfft2 mode in the full plane."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        out = np.broadcast_to(w[None, :], self.spectral_shape)
        return out

    @property
    def retained_modes_per_axis(self) -> int:
        cut = self.dealias_fraction * self.nyquist
        k1d = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        return int(np.count_nonzero(np.abs(k1d) <= cut))

    @property
    def norm_constant(self) -> float:
        """Forward transform constant: coeffs = norm_constant * rfft2(g)."""
        return self.dx**2 / (2.0 * np.pi)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SpectralField:
    """Complex rfft2 coefficients of a real scalar field."""

    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != self.grid.spectral_shape:
            raise ConfigError(
                f"coefficient shape {self.coeffs.shape} does not match grid "
                f"{self.grid.spectral_shape}"
            )
        object.__setattr__(self, "coeffs", _freeze(np.asarray(self.coeffs, complex)))

    # -- constructors -------------------------------------------------
    @classmethod
    def from_physical(cls, grid: GridSpec, values: np.ndarray) -> "SpectralField":
        values = np.asarray(values, float)
        if values.shape != (grid.n, grid.n):
            raise ConfigError(
                f"physical shape {values.shape} does not match grid ({grid.n}, {grid.n})"
            )
        return cls(grid, grid.norm_constant * sfft.rfft2(values))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SpectralField":
        return cls(grid, np.zeros(grid.spectral_shape, complex))

    # -- basic accessors ----------------------------------------------
    @property
    def zero_mode(self) -> complex:
        return complex(self.coeffs[0, 0])

    def to_physical(self) -> np.ndarray:
        return sfft.irfft2(self.coeffs / self.grid.norm_constant, s=(self.grid.n, self.grid.n))

    # -- norms ---------------------------------------------------------
    def l2(self) -> float:
        """L2 norm computed on the spectral side (Parseval)."""
        g = self.grid
        total = np.sum(g.mode_weight * (self.coeffs.real**2 + self.coeffs.imag**2))
        return float(g.k_min * np.sqrt(total))

    def l2_physical(self) -> float:
        v = self.to_physical()
        return float(self.grid.dx * np.sqrt(np.sum(v * v)))

    def linf(self) -> float:
        return float(np.max(np.abs(self.to_physical())))

    def sobolev(self, n_index: float) -> float:
        if n_index < 0:
            raise ConfigError(f"Sobolev index must be >= 0, got {n_index}")
        g = self.grid
        w = (1.0 + g.k_sq) ** n_index
        total = np.sum(g.mode_weight * w * (self.coeffs.real**2 + self.coeffs.imag**2))
        return float(g.k_min * np.sqrt(total))

    def l1_physical(self) -> float:
        return float(self.grid.dx**2 * np.sum(np.abs(self.to_physical())))

    # -- algebra --------------------------------------------------------
    def _like(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, coeffs)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check_same_grid(other)
        return self._like(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check_same_grid(other)
        return self._like(self.coeffs - other.coeffs)

    def __mul__(self, c: float) -> "SpectralField":
        return self._like(self.coeffs * c)

    __rmul__ = __mul__

    def _check_same_grid(self, other: "SpectralField") -> None:
        if other.grid != self.grid:
            raise ConfigError("fields live on different grids")

    # -- diagnostics -----------------------------------------------------
    def conjugate_symmetry_defect(self) -> float:
        """Relative defect of coeff(-xi) = conj(coeff(xi)).

        The rfft2 layout enforces symmetry across the stored half-plane;
        the only representable asymmetry sits on the self-conjugate
        columns ky = 0 and ky = Nyquist, which are checked here.
        """
        scale = float(np.max(np.abs(self.coeffs)))
        if scale == 0.0:
            return 0.0
        defect = 0.0
        for col in (0, self.grid.n // 2):
            line = self.coeffs[:, col]
            mirrored = np.conj(np.roll(line[::-1], 1))
            defect = max(defect, float(np.max(np.abs(line - mirrored))))
        return defect / scale

    def tail_mass(self) -> float:
        """Fraction of L2 mass outside the centered square of side l/2."""
        v = self.to_physical()
        g = self.grid
        inside = np.abs(g.x - g.center) <= 0.25 * g.l
        mask = inside[:, None] & inside[None, :]
        total = float(np.sum(v * v))
        if total == 0.0:
            return 0.0
        return float(np.sum(v[~mask] ** 2) / total)


@dataclass(frozen=True)
class VelocityField:
    """Divergence-free velocity given by its two spectral components."""

    u1: SpectralField
    u2: SpectralField

    @property
    def grid(self) -> GridSpec:
        return self.u1.grid

    def l2(self) -> float:
        return float(np.hypot(self.u1.l2(), self.u2.l2()))

    def max_speed(self) -> float:
        p1 = self.u1.to_physical()
        p2 = self.u2.to_physical()
        return float(np.sqrt(np.max(p1 * p1 + p2 * p2)))

    def divergence_defect(self) -> float:
        """max |xi . u_hat(xi)| normalized by the largest mode amplitude."""
        g = self.grid
        div = g.kx * self.u1.coeffs + g.ky * self.u2.coeffs
        scale = float(
            np.max(g.k_mag * np.hypot(np.abs(self.u1.coeffs), np.abs(self.u2.coeffs)))
        )
        if scale == 0.0:
            return 0.0
        return float(np.max(np.abs(div))) / scale

    def linf_gradient(self) -> float:
        """sup-norm of the velocity gradient matrix, max over entries."""
        g = self.grid
        worst = 0.0
        for comp in (self.u1, self.u2):
            for kvec in (g.kx, g.ky):
                d = sfft.irfft2(
                    1j * kvec * comp.coeffs / g.norm_constant, s=(g.n, g.n)
                )
                worst = max(worst, float(np.max(np.abs(d))))
        return worst


# -- multipliers ---------------------------------------------------------


def _require_mean_zero(g: SpectralField, what: str) -> None:
    scale = max(g.l2(), 1e-300)
    if abs(g.zero_mode) > 1e-12 * scale:
        raise ZeroModeError(
            f"{what} requires a mean-zero field; zero mode is {g.zero_mode:g} "
            f"(relative {abs(g.zero_mode) / scale:.3e})"
        )


def apply_multiplier(g: SpectralField, symbol: SymbolLike) -> SpectralField:
    """Multiply each coefficient by symbol(xi).

    ``symbol`` is either a precomputed array broadcastable to the
    spectral shape or a callable of the kx, ky wavenumber arrays.  A
    non-finite symbol value at a retained nonzero mode raises
    :class:`MultiplierError` naming the mode; at xi = 0 a non-finite
    value is replaced by 0 (the convention for singular multipliers).
    """
    grid = g.grid
    if callable(symbol):
        sym = np.asarray(symbol(grid.kx, grid.ky), complex)
    else:
        sym = np.asarray(symbol, complex)
    sym = np.broadcast_to(sym, grid.spectral_shape).copy()
    if not np.isfinite(sym[0, 0]):
        sym[0, 0] = 0.0
    bad = ~np.isfinite(sym) & grid.dealias_mask
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise MultiplierError(float(grid.kx[i, 0]), float(grid.ky[0, j]))
    sym[~np.isfinite(sym)] = 0.0
    return SpectralField(grid, sym * g.coeffs)


def _inverse_ksq(grid: GridSpec) -> np.ndarray:
    inv = np.zeros(grid.spectral_shape)
    np.divide(1.0, grid.k_sq, out=inv, where=grid.k_sq > 0)
    return inv


def biot_savart(omega: SpectralField) -> VelocityField:
    """Velocity u = grad^perp (-Delta)^(-1) omega.

    In Fourier variables u_hat(xi) = i (-xi2, xi1) |xi|^(-2) omega_hat(xi)
    with u_hat(0) = 0.  Requires a mean-zero vorticity.
    """
    _require_mean_zero(omega, "biot_savart")
    grid = omega.grid
    inv = _inverse_ksq(grid)
    u1 = SpectralField(grid, -1j * grid.ky * inv * omega.coeffs)
    u2 = SpectralField(grid, 1j * grid.kx * inv * omega.coeffs)
    return VelocityField(u1, u2)


def curl(u: VelocityField) -> SpectralField:
    """Scalar vorticity of a velocity field.

    Oriented to pair with the global (a,b)^perp = (-b, a) convention, so
    curl(biot_savart(omega)) = omega on mean-zero fields.
    """
    g = u.grid
    return SpectralField(g, 1j * g.ky * u.u1.coeffs - 1j * g.kx * u.u2.coeffs)


def l1_semigroup(g: SpectralField, t: float) -> SpectralField:
    """Exact linear flow e^(t L1), L1 = d_x1 / Laplacian.

    Mode-by-mode rotation by exp(-i t xi1 / |xi|^2); exactly unitary, so
    every Sobolev norm is preserved.
    """
    if not np.isfinite(t):
        raise ConfigError(f"time must be finite, got {t}")
    _require_mean_zero(g, "l1_semigroup")
    grid = g.grid
    phase = grid.kx * _inverse_ksq(grid)
    return SpectralField(grid, np.exp(-1j * t * phase) * g.coeffs)


def dispersion_phase(grid: GridSpec, t: float) -> np.ndarray:
    """Multiplier array of e^(t L1) on the grid (1 at xi = 0)."""
    return np.exp(-1j * t * grid.kx * _inverse_ksq(grid))


def transport_nonlinearity(omega: SpectralField) -> SpectralField:
    """Dealiased spectral form of -u . grad omega with u = biot_savart(omega).

    The result is exactly mean-zero (the integral of u . grad omega
    vanishes for divergence-free u).
    """
    out, _ = transport_nonlinearity_with_speed(omega)
    return out


def transport_nonlinearity_with_speed(
    omega: SpectralField,
) -> tuple[SpectralField, float]:
    """Like :func:`transport_nonlinearity` but also returns max |u|."""
    _require_mean_zero(omega, "transport_nonlinearity")
    grid = omega.grid
    if grid.retained_modes_per_axis < 8:
        raise ConfigError(
            f"dealiasing retains only {grid.retained_modes_per_axis} modes per "
            "axis (< 8); increase n or dealias_fraction"
        )
    inv = _inverse_ksq(grid)
    w = omega.coeffs
    stack = np.stack(
        [
            -1j * grid.ky * inv * w,  # u1
            1j * grid.kx * inv * w,  # u2
            1j * grid.kx * w,  # d1 omega
            1j * grid.ky * w,  # d2 omega
        ]
    )
    phys = sfft.irfft2(stack / grid.norm_constant, s=(grid.n, grid.n), axes=(-2, -1))
    umax = float(np.sqrt(np.max(phys[0] ** 2 + phys[1] ** 2)))
    adv = phys[0] * phys[2] + phys[1] * phys[3]
    coeffs = -grid.norm_constant * sfft.rfft2(adv)
    coeffs *= grid.dealias_mask
    coeffs[0, 0] = 0.0
    return SpectralField(grid, coeffs), umax


# -- snapshot file format -------------------------------------------------


def write_snapshot(field: SpectralField, path: str | Path) -> None:
    """Write magic 'BPF1', n and l (64-bit LE), then row-major float64 samples."""
    path = Path(path)
    values = field.to_physical()
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_MAGIC)
        fh.write(struct.pack("<q", field.grid.n))
        fh.write(struct.pack("<d", field.grid.l))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_snapshot(path: str | Path, dealias_fraction: float = 2.0 / 3.0) -> SpectralField:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _SNAPSHOT_MAGIC:
            raise ConfigError(f"{path}: bad magic {magic!r}, expected {_SNAPSHOT_MAGIC!r}")
        (n,) = struct.unpack("<q", fh.read(8))
        (side,) = struct.unpack("<d", fh.read(8))
        data = np.frombuffer(fh.read(8 * n * n), dtype="<f8")
        if data.size != n * n:
            raise ConfigError(f"{path}: truncated snapshot")
    grid = GridSpec(n=int(n), l=float(side), dealias_fraction=dealias_fraction)
    return SpectralField.from_physical(grid, data.reshape(n, n).astype(float))
