"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
precondition/guard violations exit 3, numerical non-convergence exit 4.
"""

from __future__ import annotations


class BetaplaneError(Exception):
    """Base class for all package errors."""


class ConfigError(BetaplaneError):
    """Bad configuration: unknown keys, unparsable values, invalid grids."""


class GuardError(BetaplaneError):
    """A documented precondition was violated (singular input, bad index...)."""


class ZeroModeError(GuardError):
    """Operation requires a mean-zero field but the zero mode is not zero."""


class MultiplierError(GuardError):
    """A Fourier multiplier is non-finite at a retained mode."""

    def __init__(self, kx: float, ky: float):
        super().__init__(f"multiplier non-finite at retained mode xi=({kx:g}, {ky:g})")
        self.mode = (kx, ky)


class SingularConfigurationError(GuardError):
    """Frequency pair too close to the singular set of the phase."""


class TruncationError(GuardError):
    """Atom scan truncation captured too little of the field's mass."""

    def __init__(self, captured: float, required: float):
        super().__init__(
            f"truncation captured {captured:.12f} of the L2 mass, "
            f"required >= {required:.12f}"
        )
        self.captured = captured
        self.required = required


class CFLError(GuardError):
    """Advective CFL bound violated for the requested time step."""

    def __init__(self, dt: float, dt_max: float, umax: float):
        super().__init__(
            f"dt={dt:g} exceeds the advective CFL bound {dt_max:g} (max|u|={umax:g})"
        )
        self.umax = umax
        self.dt_max = dt_max


class ConvergenceError(BetaplaneError):
    """Quadrature or estimator did not converge under refinement."""

    def __init__(self, message: str, achieved: float | None = None):
        super().__init__(message)
        self.achieved = achieved
