"""Exception types shared across the package."""


class HfwavesError(Exception):
    """Base class for all package-specific errors."""


class BoundaryMassError(HfwavesError):
    """Too much of the density sits in the outer shell of the box.

    Signals that the computational box is too small for the field at hand;
    free-space convolutions and dilations are unreliable in that state.
    """

    def __init__(self, fraction, tol):
        self.fraction = float(fraction)
        self.tol = float(tol)
        super().__init__(
            f"boundary shell holds {fraction:.3e} of the mass (tolerance {tol:.1e}); "
            "box too small"
        )


class ZeroMassError(HfwavesError):
    """An operation that divides by the state's mass received a zero state."""


class ConvergenceError(HfwavesError):
    """An iterative routine hit its iteration cap without reaching tolerance."""


class DriftError(HfwavesError):
    """Gradient-flow iterates drift without settling (nonexistence signal)."""


class NoCriticalPointError(HfwavesError):
    """The dilation energy profile is monotone: no critical point exists."""


class HypothesisError(HfwavesError):
    """Arguments fall outside the parameter regime an operation requires."""


class FitError(HfwavesError):
    """A least-squares fit had no usable data window."""


class InsufficientSamplesError(HfwavesError):
    """A trace does not contain enough samples for the requested diagnostic."""


class ConfigError(HfwavesError):
    """A run configuration file or override is invalid."""
