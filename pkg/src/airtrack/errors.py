"""Exception types shared across the package.

The CLI maps these onto exit codes, so keep the hierarchy shallow.
"""


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


class VolumeFormatError(ValueError):
    """MetaImage header or raw payload could not be interpreted."""


class NumericalError(ArithmeticError):
    """A covariance or Hessian was too ill-conditioned to continue."""


class IsotropicPointError(NumericalError):
    """Hessian at a point has no preferred direction."""
