"""Exception hierarchy shared across the package.

Everything a user can trigger with bad input derives from ``ValueError`` so the
CLI can map it onto exit code 1 without catching programming bugs.
"""


class ShapeError(ValueError):
    """Operand shapes do not conform to an op's rule."""


class DomainError(ValueError):
    """A value lies outside an op's numeric domain (log of <= 0, zero norm)."""


class TapeError(RuntimeError):
    """Misuse of the gradient tape (output not recorded, non-scalar output)."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class InputError(ValueError):
    """Invalid input data (bad clip, bad labels, mismatched lengths)."""


class FormatError(ValueError):
    """Malformed file on disk (manifest, image, checkpoint)."""


class TrainingError(RuntimeError):
    """Numerical failure during optimisation (non-finite gradient)."""


class ProtocolError(ValueError):
    """Evaluation protocol cannot be applied (e.g. LOSO with one subject)."""
