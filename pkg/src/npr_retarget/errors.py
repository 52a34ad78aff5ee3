"""Exception hierarchy shared by the retargeting toolkit.

Pure math helpers in :mod:`npr_retarget.geom` raise plain ``ValueError`` for
domain errors; everything above that layer uses these classes so the CLI can
map failures to exit codes (input/config problems vs numeric failures).
"""


class RetargetError(Exception):
    """Base class for all toolkit errors."""


class ParseError(RetargetError):
    """Malformed input file (motion, command, params, descriptor dump)."""


class ConfigError(RetargetError):
    """Invalid robot or application configuration."""


class ValidationError(RetargetError):
    """Value violates a documented contract (limits, shapes, units)."""


class DegenerateFrameError(RetargetError):
    """Skeleton frame geometry too degenerate to process."""


class NumericError(RetargetError):
    """Non-finite values or numerical divergence during computation."""


class SolverError(NumericError):
    """IK solve failed numerically; message carries diagnostics."""
