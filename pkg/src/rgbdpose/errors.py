"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: ConfigError -> 1, DataError (and
builtin I/O errors) -> 2, StageError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration value or unusable config file."""


class DataError(ValueError):
    """Malformed input data: bad manifest, annotation schema, raster sizes."""


class StageError(RuntimeError):
    """A pipeline stage failed at runtime on otherwise well-formed input."""


class ReachabilityError(ValueError):
    """Inverse-kinematics target outside the reachable annulus."""

    def __init__(self, distance: float, lo: float, hi: float):
        self.distance = distance
        self.lo = lo
        self.hi = hi
        super().__init__(
            f"target at distance {distance:.6g} outside reachable range "
            f"[{lo:.6g}, {hi:.6g}]"
        )


class WristSingularityError(ValueError):
    """Degenerate end-effector orientation: wrist axes aligned, q4/q6 undefined."""
