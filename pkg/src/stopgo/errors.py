"""Exception types shared across the package."""
from __future__ import annotations


class StopgoError(Exception):
    """Base class for all package-specific errors."""


class DataError(StopgoError):
    """Malformed or unusable input data (CLI exit code 2)."""


class MissingColumn(DataError):
    def __init__(self, name: str):
        super().__init__(f"required column missing: {name}")
        self.name = name


class UnparsableField(DataError):
    def __init__(self, row: int, column: str):
        super().__init__(f"unparsable value in data row {row}, column {column}")
        self.row = row
        self.column = column


class EmptyInput(DataError):
    pass


class DuplicateFrame(DataError):
    def __init__(self, vehicle_id: int, frame_id: int):
        super().__init__(f"vehicle {vehicle_id} has duplicate frame {frame_id}")
        self.vehicle_id = vehicle_id
        self.frame_id = frame_id


class EmptySeries(DataError):
    pass


class NonpositiveTimescale(StopgoError):
    pass


class LengthMismatch(DataError):
    pass


class NonpositiveHeadway(DataError):
    pass


class InfeasibleInitialState(StopgoError):
    pass


class NonpositiveEquilibriumHeadway(StopgoError):
    pass


class InfeasibleEquilibrium(StopgoError):
    """No equilibrium headway exists for the requested speed."""


class CollisionDetected(StopgoError):
    """A simulated headway became nonpositive (CLI exit code 3).

    Carries the offending vehicle index and frame plus whatever part of the
    simulation completed, so callers can dump partial trajectories.
    """

    def __init__(self, vehicle_index: int, frame: int, partial=None):
        super().__init__(
            f"collision: vehicle {vehicle_index} headway nonpositive at frame {frame}"
        )
        self.vehicle_index = vehicle_index
        self.frame = frame
        self.partial = partial
