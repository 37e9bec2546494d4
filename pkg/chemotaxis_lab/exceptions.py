"""
Exceptions shared by the simulation apps
"""


class SimulationError(Exception):
    """Base class for every failure raised by the solvers and diagnostics"""


class DomainError(SimulationError, ValueError):
    """An argument lies outside the domain where a quantity is defined"""


class DegenerateInputError(SimulationError, ValueError):
    """Input carries no usable information (zero mass, vanishing resultant)"""


class StabilityError(SimulationError):
    """A time step violates the positivity contract of an explicit stage"""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class TruncationError(SimulationError):
    """Mass reached the edge of the truncated blow-up domain"""


class UnsupportedOrderError(SimulationError, ValueError):
    """Requested quadrature order is not tabulated"""


class GridMismatchError(SimulationError, ValueError):
    """Two profiles compared on different grids"""
