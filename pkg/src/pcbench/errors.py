"""Exception types shared across modules."""


class PCBenchError(Exception):
    """Base class for all package errors."""


class ShapeError(PCBenchError, ValueError):
    """Array shapes or structure do not match what an operation requires."""


class NumericalRankError(PCBenchError, ArithmeticError):
    """A linear system is singular or too ill-conditioned to solve reliably."""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class EvaluationError(PCBenchError, ArithmeticError):
    """An objective produced a non-finite value."""


class OverflowInLayerError(PCBenchError, OverflowError):
    """A forward pass produced a non-finite activity."""

    def __init__(self, layer: int):
        super().__init__(f"non-finite activity at layer {layer}")
        self.layer = layer


class DivergenceError(PCBenchError, ArithmeticError):
    """Iterative inference blew up."""

    def __init__(self, step: int, energy: float):
        super().__init__(f"inference diverged at step {step} (energy {energy:.3e})")
        self.step = step
        self.energy = energy


class UnsupportedSpecError(PCBenchError, ValueError):
    """The network specification is outside an operation's domain."""


class NonFiniteGradientError(PCBenchError, ArithmeticError):
    """An optimiser received a non-finite gradient."""

    def __init__(self, layer: int):
        super().__init__(f"non-finite gradient for layer {layer}")
        self.layer = layer


class FormatError(PCBenchError, ValueError):
    """A data file does not follow its declared binary format."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DegenerateDataWarning(UserWarning):
    """Data is degenerate for the requested analysis (e.g. all-zero targets)."""
