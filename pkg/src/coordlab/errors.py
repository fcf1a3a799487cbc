"""Exception hierarchy shared by all coordlab modules."""
from __future__ import annotations


class CoordlabError(Exception):
    """Base class for every error raised by the library."""


class AxisError(CoordlabError, KeyError):
    """Unknown, duplicated or mismatched axis names."""

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class ArgumentError(CoordlabError, ValueError):
    """Invalid argument combination (overlapping axis sets, empty sequence, ...)."""


class ZeroEventError(CoordlabError, ValueError):
    """Conditioning on an event of probability zero."""


class DivergenceInfiniteError(CoordlabError, ValueError):
    """KL divergence is infinite because of a support violation.

    Attributes
    ----------
    cell : tuple of int
        First cell (canonical order) where ``p > 0`` and ``q == 0``.
    """

    def __init__(self, cell: tuple[int, ...]):
        self.cell = tuple(int(c) for c in cell)
        super().__init__(f"p has mass on cell {self.cell} where q is zero")


class CapacityError(CoordlabError, MemoryError):
    """A desk-scale cap (cells, memory, enumeration) would be exceeded."""


class ValidationError(CoordlabError, ValueError):
    """Problem document failed validation.

    Attributes
    ----------
    pointer : str
        JSON pointer (RFC 6901) to the offending element.
    """

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        self.message = message
        super().__init__(f"{pointer or '/'}: {message}")


class BandError(CoordlabError, ValueError):
    """Requested leakage lies outside the admissible band ``[low, high]``."""

    def __init__(self, value: float, low: float, high: float):
        self.value, self.low, self.high = value, low, high
        super().__init__(f"target leakage {value:.6g} outside [{low:.6g}, {high:.6g}]")


class SupportError(CoordlabError, ValueError):
    """A quantity requiring full support was given a distribution with zeros."""


class InvariantError(CoordlabError, AssertionError):
    """A finite-length inequality that must always hold was violated (a bug)."""
