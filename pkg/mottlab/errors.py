from __future__ import annotations


class MottLabError(Exception):
    """Base class for every error raised by mottlab."""


class ConfigError(MottLabError, ValueError):
    """Invalid or infeasible parameters."""


class UsageError(MottLabError, ValueError):
    """An operation was called outside its contract."""


class WindowRangeError(MottLabError, IndexError):
    """An index lies outside an environment window."""


class InsufficientWindowError(MottLabError):
    """A jump row needs sites that the window does not contain."""

    def __init__(self, site: int, required_radius: int) -> None:
        super().__init__(f"insufficient window: site {site} needs radius {required_radius}")
        self.site = int(site)
        self.required_radius = int(required_radius)


class ChainTooSmallError(ConfigError):
    """Truncation radius does not fit in half the torus."""


class NumericError(MottLabError, RuntimeError):
    """A linear solve failed or produced an inadmissible value."""

    def __init__(self, message: str, residual: float = float("nan")) -> None:
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = float(residual)
