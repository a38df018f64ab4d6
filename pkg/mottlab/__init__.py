"""mottlab package."""

__version__ = "0.1.0"

from .config import RunConfig  # noqa: E402

__all__ = ["RunConfig", "__version__"]
