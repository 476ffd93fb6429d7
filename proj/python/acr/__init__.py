"""Python bindings for the acr core library."""

from ._acr import *  # noqa: F401,F403
from ._acr import (
    AcrError,
    ContractError,
    DimensionError,
    IoError,
    NumericalError,
    Parameters,
    ResourceError,
    StateError,
    UnsupportedTransformError,
    ViTConfig,
)

__all__ = [name for name in dir() if not name.startswith("_")]
