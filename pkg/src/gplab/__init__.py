"""Graphon limits of pruning-at-initialization masks and their neural tangent kernels."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from ._accel import backend
from .errors import GplabError
from .numerics import Rng

__all__ = ["GplabError", "Rng", "backend", "__version__"]
