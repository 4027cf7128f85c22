"""Social learning under duopoly pricing: stage equilibria, belief dynamics, experiments."""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
from .signals import Family, SignalKind, SignalStructure, classify, make_family, validate  # noqa: E402

__all__ = [
    "BACKEND",
    "Family",
    "SignalKind",
    "SignalStructure",
    "__version__",
    "classify",
    "make_family",
    "validate",
]
