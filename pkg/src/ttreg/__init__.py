"""Associative memories as test-time regressors.

Every layer in this package stores key/value pairs by fitting a regression
problem over the pairs it has seen, and answers queries by evaluating the
fitted map.
"""

from ttreg.errors import TTRegError
from ttreg.memory import Backend, FeatureMap, LayerConfig, MemoryState
from ttreg.nonparam import KernelConfig, KernelKind, KVBuffer

__all__ = [
    "Backend",
    "FeatureMap",
    "KVBuffer",
    "KernelConfig",
    "KernelKind",
    "LayerConfig",
    "MemoryState",
    "TTRegError",
]

__version__ = "0.1.0"
