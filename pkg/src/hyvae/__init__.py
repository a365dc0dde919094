"""Hierarchical variational autoencoder for univariate time-series forecasting.

The package trains a ladder of latent variables over sliding subsequences,
chains them through a GRU over the whole series, and reads forecasts off
the final latent state. Everything runs on a small float64 tensor core
with reverse-mode automatic differentiation; the elementwise hot loops
have a compiled backend with a pure-NumPy fallback (see `hyvae.backend`).
"""

__version__ = "0.1.0"

from . import backend
from .rng import Rng
from .tensor import DomainError, ShapeError, Tensor

__all__ = [
    "backend",
    "Rng",
    "Tensor",
    "ShapeError",
    "DomainError",
    "__version__",
]
