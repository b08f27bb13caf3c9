"""Distribution reconstruction for ODE/SDE parameters with stochastic neural networks."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
