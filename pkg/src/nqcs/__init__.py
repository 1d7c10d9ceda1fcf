"""Simulation, tradeoff and certification tools for networked quantized control loops."""
from ._accel import NUMBA_ENABLED, backend_name

__version__ = "0.1.0"

__all__ = ["NUMBA_ENABLED", "backend_name", "__version__"]
