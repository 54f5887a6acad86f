"""Lyapunov function synthesis for black-box continuous systems."""
from .cegis import CegisConfig, run
from .kernels import BACKEND

__all__ = ["CegisConfig", "run", "BACKEND"]
__version__ = "0.1.0"
