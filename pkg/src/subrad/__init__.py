"""Simulation and analytics toolkit for collective spontaneous emission of
two-level emitter arrays interrupted by local projective measurements."""

from . import analytic, dicke, dynamics, protocols, qops, zeno
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["analytic", "dicke", "dynamics", "protocols", "qops", "zeno",
           "KERNEL_BACKEND", "__version__"]
