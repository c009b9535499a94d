"""Quantum trajectories of a system probed through an optical cavity."""

from ._backend import BACKEND
from .params import CavityParams, ParameterError
from .rng import NoiseStream
from .sme import Feedback, NumericalAbort, TrajectoryRecord, initial_state, simulate

__all__ = ["BACKEND", "CavityParams", "ParameterError", "NoiseStream", "Feedback",
           "NumericalAbort", "TrajectoryRecord", "initial_state", "simulate"]
__version__ = "0.1.0"
