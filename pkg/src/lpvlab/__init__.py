"""Lyapunov stability and L2-gain analysis of LPV embeddings of nonlinear closed loops."""

from .lpvmodel import (AffineLpvSS, Box, NlClosedLoop, SchedulingMap, TransferFunction, augment_weights,
                       interconnect, substitute_scheduling)
from .sdp import LmiBlock, LmiProblem, SdpSolution, Status, solve

__version__ = "0.1.0"

__all__ = [
    "AffineLpvSS",
    "Box",
    "NlClosedLoop",
    "SchedulingMap",
    "TransferFunction",
    "augment_weights",
    "interconnect",
    "substitute_scheduling",
    "LmiBlock",
    "LmiProblem",
    "SdpSolution",
    "Status",
    "solve",
]
