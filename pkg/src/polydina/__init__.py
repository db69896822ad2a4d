"""Identifiability tools for polytomous DINA-type cognitive diagnosis models.

Two response models are covered: GPDINA, where every category of an item
shares one q-vector, and the sequential model, where each category has its
own q-vector and is attempted only after the previous one was passed.
"""

from .conditions import IdentifiabilityReport, Verdict, check, check_gpdina, seq_verdict
from .core import QKind, QMatrix, parse_q_matrix, prune_zero_categories
from .gpdina import GpdinaParams
from .seqdina import SeqParams

__all__ = [
    "GpdinaParams",
    "IdentifiabilityReport",
    "QKind",
    "QMatrix",
    "SeqParams",
    "Verdict",
    "check",
    "check_gpdina",
    "parse_q_matrix",
    "prune_zero_categories",
    "seq_verdict",
]

__version__ = "0.1.0"
