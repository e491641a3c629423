"""Intrusion-boundary partitioning, response, and recovery simulator."""

from .core import (
    HistoryEvent,
    PrecedenceGraph,
    TransactionSpec,
    TxnKind,
    affected_closure,
    build_precedence_graph,
    direct_dependency,
)
from .engine import SimConfig, Simulator
from .partition import (
    IBAssignment,
    ba_assign,
    bfa_assign,
    exact_solve,
    quality,
    ra_assign,
    sa_assign,
    validate,
)
from .workload import Workload, WorkloadSpec, generate

__all__ = [
    "HistoryEvent",
    "PrecedenceGraph",
    "TransactionSpec",
    "TxnKind",
    "affected_closure",
    "build_precedence_graph",
    "direct_dependency",
    "SimConfig",
    "Simulator",
    "IBAssignment",
    "ba_assign",
    "bfa_assign",
    "exact_solve",
    "quality",
    "ra_assign",
    "sa_assign",
    "validate",
    "Workload",
    "WorkloadSpec",
    "generate",
]
