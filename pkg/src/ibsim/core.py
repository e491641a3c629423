"""Transaction model, histories, precedence graph, and affected-transaction closure.

A database is a flat array of ``n`` integer-cent balances indexed by tuple id.
Transactions are read/write programs over tuple ids; committed histories induce
a precedence graph whose edges are write-to-read dependencies. The closure of
the graph from a malicious transaction is the set of affected transactions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum


class UnknownTransaction(KeyError):
    """A transaction id does not appear in the history or graph."""


class NotCommitted(ValueError):
    """The operation requires a committed transaction."""


class IncompleteHistory(ValueError):
    """A transaction in the history lacks a Commit or Abort event."""


class TxnKind(str, Enum):
    DISTRIBUTE = "distribute"
    COLLECT = "collect"
    MANY_TO_MANY = "many_to_many"
    MALICIOUS = "malicious"


TRANSFER_KINDS = (TxnKind.DISTRIBUTE, TxnKind.COLLECT, TxnKind.MANY_TO_MANY)


@dataclass(frozen=True)
class TransactionSpec:
    """A transaction as a read/write program plus its transfer semantics.

    ``reads`` and ``writes`` are ordered tuple-id lists. Transfer transactions
    are read-modify-write: every written tuple also appears in the read set.
    Malicious transactions blind-write ``writes`` with per-tuple increments in
    ``bad_deltas`` and carry no reads, so they can never depend on prior work.
    """

    txn_id: int
    kind: TxnKind
    reads: tuple[int, ...]
    writes: tuple[int, ...]
    transfer_fraction: float = 0.05
    bad_deltas: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.reads and not self.writes:
            raise ValueError(f"txn {self.txn_id}: empty read and write sets")
        if self.kind in TRANSFER_KINDS and not set(self.writes) <= set(self.reads):
            raise ValueError(
                f"txn {self.txn_id}: transfer writes must be read-modify-write"
            )
        if self.kind is TxnKind.MALICIOUS and self.bad_deltas and len(
            self.bad_deltas
        ) != len(self.writes):
            raise ValueError(f"txn {self.txn_id}: bad_deltas/writes length mismatch")

    @property
    def tuples(self) -> tuple[int, ...]:
        """All accessed tuple ids, reads first, no duplicates."""
        seen = dict.fromkeys(self.reads)
        seen.update(dict.fromkeys(self.writes))
        return tuple(seen)

    @property
    def op_order(self) -> tuple[tuple[str, int], ...]:
        """Total order over operations: all reads, then all writes."""
        return tuple(("r", o) for o in self.reads) + tuple(
            ("w", o) for o in self.writes
        )


class EventOp(str, Enum):
    READ = "read"
    WRITE = "write"
    COMMIT = "commit"
    ABORT = "abort"


@dataclass(frozen=True)
class HistoryEvent:
    """One step of an execution history, in history (serial) order."""

    txn_id: int
    op: EventOp
    tuple_id: int | None = None
    timestamp: int = 0

    @staticmethod
    def read(txn_id: int, tuple_id: int, timestamp: int = 0) -> "HistoryEvent":
        return HistoryEvent(txn_id, EventOp.READ, tuple_id, timestamp)

    @staticmethod
    def write(txn_id: int, tuple_id: int, timestamp: int = 0) -> "HistoryEvent":
        return HistoryEvent(txn_id, EventOp.WRITE, tuple_id, timestamp)

    @staticmethod
    def commit(txn_id: int, timestamp: int = 0) -> "HistoryEvent":
        return HistoryEvent(txn_id, EventOp.COMMIT, None, timestamp)

    @staticmethod
    def abort(txn_id: int, timestamp: int = 0) -> "HistoryEvent":
        return HistoryEvent(txn_id, EventOp.ABORT, None, timestamp)


@dataclass
class PrecedenceGraph:
    """Directed dependency graph over committed transactions."""

    nodes: set[int] = field(default_factory=set)
    edges: set[tuple[int, int]] = field(default_factory=set)

    def successors(self, txn_id: int) -> set[int]:
        if txn_id not in self.nodes:
            raise UnknownTransaction(txn_id)
        return {j for (i, j) in self.edges if i == txn_id}

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {v: [] for v in self.nodes}
        for i, j in self.edges:
            adj[i].append(j)
        return adj


def _terminal_status(history: list[HistoryEvent]) -> dict[int, EventOp]:
    """Map txn id to its Commit/Abort op; raise if a txn never terminates."""
    status: dict[int, EventOp] = {}
    seen: set[int] = set()
    for ev in history:
        seen.add(ev.txn_id)
        if ev.op in (EventOp.COMMIT, EventOp.ABORT):
            status[ev.txn_id] = ev.op
    unterminated = seen - set(status)
    if unterminated:
        raise IncompleteHistory(f"unterminated transactions: {sorted(unterminated)}")
    return status


def direct_dependency(history: list[HistoryEvent], i: int, j: int) -> bool:
    """True iff j reads a tuple whose last committed writer before the read is i.

    The history list is the serial order; a write by an intermediate committed
    transaction (including j itself) breaks the dependency for that tuple.
    """
    status = _terminal_status(history)
    for t in (i, j):
        if t not in status:
            raise UnknownTransaction(t)
        if status[t] is not EventOp.COMMIT:
            raise NotCommitted(t)
    if i == j:
        return False
    last_writer: dict[int, int] = {}
    for ev in history:
        if status.get(ev.txn_id) is not EventOp.COMMIT:
            continue
        if ev.op is EventOp.READ and ev.txn_id == j:
            if last_writer.get(ev.tuple_id) == i:
                return True
        elif ev.op is EventOp.WRITE:
            last_writer[ev.tuple_id] = ev.txn_id
    return False


def build_precedence_graph(history: list[HistoryEvent]) -> PrecedenceGraph:
    """Single forward pass: an edge (i, j) for every read of j served by i's write."""
    status = _terminal_status(history)
    nodes = {t for t, s in status.items() if s is EventOp.COMMIT}
    edges: set[tuple[int, int]] = set()
    last_writer: dict[int, int] = {}
    for ev in history:
        if ev.txn_id not in nodes:
            continue
        if ev.op is EventOp.READ:
            w = last_writer.get(ev.tuple_id)
            if w is not None and w != ev.txn_id:
                edges.add((w, ev.txn_id))
        elif ev.op is EventOp.WRITE:
            last_writer[ev.tuple_id] = ev.txn_id
    return PrecedenceGraph(nodes=nodes, edges=edges)


def affected_closure(pg: PrecedenceGraph, malicious: set[int]) -> set[int]:
    """All transactions reachable from the malicious set, excluding it."""
    unknown = set(malicious) - pg.nodes
    if unknown:
        raise UnknownTransaction(sorted(unknown))
    adj = pg.adjacency()
    reached: set[int] = set()
    queue = deque(malicious)
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in reached and w not in malicious:
                reached.add(w)
                queue.append(w)
    return reached
