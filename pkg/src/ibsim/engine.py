"""Deterministic discrete-event execution core.

Virtual time is an integer tick. One simulator instance owns an in-memory
balance store, an append-only read/write log with before/after images, a
corrupted-tuples table (CTT), boundary-tuple holds, per-IB recovery locks,
and a perfect-oracle intrusion detector that reports each malicious commit
after a fixed delay. Transactions execute atomically at admission; admission
suspends on held boundary tuples, corrupted reads, or recovery-locked IBs,
and suspended transactions are retried when the blocking resource releases.

Everything observable is a pure function of (workload, assignment, config):
replaying the same inputs yields the identical event trace.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import math
import random
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum

from . import imr
from .core import TransactionSpec, TxnKind
from .partition import IBAssignment
from .workload import Workload, transfer_effects


class SimulationComplete(Exception):
    """The event queue is drained."""


class LogGap(ValueError):
    """A recovery window still contains unterminated transactions."""


STRATEGIES = ("BFA", "BA", "RA", "SA", "OneIB", "ITDB")


@dataclass
class SimConfig:
    """Run parameters: detection delay, arrival rate, partitioning mode.

    ``boundary_hold`` defaults to 1.5x the detection delay so a boundary tuple
    stays held past the point where its writer could still turn out malicious.
    ``assess_records_per_tick`` and ``compensate_steps_per_tick`` set how much
    recovery work fits in one tick; they shape recovery durations only.
    """

    delta: int = 0
    arrival_rate: float = 1.0
    k: int = 1
    strategy: str = "BFA"
    delayed_access: bool = True
    boundary_hold: int | None = None
    seed: int = 0
    fp_rate: float = 0.0
    fn_rate: float = 0.0
    assess_records_per_tick: int = 200
    compensate_steps_per_tick: int = 50

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.boundary_hold is None:
            self.boundary_hold = math.ceil(1.5 * self.delta)
        if self.boundary_hold < self.delta:
            raise ValueError("boundary_hold must cover the detection delay")
        if self.strategy == "ITDB":
            # temporal-only blocking baseline: no boundary structure
            self.delayed_access = False

    @property
    def itdb(self) -> bool:
        return self.strategy == "ITDB"


class CTTStatus(str, Enum):
    SUSPECTED = "suspected"
    CONFIRMED = "confirmed"


@dataclass
class CTTEntry:
    status: CTTStatus
    source_malicious: int
    added_at: int


class CorruptedTuplesTable:
    """Tuple ids suspected or confirmed damaged, with provenance."""

    def __init__(self):
        self.entries: dict[int, CTTEntry] = {}

    def __contains__(self, tuple_id: int) -> bool:
        return tuple_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, tuple_id: int, status: CTTStatus, source: int, tick: int) -> None:
        if tuple_id not in self.entries:
            self.entries[tuple_id] = CTTEntry(status, source, tick)
        elif status is CTTStatus.CONFIRMED:
            self.entries[tuple_id].status = CTTStatus.CONFIRMED

    def claim(self, tuple_id: int, source: int, tick: int) -> None:
        """Assessment verdict: the tuple is confirmed damage of this incident."""
        entry = self.entries.get(tuple_id)
        if entry is None:
            self.entries[tuple_id] = CTTEntry(CTTStatus.CONFIRMED, source, tick)
        else:
            entry.status = CTTStatus.CONFIRMED
            entry.source_malicious = source

    def remove(self, tuple_id: int) -> CTTEntry | None:
        return self.entries.pop(tuple_id, None)


@dataclass(slots=True)
class LogRecord:
    txn_id: int
    tuple_id: int
    op: str  # "r" | "w"
    before: int
    after: int
    tick: int
    commit_seq: int
    compensation: str | None = None  # None | "undo" | "redo"


EMPTY_TAINT: frozenset[int] = frozenset()


class TransactionsLog:
    """Append-only read/write log plus per-tuple version index.

    Versions record every write's (commit_seq, value, taint) so undo can find
    the latest image before a given commit without scanning the whole log.
    Parallel primitive columns mirror the records for fast window scans.
    """

    def __init__(self, initial_balance: int):
        self.records: list[LogRecord] = []
        self._record_seqs: list[int] = []
        # write-only columns (normal writes), for response window scans
        self.w_seqs: list[int] = []
        self.w_ticks: list[int] = []
        self.w_tuples: list[int] = []
        self.versions: dict[int, list[tuple[int, int, frozenset[int]]]] = {}
        self.initial_balance = initial_balance

    def append(self, rec: LogRecord, taint: frozenset[int] = EMPTY_TAINT) -> None:
        self.records.append(rec)
        self._record_seqs.append(rec.commit_seq)
        if rec.op == "w":
            if rec.compensation is None:
                self.w_seqs.append(rec.commit_seq)
                self.w_ticks.append(rec.tick)
                self.w_tuples.append(rec.tuple_id)
            self.versions.setdefault(rec.tuple_id, []).append(
                (rec.commit_seq, rec.after, taint)
            )

    def window_start(self, start_seq: int) -> int:
        """Index of the first record committed at or after start_seq."""
        return bisect_left(self._record_seqs, start_seq)

    def window(self, start_seq: int) -> list[LogRecord]:
        """All records committed at or after start_seq."""
        return self.records[self.window_start(start_seq):]

    def image_before(self, tuple_id: int, seq: int) -> tuple[int, frozenset[int]]:
        """Latest committed (value, taint) of a tuple strictly before seq."""
        chain = self.versions.get(tuple_id, [])
        idx = bisect_left(chain, (seq, -(10**30), EMPTY_TAINT)) - 1
        if idx < 0:
            return self.initial_balance, EMPTY_TAINT
        _, value, taint = chain[idx]
        return value, taint

    def export_csv(self, path) -> None:
        """Write the full log, one record per row, compensation rows included."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["txn_id", "tuple", "op", "before", "after", "tick",
                 "commit_seq"])
            for rec in self.records:
                writer.writerow([rec.txn_id, rec.tuple_id, rec.op, rec.before,
                                 rec.after, rec.tick, rec.commit_seq])


@dataclass
class Store:
    balances: list[int]
    commit_seq: int = 0

    def read(self, tuple_id: int) -> int:
        return self.balances[tuple_id]


class Outcome(str, Enum):
    EXECUTED = "Executed"
    SUSPENDED_ON_BT = "SuspendedOnBT"
    SUSPENDED_ON_CTT = "SuspendedOnCTT"
    SUSPENDED_ON_IB_LOCK = "SuspendedOnIBLock"


@dataclass(frozen=True)
class AdmissionOutcome:
    kind: Outcome
    commit_seq: int | None = None


@dataclass(frozen=True)
class Event:
    """One trace line: {tick, kind, txn, tuples}.

    ``tuples`` holds the touched tuple ids, except for IB-lock suspensions
    and lock releases where it carries the IB indices involved.
    """

    tick: int
    kind: str
    txn: int | None = None
    tuples: tuple[int, ...] = ()

    def to_json_dict(self) -> dict:
        return {"tick": self.tick, "kind": self.kind, "txn": self.txn,
                "tuples": list(self.tuples)}


@dataclass
class IBRuntime:
    """Live lock state: per-IB recovery locks and held boundary tuples."""

    assignment: IBAssignment
    ib_locks: dict[int, int] = field(default_factory=dict)  # ib -> owner txn
    bt_locks: dict[int, tuple[int, int]] = field(default_factory=dict)
    # tuple -> (holder txn, release tick)


class Simulator:
    """Single-owner event loop binding workload, assignment, and config."""

    def __init__(self, workload: Workload, assignment: IBAssignment,
                 config: SimConfig, auto_arrivals: bool = True):
        self.workload = workload
        self.assignment = assignment
        self.config = config
        n = workload.spec.n
        self.store = Store([workload.spec.initial_balance] * n)
        self.log = TransactionsLog(workload.spec.initial_balance)
        self.ctt = CorruptedTuplesTable()
        self.runtime = IBRuntime(assignment)
        self.now = 0
        self.rng = random.Random(config.seed)
        self.txn_by_id = {t.txn_id: t for t in workload.txns}
        self._spanned: dict[int, frozenset[int]] = {}

        # suspension registries; inner dicts are insertion-ordered txn sets
        self.waiting_on_tuple: dict[int, dict[int, None]] = {}
        self.waiting_on_ib: dict[int, dict[int, None]] = {}
        self._waiting_keys: dict[int, tuple[str, tuple[int, ...]]] = {}

        # bookkeeping
        self.arrival_tick: dict[int, int] = {}
        self.commit_tick: dict[int, int] = {}
        self.commit_seq_of: dict[int, int] = {}
        self.txn_of_seq: dict[int, int] = {}
        # realized dependency graph over committed work, maintained per read
        self.pg_adj: dict[int, list[int]] = {}
        self.live_last_writer: dict[int, int] = {}
        self.tuple_taint: dict[int, frozenset[int]] = {}
        # (txn, tuple) -> (value, taint) of the txn's latest logged read;
        # redo re-reads uncorrupted inputs from here, not the live store
        self.last_read_image: dict[tuple[int, int], tuple[int, frozenset[int]]] = {}
        self.excluded: dict[int, int] = {}  # tuple -> seq of fresh write
        self.blocked_count = 0
        self.blocked_by_incident: dict[int, int] = {}
        # tuple -> detections that suspect it and have not been assessed yet
        self.pending_claims: dict[int, list[int]] = {}
        self.cross_ib_leaks = 0
        self.leak_events: list[tuple[int, int, int, int]] = []
        self.affected_count = 0
        self.detections: list[dict] = []
        self.recovery_reports: list[imr.RecoveryReport] = []
        self.trace: list[Event] = []
        self.histogram: dict[str, int] = {}
        self.commits_per_window: dict[int, int] = {}
        self.malicious_span: dict[int, frozenset[int]] = {}

        self.coordinator = imr.RecoveryCoordinator(self)

        self._heap: list[tuple[int, int, str, object]] = []
        self._event_seq = itertools.count()
        if auto_arrivals:
            t = 0.0
            for spec in workload.txns:
                t += self.rng.expovariate(config.arrival_rate)
                self._push(int(t), "Arrival", spec.txn_id)

    # -- event plumbing ------------------------------------------------

    def _push(self, tick: int, kind: str, payload: object) -> None:
        heapq.heappush(self._heap, (tick, next(self._event_seq), kind, payload))

    def schedule_arrival(self, txn_id: int, tick: int) -> None:
        """Queue one arrival explicitly (scenario construction)."""
        self._push(tick, "Arrival", txn_id)

    def _emit(self, kind: str, txn: int | None = None,
              tuples: tuple[int, ...] = ()) -> None:
        self.trace.append(Event(self.now, kind, txn, tuples))
        self.histogram[kind] = self.histogram.get(kind, 0) + 1

    def step(self) -> list[Event]:
        """Advance to the next queued event; return the trace it produced."""
        if not self._heap:
            raise SimulationComplete
        tick, _, kind, payload = heapq.heappop(self._heap)
        self.now = tick
        mark = len(self.trace)
        if kind == "Arrival":
            self._on_arrival(payload)
        elif kind == "BTRelease":
            self._on_bt_release(payload)
        elif kind == "Detection":
            self._on_detection(payload)
        elif kind == "RecoveryPhase":
            self.coordinator.on_phase(payload)
        else:  # pragma: no cover - no other kinds are scheduled
            raise RuntimeError(f"unknown event kind {kind}")
        return self.trace[mark:]

    def run(self) -> None:
        while True:
            try:
                self.step()
            except SimulationComplete:
                break

    # -- admission -----------------------------------------------------

    def spanned_ibs(self, txn: TransactionSpec) -> frozenset[int]:
        cached = self._spanned.get(txn.txn_id)
        if cached is None:
            cached = self.assignment.spanned_ibs(txn)
            self._spanned[txn.txn_id] = cached
        return cached

    def _on_arrival(self, txn_id: int) -> None:
        self.arrival_tick[txn_id] = self.now
        self._emit("Arrival", txn_id, self.txn_by_id[txn_id].tuples)
        self.admit(self.txn_by_id[txn_id])

    def admit(self, txn: TransactionSpec) -> AdmissionOutcome:
        """One admission attempt; suspension registers a retry and returns."""
        held = tuple(o for o in txn.tuples if o in self.runtime.bt_locks)
        if held:
            self._suspend(txn.txn_id, Outcome.SUSPENDED_ON_BT, "tuple", held)
            return AdmissionOutcome(Outcome.SUSPENDED_ON_BT)

        bad_reads = tuple(o for o in txn.reads if o in self.ctt)
        if bad_reads:
            self._suspend(txn.txn_id, Outcome.SUSPENDED_ON_CTT, "tuple", bad_reads)
            return AdmissionOutcome(Outcome.SUSPENDED_ON_CTT)

        locked = tuple(sorted(
            ib for ib in self.spanned_ibs(txn) if ib in self.runtime.ib_locks
        ))
        if locked:
            self._suspend(txn.txn_id, Outcome.SUSPENDED_ON_IB_LOCK, "ib", locked)
            return AdmissionOutcome(Outcome.SUSPENDED_ON_IB_LOCK)

        evicted = tuple(o for o in txn.writes if o in self.ctt)
        seq = self._execute(txn)
        if evicted:
            # fresh write over suspected damage: authoritative, skip repair
            for o in evicted:
                self.ctt.remove(o)
                self.excluded[o] = seq
            self._emit("Signal", txn.txn_id, evicted)
            self._release_tuples(evicted)
        return AdmissionOutcome(Outcome.EXECUTED, seq)

    def _suspend(self, txn_id: int, outcome: Outcome, key_kind: str,
                 keys: tuple[int, ...]) -> None:
        self.blocked_count += 1
        registry = (self.waiting_on_tuple if key_kind == "tuple"
                    else self.waiting_on_ib)
        for key in keys:
            registry.setdefault(key, {})[txn_id] = None
        self._waiting_keys[txn_id] = (key_kind, keys)
        for source in self._incident_sources(outcome, keys):
            self.blocked_by_incident[source] = (
                self.blocked_by_incident.get(source, 0) + 1
            )
        self._emit(outcome.value, txn_id, keys)

    def _incident_sources(self, outcome: Outcome, keys: tuple[int, ...]) -> set[int]:
        if outcome is Outcome.SUSPENDED_ON_CTT:
            return {self.ctt.entries[o].source_malicious
                    for o in keys if o in self.ctt.entries}
        if outcome is Outcome.SUSPENDED_ON_IB_LOCK:
            return {self.runtime.ib_locks[ib]
                    for ib in keys if ib in self.runtime.ib_locks}
        return set()

    def _retry(self, txn_ids: list[int]) -> None:
        for txn_id in txn_ids:
            kind_keys = self._waiting_keys.pop(txn_id, None)
            if kind_keys is None:
                continue
            key_kind, keys = kind_keys
            registry = (self.waiting_on_tuple if key_kind == "tuple"
                        else self.waiting_on_ib)
            for key in keys:
                waiters = registry.get(key)
                if waiters is not None:
                    waiters.pop(txn_id, None)
                    if not waiters:
                        del registry[key]
            self.admit(self.txn_by_id[txn_id])

    def _release_tuples(self, tuples: tuple[int, ...]) -> None:
        txns: dict[int, None] = {}
        for o in tuples:
            txns.update(self.waiting_on_tuple.get(o, ()))
        self._retry(list(txns))

    def _release_ibs(self, ibs: tuple[int, ...]) -> None:
        txns: dict[int, None] = {}
        for ib in ibs:
            txns.update(self.waiting_on_ib.get(ib, ()))
        self._retry(list(txns))

    # -- execution -----------------------------------------------------

    def _execute(self, txn: TransactionSpec) -> int:
        seq = self.store.commit_seq
        self.store.commit_seq += 1
        read_taint: set[int] = set()
        assigned_ib = self.assignment.txn_ib[txn.txn_id] if (
            txn.txn_id < len(self.assignment.txn_ib)) else 0
        for o in txn.reads:
            val = self.store.balances[o]
            self.log.append(LogRecord(txn.txn_id, o, "r", val, val, self.now, seq))
            writer = self.live_last_writer.get(o)
            if writer is not None and writer != txn.txn_id:
                self.pg_adj.setdefault(writer, []).append(txn.txn_id)
            taint = self.tuple_taint.get(o, EMPTY_TAINT)
            self.last_read_image[(txn.txn_id, o)] = (val, taint)
            if taint:
                read_taint |= taint
                for origin in sorted(taint):
                    if assigned_ib not in self.malicious_span.get(
                            origin, frozenset()):
                        self.cross_ib_leaks += 1
                        self.leak_events.append((self.now, txn.txn_id, o, origin))

        if txn.kind is TxnKind.MALICIOUS:
            write_taint = frozenset({txn.txn_id})
        else:
            write_taint = frozenset(read_taint) if read_taint else EMPTY_TAINT

        for o, new_val in transfer_effects(txn, self.store.read):
            before = self.store.balances[o]
            self.store.balances[o] = new_val
            self.log.append(
                LogRecord(txn.txn_id, o, "w", before, new_val, self.now, seq),
                taint=write_taint,
            )
            self.live_last_writer[o] = txn.txn_id
            if write_taint:
                self.tuple_taint[o] = write_taint
            else:
                self.tuple_taint.pop(o, None)

        self.commit_tick[txn.txn_id] = self.now
        self.commit_seq_of[txn.txn_id] = seq
        self.txn_of_seq[seq] = txn.txn_id
        window = self.now // 1000
        self.commits_per_window[window] = self.commits_per_window.get(window, 0) + 1
        self._emit("Commit", txn.txn_id, txn.tuples)

        if txn.kind is TxnKind.MALICIOUS:
            self.malicious_span[txn.txn_id] = self.spanned_ibs(txn)
        reported = txn.kind is TxnKind.MALICIOUS
        if reported and self.config.fn_rate > 0:
            reported = self.rng.random() >= self.config.fn_rate
        if not reported and self.config.fp_rate > 0 and (
                txn.kind is not TxnKind.MALICIOUS):
            reported = self.rng.random() < self.config.fp_rate
        if reported:
            self.malicious_span.setdefault(
                txn.txn_id, self.spanned_ibs(txn))
            detect = self.now + self.config.delta
            self.detections.append(
                {"malicious_txn": txn.txn_id, "detect_tick": detect}
            )
            self._push(detect, "Detection", txn.txn_id)

        if self.config.delayed_access:
            held = tuple(o for o in txn.writes if self.assignment.boundary[o])
            if held:
                release = self.now + self.config.boundary_hold
                for o in held:
                    self.runtime.bt_locks[o] = (txn.txn_id, release)
                self._push(release, "BTRelease", (txn.txn_id, held))
        return seq

    # -- detector and recovery hooks ------------------------------------

    def ids_report(self) -> list[dict]:
        """Detection schedule so far: one event per reported commit, in order."""
        return [dict(d) for d in self.detections]

    def _on_bt_release(self, payload: tuple[int, tuple[int, ...]]) -> None:
        txn_id, tuples = payload
        for o in tuples:
            self.runtime.bt_locks.pop(o, None)
        self._emit("BTRelease", txn_id, tuples)
        self._release_tuples(tuples)

    def _on_detection(self, txn_id: int) -> None:
        self._emit("Detection", txn_id)
        response = imr.respond(txn_id, self.now, self)
        self._emit("ResponseDone", txn_id, tuple(sorted(response.suspected)))
        self.coordinator.submit(response)

    def schedule_phase(self, delay: int, token: object) -> None:
        self._push(self.now + max(1, delay), "RecoveryPhase", token)

    def ctt_release(self, owner: int, tuples) -> tuple[int, ...]:
        """Drop this incident's CTT entries, unless a pending incident still
        suspects the tuple, in which case the entry changes owner instead.

        Returns the tuples actually removed (safe to signal and retry on).
        """
        removed: list[int] = []
        for o in sorted(tuples):
            entry = self.ctt.entries.get(o)
            if entry is None or entry.source_malicious != owner:
                continue
            claimant = next(
                (m for m in self.pending_claims.get(o, ()) if m != owner),
                None)
            if claimant is not None:
                entry.source_malicious = claimant
                entry.status = CTTStatus.SUSPECTED
            else:
                self.ctt.remove(o)
                removed.append(o)
        return tuple(removed)

    # -- oracles over final state ---------------------------------------

    def replay_store(self) -> list[int]:
        """Rebuild balances from write after-images in commit order."""
        balances = [self.workload.spec.initial_balance] * self.workload.spec.n
        for rec in self.log.records:
            if rec.op == "w":
                balances[rec.tuple_id] = rec.after
        return balances
