"""Intrusion response and two-phase repair.

Response runs at detection: every tuple updated in the commit-to-detection
window inside the malicious transaction's IB span enters the corrupted-tuples
table as suspected. Recovery then quiesces that span, scans the log window to
find the affected closure, prunes the table down to the true damage, and
repairs in two phases: undo restores each damaged tuple to its latest image
from before the malicious commit, redo re-executes each affected transaction
semantically against the repaired balances. Recoveries over disjoint IB sets
proceed independently; overlapping ones run in detection order.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from .core import NotCommitted
from .workload import transfer_effects

if TYPE_CHECKING:  # pragma: no cover
    from .engine import Simulator


class ConcurrentRecoveryConflict(RuntimeError):
    """A synchronous recovery overlaps an in-flight recovery's IB locks."""


@dataclass(frozen=True)
class ResponseRecord:
    malicious_txn: int
    t_c: int
    t_d: int
    commit_seq: int
    spanned_ibs: frozenset[int]
    suspected: frozenset[int]


@dataclass
class RecoveryPlan:
    malicious_txn: int
    affected: list[int]
    corrupted: set[int]
    undo_steps: list[tuple[int, int]]
    redo_steps: list[int]


@dataclass
class RecoveryReport:
    malicious_txn: int
    at: list[int]
    corrupted: set[int]
    undo_count: int
    redo_count: int
    start_tick: int
    end_tick: int
    blocked_txns: int
    window_start_seq: int
    window_end_seq: int

    def to_json_dict(self) -> dict:
        return {
            "malicious_txn": self.malicious_txn,
            "at": list(self.at),
            "undo_count": self.undo_count,
            "redo_count": self.redo_count,
            "start_tick": self.start_tick,
            "end_tick": self.end_tick,
            "blocked_txns": self.blocked_txns,
        }


def respond(malicious_txn: int, detect_tick: int, sim: "Simulator") -> ResponseRecord:
    """Confine: suspect every tuple updated in the window within the IB span.

    ITDB mode drops the IB filter and suspects on the time window alone.
    """
    from .engine import CTTStatus  # local import keeps module load acyclic

    seq = sim.commit_seq_of.get(malicious_txn)
    if seq is None:
        raise NotCommitted(malicious_txn)
    t_c = sim.commit_tick[malicious_txn]
    spanned = sim.malicious_span.get(malicious_txn)
    if spanned is None:
        spanned = sim.spanned_ibs(sim.txn_by_id[malicious_txn])

    suspected: set[int] = set()
    log = sim.log
    ticks, tuples = log.w_ticks, log.w_tuples
    tuple_ibs = sim.assignment.tuple_ibs
    itdb = sim.config.itdb
    for idx in range(bisect_left(log.w_seqs, seq), len(ticks)):
        if ticks[idx] > detect_tick:
            break
        o = tuples[idx]
        if itdb or tuple_ibs[o] & spanned:
            suspected.add(o)
    for o in sorted(suspected):
        sim.ctt.add(o, CTTStatus.SUSPECTED, malicious_txn, detect_tick)
    return ResponseRecord(
        malicious_txn=malicious_txn, t_c=t_c, t_d=detect_tick,
        commit_seq=seq, spanned_ibs=spanned, suspected=frozenset(suspected),
    )


def analyze_window(sim: "Simulator", start_seq: int) -> tuple[list[int], dict[int, int]]:
    """Affected closure of the window's starting transaction, in commit order.

    Walks the realized dependency graph the engine maintains per read: a
    transaction is affected when it read a tuple whose last committed writer
    is the origin or an already-affected transaction. Also returns, per tuple
    the origin or closure wrote, the earliest damaging commit_seq.
    """
    origin = sim.txn_of_seq.get(start_seq)
    if origin is None:
        return [], {}
    adj = sim.pg_adj
    seen = {origin}
    stack = [origin]
    reached: list[int] = []
    while stack:
        v = stack.pop()
        for t in adj.get(v, ()):
            if t not in seen:
                seen.add(t)
                reached.append(t)
                stack.append(t)
    reached.sort(key=sim.commit_seq_of.__getitem__)
    damaged_at: dict[int, int] = {}
    for t in (origin, *reached):
        seq_t = sim.commit_seq_of[t]
        for o in sim.txn_by_id[t].writes:
            damaged_at.setdefault(o, seq_t)
    return reached, damaged_at


class RecoveryProcess:
    """Phased repair for one detected transaction: assess, undo, redo."""

    def __init__(self, response: ResponseRecord, sim: "Simulator",
                 synchronous: bool = False):
        self.response = response
        self.sim = sim
        self.synchronous = synchronous
        self.state = "queued"
        self.at: list[int] = []
        self.corrupted: set[int] = set()
        self.undo_steps: list[tuple[int, int, frozenset[int]]] = []
        self.redo_idx = 0
        self.locked: tuple[int, ...] = ()
        self.window_end_seq = -1
        self.plan: RecoveryPlan | None = None
        self.report: RecoveryReport | None = None

    # -- scheduling ------------------------------------------------------

    def _schedule(self, work_items: int, per_tick: int) -> None:
        if self.synchronous:
            self.on_phase()
        else:
            self.sim.schedule_phase(math.ceil(work_items / per_tick), self)

    def start(self) -> None:
        sim = self.sim
        if not sim.config.itdb:
            overlap = tuple(sorted(
                ib for ib in self.response.spanned_ibs
                if ib in sim.runtime.ib_locks))
            if overlap:
                raise ConcurrentRecoveryConflict(
                    f"IBs {overlap} locked by another recovery")
            for ib in sorted(self.response.spanned_ibs):
                sim.runtime.ib_locks[ib] = self.response.malicious_txn
            self.locked = tuple(sorted(self.response.spanned_ibs))
        self.state = "assess"
        window = len(sim.log.records) - sim.log.window_start(
            self.response.commit_seq)
        passes = 2 if sim.config.itdb else 1
        self._schedule(window * passes, sim.config.assess_records_per_tick)

    def on_phase(self) -> None:
        if self.state == "assess":
            self._finish_assessment()
        elif self.state == "undo":
            self._apply_undo()
        elif self.state == "redo":
            self._apply_redo_step()

    # -- phase bodies ------------------------------------------------------

    def _finish_assessment(self) -> None:
        sim = self.sim
        m = self.response.malicious_txn
        seq_m = self.response.commit_seq
        self.window_end_seq = sim.store.commit_seq - 1
        self.at, damaged_at = analyze_window(sim, seq_m)
        sim.affected_count += len(self.at)
        for a in self.at:
            sim._emit("AffectedIdentified", a)

        self.corrupted = {
            o for o, first_seq in damaged_at.items()
            if sim.excluded.get(o, -1) < first_seq
        }
        # this incident's verdict is in: its suspicion claims resolve now
        for o in self.response.suspected:
            claims = sim.pending_claims.get(o)
            if claims and m in claims:
                claims.remove(m)
                if not claims:
                    del sim.pending_claims[o]
        for o in sorted(self.corrupted):
            sim.ctt.claim(o, m, sim.now)

        innocent = [
            o for o, e in sim.ctt.entries.items()
            if e.source_malicious == m and o not in self.corrupted
        ]
        cleared = sim.ctt_release(m, innocent)
        if cleared:
            sim._emit("Signal", m, cleared)

        released = self.locked
        for ib in released:
            sim.runtime.ib_locks.pop(ib, None)
        self.locked = ()
        sim._emit("RecoveryPhaseDone", m, released)
        if cleared:
            sim._release_tuples(cleared)
        if released:
            sim._release_ibs(released)

        self.undo_steps = []
        for o in sorted(self.corrupted, key=lambda o: (damaged_at[o], o)):
            value, taint = sim.log.image_before(o, seq_m)
            self.undo_steps.append((o, value, taint))
        self.plan = RecoveryPlan(
            malicious_txn=m,
            affected=list(self.at),
            corrupted=set(self.corrupted),
            undo_steps=[(o, value) for o, value, _ in self.undo_steps],
            redo_steps=list(self.at),
        )
        self.state = "undo"
        self._schedule(max(1, len(self.undo_steps)),
                       sim.config.compensate_steps_per_tick)

    def _redo_write_sets(self) -> dict[int, set[int]]:
        return {a: set(self.sim.txn_by_id[a].writes) for a in self.at}

    def _apply_undo(self) -> None:
        from .engine import LogRecord

        sim = self.sim
        m = self.response.malicious_txn
        seq = sim.store.commit_seq
        sim.store.commit_seq += 1
        for o, value, taint in self.undo_steps:
            if sim.excluded.get(o, -1) > self.response.commit_seq:
                continue  # fresh write landed after planning: it wins
            before = sim.store.balances[o]
            sim.store.balances[o] = value
            sim.log.append(
                LogRecord(m, o, "w", before, value, sim.now, seq, "undo"),
                taint=taint,
            )
            if taint:
                sim.tuple_taint[o] = taint
            else:
                sim.tuple_taint.pop(o, None)
        sim._emit("RecoveryPhaseDone", m, tuple(o for o, _, _ in self.undo_steps))

        redo_writes: set[int] = set()
        for ws in self._redo_write_sets().values():
            redo_writes |= ws
        cleansed = sim.ctt_release(
            m, (o for o in self.corrupted if o not in redo_writes))
        if cleansed:
            sim._emit("Signal", m, cleansed)
            sim._release_tuples(cleansed)

        if self.at:
            self.state = "redo"
            self.redo_idx = 0
            self._schedule(len(self.sim.txn_by_id[self.at[0]].writes),
                           sim.config.compensate_steps_per_tick)
        else:
            self._finish()

    def _apply_redo_step(self) -> None:
        from .engine import EMPTY_TAINT, LogRecord

        sim = self.sim
        a = self.at[self.redo_idx]
        spec = sim.txn_by_id[a]
        seq = sim.store.commit_seq
        sim.store.commit_seq += 1

        # Re-execution inputs: repaired tuples come from the live store; all
        # other reads come from the transaction's own logged images, so a
        # commit that landed between this transaction and its redo cannot
        # bleed into the replayed amount.
        used: dict[int, tuple[int, frozenset[int]]] = {}
        for o in spec.reads:
            if o in self.corrupted:
                used[o] = (sim.store.balances[o],
                           sim.tuple_taint.get(o, EMPTY_TAINT))
            else:
                used[o] = sim.last_read_image.get(
                    (a, o),
                    (sim.store.balances[o], sim.tuple_taint.get(o, EMPTY_TAINT)),
                )
        read_taint: set[int] = set()
        for o in spec.reads:
            val, taint = used[o]
            sim.log.append(LogRecord(a, o, "r", val, val, sim.now, seq, "redo"))
            sim.last_read_image[(a, o)] = (val, taint)
            read_taint |= taint
        write_taint = frozenset(read_taint) if read_taint else EMPTY_TAINT
        for o, new_val in transfer_effects(spec, lambda o: used[o][0]):
            if sim.excluded.get(o, -1) > self.response.commit_seq:
                continue  # fresh write wins over re-execution
            before = sim.store.balances[o]
            sim.store.balances[o] = new_val
            sim.log.append(
                LogRecord(a, o, "w", before, new_val, sim.now, seq, "redo"),
                taint=write_taint,
            )
            if write_taint:
                sim.tuple_taint[o] = write_taint
            else:
                sim.tuple_taint.pop(o, None)
        sim._emit("RecoveryPhaseDone", a, spec.writes)

        later_writes: set[int] = set()
        for later in self.at[self.redo_idx + 1:]:
            later_writes |= set(sim.txn_by_id[later].writes)
        m = self.response.malicious_txn
        cleansed = sim.ctt_release(
            m, (o for o in spec.writes if o not in later_writes))
        if cleansed:
            sim._emit("Signal", a, cleansed)
            sim._release_tuples(cleansed)

        self.redo_idx += 1
        if self.redo_idx < len(self.at):
            self._schedule(len(sim.txn_by_id[self.at[self.redo_idx]].writes),
                           sim.config.compensate_steps_per_tick)
        else:
            self._finish()

    def _finish(self) -> None:
        sim = self.sim
        m = self.response.malicious_txn
        self.state = "done"
        sim._emit("RecoveryDone", m)
        self.report = RecoveryReport(
            malicious_txn=m,
            at=list(self.at),
            corrupted=set(self.corrupted),
            undo_count=len(self.undo_steps),
            redo_count=len(self.at),
            start_tick=self.response.t_d,
            end_tick=sim.now,
            blocked_txns=sim.blocked_by_incident.get(m, 0),
            window_start_seq=self.response.commit_seq,
            window_end_seq=self.window_end_seq,
        )
        sim.recovery_reports.append(self.report)
        sim.coordinator.complete(self)


class RecoveryCoordinator:
    """Start recoveries over disjoint IB sets; serialize overlaps by detection."""

    def __init__(self, sim: "Simulator"):
        self.sim = sim
        self.active: list[RecoveryProcess] = []
        self.queue: list[RecoveryProcess] = []

    def submit(self, response: ResponseRecord) -> RecoveryProcess:
        proc = RecoveryProcess(response, self.sim)
        for o in response.suspected:
            self.sim.pending_claims.setdefault(o, []).append(
                response.malicious_txn)
        self.queue.append(proc)
        self._start_eligible()
        return proc

    def _start_eligible(self) -> None:
        busy: set[int] = set()
        for proc in self.active:
            busy |= proc.response.spanned_ibs
        still_queued: list[RecoveryProcess] = []
        for proc in self.queue:
            span = proc.response.spanned_ibs
            if span & busy:
                still_queued.append(proc)
            else:
                self.active.append(proc)
                proc.start()
            busy |= span
        self.queue = still_queued

    def on_phase(self, proc: RecoveryProcess) -> None:
        proc.on_phase()

    def complete(self, proc: RecoveryProcess) -> None:
        if proc in self.active:
            self.active.remove(proc)
        self._start_eligible()


def recover(response: ResponseRecord, sim: "Simulator") -> RecoveryReport:
    """Run one recovery synchronously to completion at the current tick.

    Library entry point for callers driving the engine without the event
    loop; raises ConcurrentRecoveryConflict instead of queueing.
    """
    proc = RecoveryProcess(response, sim, synchronous=True)
    sim.coordinator.active.append(proc)
    proc.start()
    assert proc.report is not None
    return proc.report


def coordinate(detections: Sequence[ResponseRecord]) -> dict[int, list[int]]:
    """Direct wait-for predecessors per detection, honoring detection order.

    A recovery waits for every earlier detection whose IB span overlaps its
    own; disjoint spans impose no ordering.
    """
    schedule: dict[int, list[int]] = {}
    for idx, rec in enumerate(detections):
        waits = [
            earlier.malicious_txn
            for earlier in detections[:idx]
            if earlier.spanned_ibs & rec.spanned_ibs
        ]
        schedule[rec.malicious_txn] = waits
    return schedule
