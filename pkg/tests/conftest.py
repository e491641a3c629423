"""Shared oracles: independent implementations the tests check against."""

from __future__ import annotations

from ibsim.core import EventOp, TxnKind
from ibsim.workload import transfer_effects


def gold_replay(sim) -> list[int]:
    """Serial replay of benign transactions only, in realized commit order.

    The reference final state recovery must converge to. Only valid when no
    tuple was excluded from recovery by a fresh overwrite.
    """
    assert not sim.excluded, "gold replay is undefined under fresh-write eviction"
    spec = sim.workload.spec
    balances = [spec.initial_balance] * spec.n
    order = sorted(sim.commit_tick, key=sim.commit_seq_of.__getitem__)
    for txn_id in order:
        txn = sim.txn_by_id[txn_id]
        if txn.kind is TxnKind.MALICIOUS:
            continue
        for o, value in transfer_effects(txn, balances.__getitem__):
            balances[o] = value
    return balances


def pairwise_edge(history, i: int, j: int) -> bool:
    """Brute-force dependency test: some write of i reaches a read of j.

    Scans positions directly instead of tracking a last-writer map.
    """
    writes_i = [idx for idx, ev in enumerate(history)
                if ev.txn_id == i and ev.op is EventOp.WRITE]
    committed = {ev.txn_id for ev in history if ev.op is EventOp.COMMIT}
    if i not in committed or j not in committed or i == j:
        return False
    for wi in writes_i:
        o = history[wi].tuple_id
        for rj in range(wi + 1, len(history)):
            ev = history[rj]
            if ev.txn_id == j and ev.op is EventOp.READ and ev.tuple_id == o:
                overwritten = any(
                    mid.op is EventOp.WRITE and mid.tuple_id == o
                    and mid.txn_id != i and mid.txn_id in committed
                    for mid in history[wi + 1:rj]
                )
                if not overwritten:
                    return True
    return False


def pg_oracle(history) -> tuple[set[int], set[tuple[int, int]]]:
    """Quadratic pairwise precedence graph."""
    committed = sorted({ev.txn_id for ev in history if ev.op is EventOp.COMMIT})
    edges = {
        (i, j)
        for i in committed for j in committed
        if i != j and pairwise_edge(history, i, j)
    }
    return set(committed), edges


def closure_oracle(edges: set[tuple[int, int]], sources: set[int]) -> set[int]:
    """Reachability by fixed-point relaxation rather than search."""
    reached = set(sources)
    changed = True
    while changed:
        changed = False
        for i, j in edges:
            if i in reached and j not in reached:
                reached.add(j)
                changed = True
    return reached - set(sources)


def window_closure_from_log(sim, start_seq: int, end_seq: int) -> set[int]:
    """Affected set recomputed from raw log records, independent of the engine.

    Builds the realized dependency edges inside [start_seq, end_seq] from
    normal records only, then takes the fixed-point closure of the window's
    first transaction.
    """
    edges: set[tuple[int, int]] = set()
    last_writer: dict[int, int] = {}
    origin = None
    for rec in sim.log.records:
        if rec.compensation is not None:
            continue
        if rec.commit_seq < start_seq or rec.commit_seq > end_seq:
            continue
        if origin is None:
            origin = rec.txn_id
        if rec.op == "w":
            last_writer[rec.tuple_id] = rec.txn_id
        else:
            w = last_writer.get(rec.tuple_id)
            if w is not None and w != rec.txn_id:
                edges.add((w, rec.txn_id))
    if origin is None:
        return set()
    return closure_oracle(edges, {origin})
