"""Synthetic banking workload: grouped random dependencies, three transfer shapes.

Transactions are grouped by consecutive arrival index; inside a group every
ordered pair (i, j), i < j, draws one uniform p and becomes a planned
dependency when p exceeds the threshold beta, capped at tx_max dependents per
source. A dependency is realized by the dependent read-only sharing the
source's first written account, so planned edges materialize exactly under
serial execution and each tuple has a single writer for its whole life.

Money moves in integer cents. Benign transfers conserve the sum of the
balances they write; malicious transactions blind-write seeded increments.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable

from .core import PrecedenceGraph, TransactionSpec, TxnKind, TRANSFER_KINDS


class InvalidSpec(ValueError):
    """Workload parameters out of range."""


class InsufficientTuples(ValueError):
    """The database is too small to give every transaction exclusive tuples."""


BAD_DELTA_RANGE = (1000, 100_000)


@dataclass(frozen=True)
class WorkloadSpec:
    m: int
    n: int
    beta: float
    tx_max: int
    size_max: int
    group_size: int = 50
    gamma_range: tuple[float, float] = (0.01, 0.1)
    seed: int = 0
    attack_intensity: float = 0.0
    initial_balance: int = 1_000_000

    def check(self) -> None:
        if self.m <= 0 or self.n <= 0:
            raise InvalidSpec("m and n must be positive")
        if self.size_max < 2:
            raise InvalidSpec("size_max must be >= 2")
        if not 0 < self.group_size <= self.m:
            raise InvalidSpec("group_size must be in (0, m]")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidSpec("beta must be in [0, 1]")
        if not 0.0 <= self.attack_intensity < 1.0:
            raise InvalidSpec("attack_intensity must be in [0, 1)")
        if self.tx_max < 0:
            raise InvalidSpec("tx_max must be >= 0")


@dataclass
class Workload:
    spec: WorkloadSpec
    txns: list[TransactionSpec]
    planned_pg: PrecedenceGraph
    malicious_ids: set[int] = field(default_factory=set)


def malicious_write_delta(seed: int, txn_id: int, nth: int) -> int:
    """Seeded corruption increment for the nth written tuple of a malicious txn."""
    rng = random.Random((seed * 1_000_003 + txn_id) * 31 + nth)
    return rng.randint(*BAD_DELTA_RANGE)


def _malicious_positions(rng: random.Random, m: int, count: int, group_size: int) -> list[int]:
    """Evenly spaced arrival indices with seeded jitter, made unique in range."""
    if count == 0:
        return []
    stride = m / count
    jitter = group_size // 2
    pos = sorted(
        min(m - 1, max(0, int((q + 0.5) * stride) + rng.randint(-jitter, jitter)))
        for q in range(count)
    )
    for i in range(1, count):
        pos[i] = max(pos[i], pos[i - 1] + 1)
    pos[-1] = min(pos[-1], m - 1)
    for i in range(count - 2, -1, -1):
        pos[i] = min(pos[i], pos[i + 1] - 1)
    return pos


def generate(spec: WorkloadSpec) -> Workload:
    """Deterministically build the workload for a spec (same seed, same bytes)."""
    spec.check()
    rng = random.Random(spec.seed)
    m, gs = spec.m, spec.group_size

    num_mal = int(spec.attack_intensity * m)
    malicious = set(_malicious_positions(rng, m, num_mal, gs))

    sizes = [rng.randint(2, spec.size_max) for _ in range(m)]
    benign_kinds = list(TRANSFER_KINDS)
    kinds = [
        TxnKind.MALICIOUS if t in malicious else rng.choice(benign_kinds)
        for t in range(m)
    ]
    gammas = [rng.uniform(*spec.gamma_range) for _ in range(m)]

    # Planned dependencies: one draw per ordered in-group pair, regardless of
    # caps, so the edge statistics stay a pure function of beta.
    edges: list[tuple[int, int]] = []
    out_deg = [0] * m
    in_deg = [0] * m
    in_cap = spec.size_max - 1
    for start in range(0, m, gs):
        members = range(start, min(start + gs, m))
        for i in members:
            for j in members:
                if j <= i:
                    continue
                p = rng.random()
                if (
                    p > spec.beta
                    and j not in malicious
                    and out_deg[i] < spec.tx_max
                    and in_deg[j] < in_cap
                ):
                    edges.append((i, j))
                    out_deg[i] += 1
                    in_deg[j] += 1

    sources: dict[int, list[int]] = {}
    for i, j in edges:
        sources.setdefault(j, []).append(i)

    txns: list[TransactionSpec] = []
    share_tuple: dict[int, int] = {}
    next_tuple = 0
    for t in range(m):
        inherited = [share_tuple[i] for i in sorted(sources.get(t, ()))]
        size = max(sizes[t], len(inherited) + 1)
        own_count = size - len(inherited)
        own = list(range(next_tuple, next_tuple + own_count))
        next_tuple += own_count
        if next_tuple > spec.n:
            raise InsufficientTuples(
                f"needed {next_tuple} tuples, database has {spec.n}"
            )
        share_tuple[t] = own[0]
        if t in malicious:
            txns.append(TransactionSpec(
                txn_id=t, kind=TxnKind.MALICIOUS, reads=(), writes=tuple(own),
                transfer_fraction=gammas[t],
                bad_deltas=tuple(
                    malicious_write_delta(spec.seed, t, idx)
                    for idx in range(own_count)
                ),
            ))
        else:
            txns.append(TransactionSpec(
                txn_id=t, kind=kinds[t],
                reads=tuple(inherited + own), writes=tuple(own),
                transfer_fraction=gammas[t],
            ))

    planned = PrecedenceGraph(nodes=set(range(m)), edges=set(edges))
    return Workload(spec=spec, txns=txns, planned_pg=planned,
                    malicious_ids=malicious)


def scale_summary(workload: Workload) -> dict:
    """Edge count, tuples read by more than one transaction, and mean txn size."""
    touch: dict[int, int] = {}
    total_size = 0
    for t in workload.txns:
        total_size += len(t.tuples)
        for o in t.tuples:
            touch[o] = touch.get(o, 0) + 1
    shared = sum(1 for c in touch.values() if c >= 2)
    return {
        "edges": len(workload.planned_pg.edges),
        "shared_tuples": shared,
        "mean_size": total_size / len(workload.txns) if workload.txns else 0.0,
    }


def _split(amount: int, parts: int) -> list[int]:
    """Integer shares summing exactly to amount, remainder on the first shares."""
    q, r = divmod(amount, parts)
    return [q + 1] * r + [q] * (parts - r)


def transfer_amount(fraction: float, balance: int) -> int:
    return round(fraction * balance)


def transfer_effects(
    txn: TransactionSpec, balance: Callable[[int], int]
) -> list[tuple[int, int]]:
    """New value per written tuple, given a balance lookup.

    Transfer shapes move one amount among the written accounts: distribute
    drains the first into the rest, collect fills the last from the rest,
    many-to-many moves between the two halves. The amount is the transaction's
    fraction of its reference balance: the first read-only tuple when the
    transaction depends on earlier work, else its own first account. Malicious
    transactions ignore reads and add their corruption deltas.
    """
    writes = list(txn.writes)
    if txn.kind is TxnKind.MALICIOUS:
        deltas = txn.bad_deltas or tuple(
            BAD_DELTA_RANGE[0] for _ in writes
        )
        return [(o, balance(o) + d) for o, d in zip(writes, deltas)]

    values = {o: balance(o) for o in writes}
    if len(writes) < 2:
        return [(o, values[o]) for o in writes]

    written = set(writes)
    ref = next((o for o in txn.reads if o not in written), writes[0])
    amount = transfer_amount(txn.transfer_fraction, balance(ref))

    if txn.kind is TxnKind.DISTRIBUTE:
        src_accounts, dst_accounts = writes[:1], writes[1:]
    elif txn.kind is TxnKind.COLLECT:
        src_accounts, dst_accounts = writes[:-1], writes[-1:]
    else:
        half = len(writes) // 2
        src_accounts, dst_accounts = writes[:half], writes[half:]

    for o, share in zip(src_accounts, _split(amount, len(src_accounts))):
        values[o] -= share
    for o, share in zip(dst_accounts, _split(amount, len(dst_accounts))):
        values[o] += share
    return [(o, values[o]) for o in writes]


def save_workload(workload: Workload, path: str | Path) -> None:
    data = {
        "spec": asdict(workload.spec),
        "txns": [
            {
                "id": t.txn_id,
                "kind": t.kind.value,
                "reads": list(t.reads),
                "writes": list(t.writes),
                "gamma": t.transfer_fraction,
                "malicious": t.kind is TxnKind.MALICIOUS,
            }
            for t in workload.txns
        ],
        "planned_edges": sorted(workload.planned_pg.edges),
    }
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


def load_workload(path: str | Path) -> Workload:
    data = json.loads(Path(path).read_text())
    raw_spec = dict(data["spec"])
    raw_spec["gamma_range"] = tuple(raw_spec["gamma_range"])
    spec = WorkloadSpec(**raw_spec)
    txns = []
    malicious: set[int] = set()
    for row in data["txns"]:
        kind = TxnKind(row["kind"])
        writes = tuple(row["writes"])
        deltas: tuple[int, ...] = ()
        if kind is TxnKind.MALICIOUS:
            malicious.add(row["id"])
            deltas = tuple(
                malicious_write_delta(spec.seed, row["id"], idx)
                for idx in range(len(writes))
            )
        txns.append(TransactionSpec(
            txn_id=row["id"], kind=kind, reads=tuple(row["reads"]),
            writes=writes, transfer_fraction=row["gamma"], bad_deltas=deltas,
        ))
    planned = PrecedenceGraph(
        nodes={t.txn_id for t in txns},
        edges={tuple(e) for e in data["planned_edges"]},
    )
    return Workload(spec=spec, txns=txns, planned_pg=planned,
                    malicious_ids=malicious)
