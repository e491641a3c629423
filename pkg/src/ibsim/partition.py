"""Intrusion-boundary assignment: constraints, quality metrics, and solvers.

An assignment places each transaction in exactly one IB and derives tuple
membership from transaction placement; a tuple landing in two or more IBs is
a boundary tuple. Solvers trade off boundary-tuple weight against IB size
balance: best-fit (overlap-greedy), balanced (size-greedy), random, skewed
(80/20), plus an exhaustive enumerator for tiny instances.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import TransactionSpec


class DimensionMismatch(ValueError):
    """Assignment dimensions disagree with the workload."""


class InvalidAssignment(ValueError):
    """Quality metrics require a constraint-clean assignment."""


class TooFewTransactions(ValueError):
    """Fewer transactions than IBs: some IB would stay empty."""


class TooFewIBs(ValueError):
    """Skewed assignment needs at least 5 IBs for a nonempty hot set."""


class BudgetExceeded(ValueError):
    """The exhaustive solver would enumerate more than the allowed maps."""


ENUMERATION_BUDGET = 10**6


@dataclass(frozen=True)
class ConstraintViolation:
    constraint: str
    index: int
    ib: int | None
    message: str


@dataclass
class IBAssignment:
    """Tuple and transaction membership for k intrusion boundaries.

    txn_ib[t] is the single IB of transaction t; tuple_ibs[o] the set of IBs
    containing tuple o; boundary[o] marks tuples in two or more IBs; access[o]
    the transactions touching o.
    """

    k: int
    txn_ib: list[int]
    tuple_ibs: list[set[int]]
    boundary: list[bool]
    access: list[set[int]]

    @classmethod
    def from_txn_ib(
        cls, txns: Sequence[TransactionSpec], n: int, k: int, txn_ib: list[int]
    ) -> "IBAssignment":
        """Derive tuple membership, boundary flags, and access sets from placement."""
        tuple_ibs: list[set[int]] = [set() for _ in range(n)]
        access: list[set[int]] = [set() for _ in range(n)]
        for t, ib in zip(txns, txn_ib):
            for o in t.tuples:
                tuple_ibs[o].add(ib)
                access[o].add(t.txn_id)
        boundary = [len(s) >= 2 for s in tuple_ibs]
        return cls(k=k, txn_ib=list(txn_ib), tuple_ibs=tuple_ibs,
                   boundary=boundary, access=access)

    def ib_txn_counts(self) -> list[int]:
        counts = [0] * self.k
        for ib in self.txn_ib:
            counts[ib] += 1
        return counts

    def ib_tuple_counts(self) -> list[int]:
        counts = [0] * self.k
        for ibs in self.tuple_ibs:
            for ib in ibs:
                counts[ib] += 1
        return counts

    def spanned_ibs(self, txn: TransactionSpec) -> frozenset[int]:
        """IBs containing any tuple the transaction touches."""
        spanned: set[int] = set()
        for o in txn.tuples:
            spanned |= self.tuple_ibs[o]
        return frozenset(spanned)

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "txn_ib": list(self.txn_ib),
            "tuple_ibs": [sorted(s) for s in self.tuple_ibs],
            "boundary": [bool(b) for b in self.boundary],
        }

    @classmethod
    def from_json_dict(cls, data: dict, txns: Sequence[TransactionSpec]) -> "IBAssignment":
        n = len(data["tuple_ibs"])
        access: list[set[int]] = [set() for _ in range(n)]
        for t in txns:
            for o in t.tuples:
                access[o].add(t.txn_id)
        return cls(
            k=int(data["k"]),
            txn_ib=[int(x) for x in data["txn_ib"]],
            tuple_ibs=[set(map(int, s)) for s in data["tuple_ibs"]],
            boundary=[bool(b) for b in data["boundary"]],
            access=access,
        )


@dataclass(frozen=True)
class PartitionQuality:
    f1_simple: int
    f1_weighted: int
    f2_imbalance: float
    fairness: float
    boundary_tuples: set[int]


def _workload_txns(workload) -> list[TransactionSpec]:
    return list(workload.txns) if hasattr(workload, "txns") else list(workload)


def _workload_n(workload, txns: Sequence[TransactionSpec]) -> int:
    if hasattr(workload, "spec"):
        return workload.spec.n
    return 1 + max((o for t in txns for o in t.tuples), default=-1)


def validate(assignment: IBAssignment, workload) -> list[ConstraintViolation]:
    """Check the six constraint families; empty list means clean.

    c1/c2: boundary flag iff membership in >= 2 IBs; c3: full containment of a
    transaction's tuples in its IB; c4: exactly one IB per transaction;
    c5: every IB holds at least one tuple; c6: indices in range.
    """
    txns = _workload_txns(workload)
    n = _workload_n(workload, txns)
    if len(assignment.txn_ib) != len(txns):
        raise DimensionMismatch(
            f"{len(assignment.txn_ib)} placements for {len(txns)} transactions"
        )
    if len(assignment.tuple_ibs) != n or len(assignment.boundary) != n:
        raise DimensionMismatch(
            f"tuple arrays sized {len(assignment.tuple_ibs)}, database has {n}"
        )

    out: list[ConstraintViolation] = []
    k = assignment.k
    for o, ibs in enumerate(assignment.tuple_ibs):
        if any(ib < 0 or ib >= k for ib in ibs):
            out.append(ConstraintViolation("c6", o, None,
                                           f"tuple {o} in out-of-range IB"))
        flagged, actual = assignment.boundary[o], len(ibs) >= 2
        if flagged != actual:
            which = "c1" if actual and not flagged else "c2"
            out.append(ConstraintViolation(
                which, o, None,
                f"tuple {o} boundary flag {flagged}, in {len(ibs)} IBs"))
    for t, spec in enumerate(txns):
        ib = assignment.txn_ib[t]
        if ib < 0 or ib >= k:
            out.append(ConstraintViolation("c4", t, ib,
                                           f"txn {spec.txn_id} has no valid IB"))
            continue
        for o in spec.tuples:
            if ib not in assignment.tuple_ibs[o]:
                out.append(ConstraintViolation(
                    "c3", t, ib,
                    f"txn {spec.txn_id} in IB {ib} but tuple {o} is not"))
    tuple_counts = [0] * k
    for ibs in assignment.tuple_ibs:
        for ib in ibs:
            if 0 <= ib < k:
                tuple_counts[ib] += 1
    for j, c in enumerate(tuple_counts):
        if c < 1:
            out.append(ConstraintViolation("c5", j, j, f"IB {j} holds no tuple"))
    return out


def jain_fairness(counts: Iterable[int]) -> float:
    counts = list(counts)
    total = sum(counts)
    sq = sum(c * c for c in counts)
    if sq == 0:
        return 1.0
    return (total * total) / (len(counts) * sq)


def size_imbalance(sizes: Sequence[int]) -> float:
    """Root of summed squared pairwise size differences."""
    return math.sqrt(
        sum((a - b) ** 2 for a, b in itertools.combinations(sizes, 2))
    )


def quality(assignment: IBAssignment, workload) -> PartitionQuality:
    violations = validate(assignment, workload)
    if violations:
        raise InvalidAssignment(violations[0].message)
    boundary_tuples = {o for o, b in enumerate(assignment.boundary) if b}
    f1_weighted = sum(
        len(assignment.tuple_ibs[o]) - 1 for o in boundary_tuples
    )
    return PartitionQuality(
        f1_simple=len(boundary_tuples),
        f1_weighted=f1_weighted,
        f2_imbalance=size_imbalance(assignment.ib_tuple_counts()),
        fairness=jain_fairness(assignment.ib_txn_counts()),
        boundary_tuples=boundary_tuples,
    )


def assignment_objective(assignment: IBAssignment, balance_weight: float = 1.0) -> float:
    """Boundary weight plus (weighted) tuple-count imbalance; the solver metric."""
    f1 = sum(max(0, len(ibs) - 1) for ibs in assignment.tuple_ibs)
    return f1 + balance_weight * size_imbalance(assignment.ib_tuple_counts())


def _internal_tuple_counts(txns: Sequence[TransactionSpec], n: int) -> list[int]:
    """Per-transaction count of tuples no other transaction touches."""
    touch = [0] * n
    for t in txns:
        for o in t.tuples:
            touch[o] += 1
    return [sum(1 for o in t.tuples if touch[o] == 1) for t in txns]


def _greedy_assign(workload, k: int, prefer_overlap: bool) -> "IBAssignment":
    txns = _workload_txns(workload)
    n = _workload_n(workload, txns)
    m = len(txns)
    if m < k:
        raise TooFewTransactions(f"{m} transactions for {k} IBs")
    if k < 1:
        raise ValueError("k must be >= 1")

    internal = _internal_tuple_counts(txns, n)
    order = sorted(range(m), key=lambda t: (-internal[t], t))

    ib_of: dict[int, int] = {}
    ib_sizes = [0] * k
    tuple_home: dict[int, set[int]] = {}

    def place(t_idx: int, ib: int) -> None:
        ib_of[t_idx] = ib
        ib_sizes[ib] += 1
        for o in txns[t_idx].tuples:
            tuple_home.setdefault(o, set()).add(ib)

    for ib, t_idx in enumerate(order[:k]):
        place(t_idx, ib)

    for t_idx in order[k:]:
        shared: dict[int, int] = {}
        for o in txns[t_idx].tuples:
            for ib in tuple_home.get(o, ()):
                shared[ib] = shared.get(ib, 0) + 1
        if shared:
            if prefer_overlap:
                # most shared tuples; ties to the smaller, then lower, IB
                best = min(shared, key=lambda ib: (-shared[ib], ib_sizes[ib], ib))
            else:
                best = min(shared, key=lambda ib: (ib_sizes[ib], ib))
        else:
            best = min(range(k), key=lambda ib: (ib_sizes[ib], ib))
        place(t_idx, best)

    return IBAssignment.from_txn_ib(txns, n, k, [ib_of[t] for t in range(m)])


def bfa_assign(workload, k: int, seed: int = 0) -> IBAssignment:
    """Best-fit: seed IBs with the most-internal transactions, then follow overlap.

    Each remaining transaction joins the IB sharing the most tuples with it,
    falling back to the currently smallest IB when nothing overlaps. The seed
    argument is accepted for interface uniformity; the heuristic is
    deterministic.
    """
    del seed
    return _greedy_assign(workload, k, prefer_overlap=True)


def ba_assign(workload, k: int, seed: int = 0) -> IBAssignment:
    """Balanced: same skeleton as best-fit, but joins the smallest overlapping IB."""
    del seed
    return _greedy_assign(workload, k, prefer_overlap=False)


def _repair_empty_ibs(rng: random.Random, txn_ib: list[int], k: int) -> None:
    """Move random transactions out of the largest IBs until none is empty."""
    counts = [0] * k
    for ib in txn_ib:
        counts[ib] += 1
    for ib in range(k):
        while counts[ib] == 0:
            donor = max(range(k), key=lambda j: (counts[j], -j))
            candidates = [t for t, x in enumerate(txn_ib) if x == donor]
            moved = rng.choice(candidates)
            txn_ib[moved] = ib
            counts[donor] -= 1
            counts[ib] += 1


def ra_assign(workload, k: int, seed: int = 0) -> IBAssignment:
    """Uniform random IB per transaction (empty IBs repaired to honor c5)."""
    txns = _workload_txns(workload)
    n = _workload_n(workload, txns)
    if len(txns) < k:
        raise TooFewTransactions(f"{len(txns)} transactions for {k} IBs")
    rng = random.Random(seed)
    txn_ib = [rng.randrange(k) for _ in txns]
    _repair_empty_ibs(rng, txn_ib, k)
    return IBAssignment.from_txn_ib(txns, n, k, txn_ib)


def sa_assign(workload, k: int, seed: int = 0) -> IBAssignment:
    """Skewed 80/20: most transactions pile into the first ceil(k/5) IBs."""
    txns = _workload_txns(workload)
    n = _workload_n(workload, txns)
    if k < 5:
        raise TooFewIBs(f"skewed assignment needs k >= 5, got {k}")
    if len(txns) < k:
        raise TooFewTransactions(f"{len(txns)} transactions for {k} IBs")
    hot = math.ceil(0.2 * k)
    rng = random.Random(seed)
    txn_ib = []
    for _ in txns:
        if rng.random() < 0.8:
            txn_ib.append(rng.randrange(hot))
        else:
            txn_ib.append(hot + rng.randrange(k - hot))
    _repair_empty_ibs(rng, txn_ib, k)
    return IBAssignment.from_txn_ib(txns, n, k, txn_ib)


def exact_solve(workload, k: int, balance_weight: float = 1.0) -> IBAssignment:
    """Enumerate every transaction placement and return an objective minimizer.

    Feasible maps leave no IB empty; ties break on the lexicographically
    smallest placement vector. Only for tiny instances (k**m capped).
    """
    txns = _workload_txns(workload)
    n = _workload_n(workload, txns)
    m = len(txns)
    if k**m > ENUMERATION_BUDGET:
        raise BudgetExceeded(f"{k}**{m} maps exceed {ENUMERATION_BUDGET}")
    if m < k:
        raise TooFewTransactions(f"{m} transactions for {k} IBs")

    best: tuple[float, tuple[int, ...]] | None = None
    for placement in itertools.product(range(k), repeat=m):
        if len(set(placement)) < k:
            continue
        tuple_ibs: dict[int, set[int]] = {}
        for t, ib in zip(txns, placement):
            for o in t.tuples:
                tuple_ibs.setdefault(o, set()).add(ib)
        f1 = sum(len(ibs) - 1 for ibs in tuple_ibs.values())
        sizes = [0] * k
        for ibs in tuple_ibs.values():
            for ib in ibs:
                sizes[ib] += 1
        obj = f1 + balance_weight * size_imbalance(sizes)
        if best is None or (obj, placement) < best:
            best = (obj, placement)
    assert best is not None
    return IBAssignment.from_txn_ib(txns, n, k, list(best[1]))
