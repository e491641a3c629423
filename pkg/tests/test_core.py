"""Dependency model: direct dependencies, precedence graph, affected closure."""

import random

import pytest

from conftest import closure_oracle, pairwise_edge, pg_oracle
from ibsim.core import (
    HistoryEvent,
    IncompleteHistory,
    NotCommitted,
    PrecedenceGraph,
    TransactionSpec,
    TxnKind,
    UnknownTransaction,
    affected_closure,
    build_precedence_graph,
    direct_dependency,
)

R, W, C, A = (HistoryEvent.read, HistoryEvent.write, HistoryEvent.commit,
              HistoryEvent.abort)


def fig2_history():
    """t1 writes o2,o3; t2 reads o2; t3 reads o3, writes o4; t4 reads o4."""
    return [
        W(1, 2, 0), W(1, 3, 0), C(1, 0),
        R(2, 2, 1), C(2, 1),
        R(3, 3, 2), W(3, 4, 2), C(3, 2),
        R(4, 4, 3), C(4, 3),
    ]


class TestDirectDependency:
    def test_write_read_pair(self):
        assert direct_dependency(fig2_history(), 1, 2)

    def test_disjoint_sets(self):
        history = [W(1, 0, 0), C(1, 0), R(2, 5, 1), W(2, 6, 1), C(2, 1)]
        assert not direct_dependency(history, 1, 2)

    def test_overwrite_breaks_dependency(self):
        history = [
            W(1, 5, 0), C(1, 0),
            W(3, 5, 1), C(3, 1),
            R(4, 5, 2), C(4, 2),
        ]
        assert not direct_dependency(history, 1, 4)
        assert direct_dependency(history, 3, 4)
        assert pairwise_edge(history, 3, 4) and not pairwise_edge(history, 1, 4)

    def test_aborted_intermediate_writer_does_not_break(self):
        history = [
            W(1, 5, 0), C(1, 0),
            W(3, 5, 1), A(3, 1),
            R(4, 5, 2), C(4, 2),
        ]
        assert direct_dependency(history, 1, 4)

    def test_unknown_transaction(self):
        with pytest.raises(UnknownTransaction):
            direct_dependency(fig2_history(), 1, 99)

    def test_aborted_endpoint(self):
        history = [W(1, 0, 0), C(1, 0), R(2, 0, 1), A(2, 1)]
        with pytest.raises(NotCommitted):
            direct_dependency(history, 1, 2)


class TestBuildPrecedenceGraph:
    def test_fig2_edges(self):
        pg = build_precedence_graph(fig2_history())
        assert pg.nodes == {1, 2, 3, 4}
        assert pg.edges == {(1, 2), (1, 3), (3, 4)}

    def test_single_transaction(self):
        pg = build_precedence_graph([W(7, 0, 0), C(7, 0)])
        assert pg.nodes == {7} and pg.edges == set()

    def test_incomplete_history(self):
        with pytest.raises(IncompleteHistory):
            build_precedence_graph([W(1, 0, 0)])

    def test_matches_pairwise_oracle_on_random_histories(self):
        for seed in range(30):
            rng = random.Random(seed)
            history = []
            for t in range(10):
                reads = rng.sample(range(8), rng.randint(0, 3))
                writes = rng.sample(range(8), rng.randint(0, 3))
                tick = t
                for o in reads:
                    history.append(R(t, o, tick))
                for o in writes:
                    history.append(W(t, o, tick))
                history.append(C(t, tick) if rng.random() < 0.85 else A(t, tick))
            pg = build_precedence_graph(history)
            nodes, edges = pg_oracle(history)
            assert pg.nodes == nodes
            assert pg.edges == edges

    def test_edges_point_forward_in_commit_order(self):
        for seed in range(10):
            rng = random.Random(100 + seed)
            history = []
            for t in range(12):
                for o in rng.sample(range(10), rng.randint(1, 3)):
                    history.append(R(t, o, t) if rng.random() < 0.5 else W(t, o, t))
                history.append(C(t, t))
            pg = build_precedence_graph(history)
            assert all(i < j for i, j in pg.edges)


def random_dag(rng: random.Random, n: int = 12) -> PrecedenceGraph:
    edges = {
        (i, j)
        for i in range(n) for j in range(i + 1, n)
        if rng.random() < 0.25
    }
    return PrecedenceGraph(nodes=set(range(n)), edges=edges)


class TestAffectedClosure:
    def test_fig2_t1_malicious(self):
        pg = build_precedence_graph(fig2_history())
        assert affected_closure(pg, {1}) == {2, 3, 4}

    def test_sink_malicious_is_empty(self):
        pg = build_precedence_graph(fig2_history())
        assert affected_closure(pg, {4}) == set()

    def test_matches_fixed_point_oracle(self):
        for seed in range(25):
            rng = random.Random(seed)
            pg = random_dag(rng)
            malicious = set(rng.sample(range(12), 2))
            assert affected_closure(pg, malicious) == closure_oracle(
                pg.edges, malicious)

    def test_union_over_sources(self):
        rng = random.Random(7)
        pg = random_dag(rng)
        malicious = {1, 5}
        union = set()
        for m in malicious:
            union |= affected_closure(pg, {m})
        assert affected_closure(pg, malicious) == union - malicious

    def test_monotone_in_source_set(self):
        for seed in range(15):
            rng = random.Random(200 + seed)
            pg = random_dag(rng)
            small = set(rng.sample(range(12), 1))
            large = small | set(rng.sample(range(12), 2))
            a_small = affected_closure(pg, small)
            a_large = affected_closure(pg, large)
            assert a_small <= a_large | large

    def test_unknown_source(self):
        pg = build_precedence_graph(fig2_history())
        with pytest.raises(UnknownTransaction):
            affected_closure(pg, {42})


class TestTransactionSpec:
    def test_transfer_requires_rmw(self):
        with pytest.raises(ValueError):
            TransactionSpec(0, TxnKind.DISTRIBUTE, reads=(1,), writes=(1, 2))

    def test_empty_sets_rejected(self):
        with pytest.raises(ValueError):
            TransactionSpec(0, TxnKind.COLLECT, reads=(), writes=())

    def test_op_order_reads_before_writes(self):
        txn = TransactionSpec(0, TxnKind.DISTRIBUTE, reads=(3, 1, 2),
                              writes=(1, 2))
        order = txn.op_order
        assert order[:3] == (("r", 3), ("r", 1), ("r", 2))
        assert order[3:] == (("w", 1), ("w", 2))
        assert txn.tuples == (3, 1, 2)

    def test_malicious_delta_mismatch(self):
        with pytest.raises(ValueError):
            TransactionSpec(0, TxnKind.MALICIOUS, reads=(), writes=(1, 2),
                            bad_deltas=(5,))
