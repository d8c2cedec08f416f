import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gas2s.kg import KnowledgeGraph
from gas2s.sampler import SubgraphSpec, batch_sample, sample_khop
from gas2s.seeding import derive_seed

from conftest import random_graph


def bfs_induced(g: KnowledgeGraph, e: int, k: int) -> tuple[set[int], set[int]]:
    """Exact k-hop node set over undirected train edges and the train triples induced on it."""
    tri = g.train.tolist()
    nodes, frontier = {e}, {e}
    for _ in range(k):
        nxt = set()
        for h, _, t in tri:
            if h in frontier and t not in nodes:
                nxt.add(t)
            if t in frontier and h not in nodes:
                nxt.add(h)
        nodes |= nxt
        frontier = nxt
    edges = {i for i, (h, _, t) in enumerate(tri) if h in nodes and t in nodes}
    return nodes, edges


def check_invariants(g, sub, e, spec, exclude=None):
    assert sub.nodes[sub.query_local] == e and sub.query_local == 0
    assert sub.num_edges <= spec.max_edges
    assert len(set(sub.nodes.tolist())) == sub.num_nodes
    if sub.num_edges:
        assert sub.edge_endpoints.max() < sub.num_nodes
    for (a, b), r, trip, tid in zip(sub.edge_endpoints, sub.edge_relations, sub.triples, sub.triple_ids):
        assert tuple(g.train[tid]) == tuple(trip)
        assert (sub.nodes[a], r, sub.nodes[b]) == tuple(trip)
    if exclude is not None:
        assert tuple(exclude) not in {tuple(t) for t in sub.triples.tolist()}


def test_zero_hops(toy):
    sub = sample_khop(toy, 2, SubgraphSpec((), 512), 0)
    assert sub.nodes.tolist() == [2] and sub.num_edges == 0
    assert sub.edge_endpoints.shape == (0, 2) and sub.edge_relations.shape == (0,)


def test_isolated_node():
    g = KnowledgeGraph.from_arrays(["a", "b", "c"], ["r"], {"train": [[0, 0, 1]]}, ["A", "B", "C"], ["R"])
    sub = sample_khop(g, 2, SubgraphSpec((5, 5)), 1)
    assert sub.nodes.tolist() == [2] and sub.num_edges == 0


def test_invalid_entity(toy):
    with pytest.raises(ValueError):
        sample_khop(toy, 99, SubgraphSpec((3,)), 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        SubgraphSpec((0,))
    assert SubgraphSpec.parse("10,5").fanout == (10, 5)
    assert SubgraphSpec.parse("").k == 0


def test_toy_graph_bfs_oracle():
    g = random_graph(np.random.default_rng(12), 12, 3, 20)
    big = int(max(np.bincount(g.train[:, [0, 2]].ravel(), minlength=12))) + 1
    for k in range(3):
        spec = SubgraphSpec((big,) * k, max_edges=10_000)
        for e in range(12):
            sub = sample_khop(g, e, spec, seed=5)
            nodes, edges = bfs_induced(g, e, k)
            assert set(sub.nodes.tolist()) == nodes
            assert set(sub.triple_ids.tolist()) == edges and len(sub.triple_ids) == len(edges)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 14), st.integers(1, 3), st.integers(0, 35), st.integers(0, 2**32 - 1),
       st.lists(st.integers(1, 4), max_size=3), st.integers(0, 40))
def test_invariants_random(n_ent, n_rel, n_train, seed, fanout, max_edges):
    g = random_graph(np.random.default_rng(seed), n_ent, n_rel, n_train)
    spec = SubgraphSpec(tuple(fanout), max_edges)
    e = seed % n_ent
    exclude = tuple(g.train[seed % n_train]) if n_train else None
    sub = sample_khop(g, e, spec, seed, exclude)
    check_invariants(g, sub, e, spec, exclude)
    again = sample_khop(g, e, spec, seed, exclude)
    assert np.array_equal(sub.triple_ids, again.triple_ids) and np.array_equal(sub.nodes, again.nodes)


def test_per_hop_cap():
    # query 0 has degree 6; with a cap of 2 only two of its edges come from hop 1
    g = KnowledgeGraph.from_arrays(
        [str(i) for i in range(7)], ["r"], {"train": [[0, 0, i] for i in range(1, 7)]},
        [f"n{i}" for i in range(7)], ["R"],
    )
    for s in range(20):
        sub = sample_khop(g, 0, SubgraphSpec((2,)), s)
        assert sub.num_edges == 2 and sub.num_nodes == 3


def test_exclusion_both_orientations():
    g = KnowledgeGraph.from_arrays(
        ["a", "b", "c"], ["r"], {"train": [[0, 0, 1], [0, 0, 1], [1, 0, 2]]}, ["A", "B", "C"], ["R"],
    )
    for e in range(3):
        sub = sample_khop(g, e, SubgraphSpec((5, 5)), 3, exclude=(0, 0, 1))
        assert (0, 0, 1) not in {tuple(t) for t in sub.triples.tolist()}
    # from the head side the excluded duplicate edges leave node 0 isolated
    assert sample_khop(g, 0, SubgraphSpec((5,)), 3, exclude=(0, 0, 1)).num_edges == 0


def test_max_edges_truncates():
    g = random_graph(np.random.default_rng(1), 8, 2, 30)
    sub = sample_khop(g, 0, SubgraphSpec((10, 10), max_edges=4), 0)
    assert sub.num_edges == 4
    assert set(sub.edge_endpoints.ravel().tolist()) | {0} == set(range(sub.num_nodes))


def test_uniform_frequency():
    # star: node 0 with five leaves; fan-out (2,) over 100 seeds keeps each edge ~2/5 of the time
    g = KnowledgeGraph.from_arrays(
        [str(i) for i in range(6)], ["r"], {"train": [[0, 0, i] for i in range(1, 6)]},
        [f"n{i}" for i in range(6)], ["R"],
    )
    counts = np.zeros(5)
    for s in range(100):
        sub = sample_khop(g, 0, SubgraphSpec((2,)), derive_seed("freq", s))
        assert sub.num_edges <= 2
        counts[sub.triple_ids] += 1
    assert np.all(np.abs(counts / 100 - 0.4) <= 0.1)


def test_batch_partition_independence(toy):
    queries = [(i % 4, "tail", None) for i in range(10)]
    spec = SubgraphSpec((2, 2))
    whole = batch_sample(toy, queries, spec, base_seed=9)
    parts = batch_sample(toy, queries[:5], spec, 9) + batch_sample(toy, queries[5:], spec, 9, start_index=5)
    for a, b in zip(whole, parts):
        assert np.array_equal(a.triple_ids, b.triple_ids) and np.array_equal(a.nodes, b.nodes)
    with pytest.raises(ValueError):
        batch_sample(toy, [], spec, 0)
