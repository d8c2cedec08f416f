"""Capped k-hop neighbourhood sampling around a query entity."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kg import KnowledgeGraph
from .seeding import derive_seed


@dataclass(frozen=True)
class SubgraphSpec:
    fanout: tuple[int, ...] = (75,)
    max_edges: int = 512

    def __post_init__(self):
        object.__setattr__(self, "fanout", tuple(int(c) for c in self.fanout))
        if any(c <= 0 for c in self.fanout):
            raise ValueError(f"fanout caps must be positive, got {self.fanout}")
        if self.max_edges < 0:
            raise ValueError("max_edges must be >= 0")

    @property
    def k(self) -> int:
        return len(self.fanout)

    @classmethod
    def parse(cls, text: str, max_edges: int = 512) -> "SubgraphSpec":
        text = text.strip()
        return cls(tuple(int(x) for x in text.split(",")) if text else (), max_edges)


@dataclass(frozen=True)
class SampledSubgraph:
    """Local view of a sampled neighbourhood; local node 0 is always the query entity."""

    nodes: np.ndarray           # (V,) global entity ids
    edge_endpoints: np.ndarray  # (n, 2) local [head, tail]
    edge_relations: np.ndarray  # (n,) relation ids
    triples: np.ndarray         # (n, 3) global (h, r, t)
    triple_ids: np.ndarray = field(repr=False)  # (n,) row indices into the train split
    query_local: int = 0

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.triples)


def _excluded_ids(g: KnowledgeGraph, exclude) -> set[int]:
    if exclude is None:
        return set()
    h, r, t = (int(x) for x in exclude)
    row = g.out_adj.row(h)
    hit = (g.out_adj.rel[row] == r) & (g.out_adj.other[row] == t)
    return set(g.out_adj.tid[row][hit].tolist())


def sample_khop(
    g: KnowledgeGraph,
    e: int,
    spec: SubgraphSpec,
    seed: int,
    exclude: Sequence[int] | None = None,
) -> SampledSubgraph:
    """Frontier-expand ``spec.k`` hops from ``e`` then add induced edges up to ``spec.max_edges``.

    At hop ``i`` every frontier node keeps at most ``spec.fanout[i]`` of its
    incident train edges, drawn uniformly without replacement. Every train
    occurrence of ``exclude`` is withheld from the result.
    """
    g.check_entity(e)
    rng = np.random.Generator(np.random.Philox(key=int(seed) % (1 << 64)))
    banned = _excluded_ids(g, exclude)
    train = g.train

    local = {int(e): 0}
    order = [int(e)]
    picked: list[int] = []
    seen: set[int] = set()
    frontier = [int(e)]
    for cap in spec.fanout:
        nxt = []
        for v in frontier:
            pool = g.incident_edges(v)
            if banned:
                pool = pool[~np.isin(pool, list(banned))]
            if len(pool) > cap:
                pool = pool[np.sort(rng.choice(len(pool), size=cap, replace=False))]
            for tid in pool.tolist():
                if tid in seen:
                    continue
                seen.add(tid)
                picked.append(tid)
                h, _, t = train[tid]
                for x in (int(h), int(t)):
                    if x not in local:
                        local[x] = len(order)
                        order.append(x)
                        nxt.append(x)
        frontier = nxt

    if len(picked) > spec.max_edges:
        picked = picked[: spec.max_edges]
        seen = set(picked)
        local, order = {int(e): 0}, [int(e)]
        for tid in picked:
            h, _, t = train[tid]
            for x in (int(h), int(t)):
                if x not in local:
                    local[x] = len(order)
                    order.append(x)

    extra = []
    if len(picked) < spec.max_edges:
        for v in order:
            row = g.out_adj.row(v)
            for r, t, tid in zip(
                g.out_adj.rel[row].tolist(), g.out_adj.other[row].tolist(), g.out_adj.tid[row].tolist()
            ):
                if t in local and tid not in seen and tid not in banned:
                    extra.append((local[v], r, local[t], tid))
        extra.sort()
        extra = extra[: spec.max_edges - len(picked)]
    tids = np.array(picked + [x[3] for x in extra], dtype=np.int64)

    triples = train[tids] if len(tids) else np.zeros((0, 3), dtype=np.int64)
    if len(tids):
        endpoints = np.array([[local[int(h)], local[int(t)]] for h, _, t in triples], dtype=np.int64)
    else:
        endpoints = np.zeros((0, 2), dtype=np.int64)
    return SampledSubgraph(
        nodes=np.array(order, dtype=np.int64),
        edge_endpoints=endpoints,
        edge_relations=triples[:, 1].copy(),
        triples=np.array(triples),
        triple_ids=tids,
    )


def batch_sample(
    g: KnowledgeGraph,
    queries: Sequence[tuple],
    spec: SubgraphSpec,
    base_seed: int,
    start_index: int = 0,
) -> list[SampledSubgraph]:
    """Sample each ``(entity, direction, exclude)`` query with seed ``derive_seed(base_seed, index)``.

    ``start_index`` is the global index of ``queries[0]`` so that a batch can
    be split into parts without changing any sample.
    """
    if not queries:
        raise ValueError("queries must be non-empty")
    return [
        sample_khop(g, q[0], spec, derive_seed(base_seed, start_index + i), q[2] if len(q) > 2 else None)
        for i, q in enumerate(queries)
    ]

