"""Queries -> token batches -> decoder memory, for all three model modes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kg import HEAD, TAIL, KnowledgeGraph, MentionTable
from .model import GAS2S, DecoderMemory, EncoderOutput
from .sampler import SampledSubgraph
from .tokenizer import PAD, Vocabulary, encode
from .verbalize import verbalize_context, verbalize_query, verbalize_triple


@dataclass(frozen=True)
class Query:
    """``(entity, relation, ?)`` for tail queries, ``(?, relation, entity)`` for head queries."""

    entity: int
    relation: int
    direction: str
    answer: int
    exclude: tuple[int, int, int] | None = None

    @property
    def triple(self) -> tuple[int, int, int]:
        if self.direction == TAIL:
            return (self.entity, self.relation, self.answer)
        return (self.answer, self.relation, self.entity)


def queries_for(triples: np.ndarray, exclude_source: bool) -> list[Query]:
    """Tail then head query for every triple, in triple order."""
    out = []
    for h, r, t in np.asarray(triples).reshape(-1, 3).tolist():
        src = (h, r, t) if exclude_source else None
        out.append(Query(h, r, TAIL, t, src))
        out.append(Query(t, r, HEAD, h, src))
    return out


def make_training_queries(g: KnowledgeGraph) -> list[Query]:
    """Two queries per train triple, each excluding its own triple from sampled context."""
    return queries_for(g.train, exclude_source=True)


class Featurizer:
    """Verbalises and tokenises queries, triples and targets with memoisation."""

    def __init__(self, vocab: Vocabulary, mentions: MentionTable, mode: str, max_len: int = 512):
        self.vocab = vocab
        self.mentions = mentions
        self.mode = mode
        self.max_len = max_len
        self._triple_cache: dict[tuple[int, int, int], tuple[int, ...]] = {}
        self._target_cache: dict[int, tuple[int, ...]] = {}

    def query_text(self, q: Query, sub: SampledSubgraph | None = None) -> str:
        text = verbalize_query(q.entity, q.relation, q.direction, self.mentions)
        if self.mode == "flat-context":
            nbrs = [] if sub is None else [tuple(t) for t in sub.triples.tolist() if q.entity in (t[0], t[2])]
            text = verbalize_context(text, q.entity, nbrs, self.mentions)
        return text

    def query_tokens(self, q: Query, sub: SampledSubgraph | None = None) -> tuple[int, ...]:
        return tuple(encode(self.vocab, self.query_text(q, sub), self.max_len))

    def triple_tokens(self, triple) -> tuple[int, ...]:
        key = tuple(int(x) for x in triple)
        hit = self._triple_cache.get(key)
        if hit is None:
            hit = self._triple_cache[key] = tuple(encode(self.vocab, verbalize_triple(key, self.mentions), self.max_len))
        return hit

    def target_tokens(self, entity: int) -> tuple[int, ...]:
        hit = self._target_cache.get(entity)
        if hit is None:
            hit = self._target_cache[entity] = tuple(encode(self.vocab, self.mentions.entity[entity], self.max_len))
        return hit


def pad_ids(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


@dataclass
class Batch:
    mode: str
    enc_ids: np.ndarray                 # (S, L) unique encoder sequences
    query_rows: np.ndarray              # (B,)
    targets: np.ndarray                 # (B, T)
    triple_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    endpoints: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    relations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    num_nodes: int = 0
    memory_index: np.ndarray | None = None  # (B, M) rows of the memory pool
    memory_mask: np.ndarray | None = None
    layouts: list[dict] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.query_rows)


def prepare_batch(
    feat: Featurizer,
    queries: Sequence[Query],
    subgraphs: Sequence[SampledSubgraph],
    m: int,
    with_targets: bool = True,
) -> Batch:
    if len(queries) != len(subgraphs) or not queries:
        raise ValueError("need one subgraph per query and at least one query")
    rows: dict[tuple[int, ...], int] = {}
    seqs: list[tuple[int, ...]] = []

    def row(tokens):
        r = rows.get(tokens)
        if r is None:
            r = rows[tokens] = len(seqs)
            seqs.append(tokens)
        return r

    query_rows = [row(feat.query_tokens(q, s)) for q, s in zip(queries, subgraphs)]
    targets = pad_ids([feat.target_tokens(q.answer) for q in queries]) if with_targets else np.zeros((len(queries), 0), np.int64)
    if feat.mode != "ga-s2s":
        return Batch(feat.mode, pad_ids(seqs), np.array(query_rows), targets, layouts=[{} for _ in queries])

    trip_rows, ends, rels, slots, layouts = [], [], [], [], []
    node_off = 0
    n_trip = 0
    per_query = []
    for qr, sub in zip(query_rows, subgraphs):
        tr = [row(feat.triple_tokens(t)) for t in sub.triples.tolist()]
        per_query.append((qr, tr, node_off, sub.num_nodes))
        trip_rows.extend(tr)
        ends.append(sub.edge_endpoints + node_off)
        rels.append(sub.edge_relations)
        node_off += sub.num_nodes
        n_trip += len(tr)
    S = len(seqs)
    pool_nodes = S * m
    zero_row = pool_nodes + node_off
    for qr, tr, off, nv in per_query:
        idx = [qr * m + j for j in range(m)]
        blocks = []
        for r in tr:
            blocks.append(len(idx))
            idx.extend(r * m + j for j in range(m))
        node_start = len(idx)
        idx.extend(range(pool_nodes + off, pool_nodes + off + nv))
        slots.append(idx)
        layouts.append({"query": 0, "triples": blocks, "nodes": node_start, "size": len(idx)})
    width = max(len(s) for s in slots)
    mem_index = np.full((len(slots), width), zero_row, dtype=np.int64)
    mem_mask = np.zeros((len(slots), width), dtype=bool)
    for i, s in enumerate(slots):
        mem_index[i, : len(s)] = s
        mem_mask[i, : len(s)] = True
    return Batch(
        mode="ga-s2s",
        enc_ids=pad_ids(seqs),
        query_rows=np.array(query_rows, dtype=np.int64),
        targets=targets,
        triple_rows=np.array(trip_rows, dtype=np.int64),
        endpoints=np.concatenate(ends) if ends else np.zeros((0, 2), np.int64),
        relations=np.concatenate(rels) if rels else np.zeros(0, np.int64),
        num_nodes=node_off,
        memory_index=mem_index,
        memory_mask=mem_mask,
        layouts=layouts,
    )


def _dropout_rng(rng, train):
    return rng if train else None


def forward_memory(model: GAS2S, batch: Batch, train: bool = False, rng=None) -> DecoderMemory:
    """Encoder (+ graph stage in ga-s2s mode) up to the decoder memory."""
    cfg = model.cfg
    if batch.mode != cfg.mode:
        raise ValueError(f"batch prepared for mode {batch.mode!r} but model is {cfg.mode!r}")
    enc = model.encode_batch(batch.enc_ids, train=train, rng=_dropout_rng(rng, train))
    if cfg.mode != "ga-s2s":
        mask = enc.mask[batch.query_rows]
        width = int(mask.sum(axis=1).max())
        hidden = ad.take(enc.hidden, batch.query_rows, axis=0)[:, :width]
        return DecoderMemory(hidden, mask[:, :width], batch.layouts)

    S, d = enc.hidden.shape[0], cfg.d_model
    distilled = model.distill(enc)                                       # (S, m, d)
    cls = enc.hidden[:, 0, :]                                            # (S, d)
    x = model.aggregate_entity_features(batch.num_nodes, batch.endpoints, ad.take(cls, batch.triple_rows))
    nodes = model.rgat_forward(x, batch.endpoints, batch.relations, train, _dropout_rng(rng, train))
    pool = ad.concat([distilled.reshape(S * cfg.m, d), nodes, Tensor(np.zeros((1, d)))], axis=0)
    memory = ad.take(pool, batch.memory_index)
    return DecoderMemory(memory, batch.memory_mask, batch.layouts)


def build_decoder_memory(
    mode: str,
    query_d: Tensor | None = None,
    triple_ds: Sequence[Tensor] = (),
    nodes: Tensor | None = None,
    query_encoding: EncoderOutput | None = None,
) -> DecoderMemory:
    """Single-query memory assembly.

    ``ga-s2s`` concatenates the distilled query block (m, d), the distilled
    triple blocks in subgraph order and the node-feature rows. The text-only
    modes pass the query's encoder output through unchanged.
    """
    if mode == "ga-s2s":
        if query_d is None or nodes is None:
            raise ValueError("ga-s2s memory needs distilled query vectors and node features")
        parts = [query_d, *triple_ds, nodes]
        m = query_d.shape[0]
        layout = {
            "query": 0,
            "triples": [m * (i + 1) for i in range(len(triple_ds))],
            "nodes": m * (1 + len(triple_ds)),
        }
        mem = ad.concat(parts, axis=0)
        layout["size"] = mem.shape[0]
        return DecoderMemory(ad.reshape(mem, (1,) + mem.shape), np.ones((1, mem.shape[0]), dtype=bool), [layout])
    if mode in ("plain", "flat-context"):
        if query_encoding is None or query_d is not None or triple_ds or nodes is not None:
            raise ValueError(f"{mode} memory takes only the query encoder output")
        return DecoderMemory(query_encoding.hidden, query_encoding.mask, [{}])
    raise ValueError(f"unknown mode {mode!r}")
