"""Generation-based entity ranking and filtered MRR / Hits@k."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .beam import generate
from .kg import HEAD, TAIL, KnowledgeGraph, MentionTable, filter_answers
from .model import GAS2S
from .pipeline import Featurizer, Query, forward_memory, prepare_batch, queries_for
from .sampler import SubgraphSpec, sample_khop
from .seeding import derive_seed
from .tokenizer import Vocabulary

log = logging.getLogger(__name__)

MISS = None
HITS_AT = (1, 3, 10)


@dataclass(frozen=True)
class EvalQuery:
    entity: int
    relation: int
    direction: str
    gold: int
    filter: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.gold in self.filter:
            raise ValueError("gold answer must not be in the filter set")


@dataclass
class MetricsReport:
    mrr: float
    hits: dict[int, float]
    query_count: int
    per_direction: dict[str, "MetricsReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"mrr": self.mrr, "hits": {str(k): v for k, v in self.hits.items()}, "query_count": self.query_count}
        if self.per_direction:
            out["per_direction"] = {k: v.to_dict() for k, v in self.per_direction.items()}
        return out


def rank_gold(candidates: Sequence[tuple[str, float]], q: EvalQuery, m: MentionTable) -> int | None:
    """1-based filtered rank of ``q.gold`` among generated candidates, or ``MISS``."""
    seen: set[int] = set()
    rank = 0
    for text, _ in candidates:
        ent = m.entity_lookup.get(text.strip())
        if ent is None or ent in seen:
            continue
        seen.add(ent)
        if ent in q.filter:
            continue
        rank += 1
        if ent == q.gold:
            return rank
    return MISS


def compute_metrics(ranks: Sequence[int | None], ks: Sequence[int] = HITS_AT) -> MetricsReport:
    if len(ranks) == 0:
        raise ValueError("compute_metrics needs at least one rank")
    rr = [0.0 if r is MISS else 1.0 / r for r in ranks]
    hits = {k: sum(1 for r in ranks if r is not MISS and r <= k) / len(ranks) for k in ks}
    return MetricsReport(mrr=sum(rr) / len(ranks), hits=hits, query_count=len(ranks))


def eval_query(g: KnowledgeGraph, q: Query) -> EvalQuery:
    others = filter_answers(g, q.entity, q.relation, q.direction) - {q.answer}
    return EvalQuery(q.entity, q.relation, q.direction, q.answer, frozenset(others))


@dataclass
class EvalConfig:
    beam_width: int = 50
    max_new_tokens: int = 32
    fanout: tuple[int, ...] = (75,)
    max_edges: int = 512
    seed: int = 0
    batch_size: int = 16
    workers: int = 1

    @property
    def spec(self) -> SubgraphSpec:
        return SubgraphSpec(tuple(self.fanout), self.max_edges)


def predict_candidates(
    model: GAS2S,
    vocab: Vocabulary,
    g: KnowledgeGraph,
    queries: Sequence[Query],
    cfg: EvalConfig,
    start_index: int = 0,
) -> list[list[tuple[str, float]]]:
    """Beam candidates for each query; neighbourhoods sampled without exclusion."""
    feat = Featurizer(vocab, g.mentions, model.cfg.mode, model.cfg.max_len)
    spec = cfg.spec
    chunks = [
        (i, queries[i : i + cfg.batch_size]) for i in range(0, len(queries), cfg.batch_size)
    ]

    def run(chunk):
        off, qs = chunk
        subs = [
            sample_khop(g, q.entity, spec, derive_seed(cfg.seed, "eval", start_index + off + j), q.exclude)
            for j, q in enumerate(qs)
        ]
        mem = forward_memory(model, prepare_batch(feat, qs, subs, model.cfg.m, with_targets=False))
        return [generate(model, mem.select(j), vocab, cfg.beam_width, cfg.max_new_tokens) for j in range(len(qs))]

    # the grad switch is process-global, so it is set once around all workers
    with ad.no_grad():
        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as pool:
                parts = list(pool.map(run, chunks))
        else:
            parts = [run(c) for c in chunks]
    return [c for part in parts for c in part]


def evaluate_queries(
    model: GAS2S, vocab: Vocabulary, g: KnowledgeGraph, queries: Sequence[Query], cfg: EvalConfig
) -> tuple[MetricsReport, list[int | None]]:
    cands = predict_candidates(model, vocab, g, queries, cfg)
    ranks = [rank_gold(c, eval_query(g, q), g.mentions) for c, q in zip(cands, queries)]
    report = compute_metrics(ranks)
    for direction in (TAIL, HEAD):
        sub = [r for r, q in zip(ranks, queries) if q.direction == direction]
        if sub:
            report.per_direction[direction] = compute_metrics(sub)
    return report, ranks


def evaluate_split(
    g: KnowledgeGraph, model: GAS2S, vocab: Vocabulary, split: str, cfg: EvalConfig
) -> MetricsReport:
    """Tail and head queries for every triple of ``split``, context sampled without exclusion."""
    if split not in g.triples:
        raise ValueError(f"unknown split {split!r}")
    queries = queries_for(g.triples[split], exclude_source=False)
    report, _ = evaluate_queries(model, vocab, g, queries, cfg)
    log.info("%s: MRR %.4f Hits@1 %.4f over %d queries", split, report.mrr, report.hits[1], report.query_count)
    return report
