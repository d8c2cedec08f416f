"""Knowledge-graph store: ingestion, dense indexing, adjacency and the filter index."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
TAIL = "tail"
HEAD = "head"
OUTGOING = "outgoing"
INCOMING = "incoming"

ENTITY_LABELS = "entities.json"
RELATION_LABELS = "relations.json"


class DatasetError(Exception):
    """Raised when a dataset directory cannot be loaded."""


@dataclass(frozen=True)
class MentionTable:
    entity: list[str]
    relation: list[str]
    entity_lookup: dict[str, int] = field(repr=False)
    relation_lookup: dict[str, int] = field(repr=False)

    @classmethod
    def build(cls, entity: list[str], relation: list[str]) -> "MentionTable":
        return cls(
            entity=entity,
            relation=relation,
            entity_lookup={s: i for i, s in enumerate(entity)},
            relation_lookup={s: i for i, s in enumerate(relation)},
        )


@dataclass(frozen=True)
class _CSR:
    ptr: np.ndarray
    rel: np.ndarray
    other: np.ndarray
    tid: np.ndarray

    def row(self, e: int) -> slice:
        return slice(int(self.ptr[e]), int(self.ptr[e + 1]))


def _build_csr(src: np.ndarray, rel: np.ndarray, dst: np.ndarray, n: int) -> _CSR:
    tid = np.arange(len(src), dtype=np.int64)
    # sort by (src, rel, dst, tid) so every row is ordered by (relation, other)
    order = np.lexsort((tid, dst, rel, src))
    counts = np.bincount(src, minlength=n) if len(src) else np.zeros(n, dtype=np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return _CSR(ptr=ptr, rel=rel[order], other=dst[order], tid=tid[order])


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable, densely indexed triple store.

    Adjacency (``out_adj``/``in_adj``) holds the train split only; the filter
    index spans all three splits.
    """

    entity_ids: list[str]
    relation_ids: list[str]
    triples: dict[str, np.ndarray]
    mentions: MentionTable
    out_adj: _CSR = field(repr=False)
    in_adj: _CSR = field(repr=False)
    filter_index: dict[tuple[int, int, str], frozenset[int]] = field(repr=False)
    entity_index: dict[str, int] = field(repr=False)
    relation_index: dict[str, int] = field(repr=False)

    @property
    def num_entities(self) -> int:
        return len(self.entity_ids)

    @property
    def num_relations(self) -> int:
        return len(self.relation_ids)

    @property
    def train(self) -> np.ndarray:
        return self.triples["train"]

    @classmethod
    def from_arrays(
        cls,
        entity_ids: list[str],
        relation_ids: list[str],
        triples: dict[str, np.ndarray],
        entity_mentions: list[str],
        relation_mentions: list[str],
    ) -> "KnowledgeGraph":
        n_ent = len(entity_ids)
        splits = {}
        for name in SPLITS:
            arr = np.asarray(triples.get(name, np.zeros((0, 3))), dtype=np.int64).reshape(-1, 3)
            if arr.size and (arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= n_ent):
                raise DatasetError(f"{name}: entity id out of range")
            if arr.size and (arr[:, 1].min() < 0 or arr[:, 1].max() >= len(relation_ids)):
                raise DatasetError(f"{name}: relation id out of range")
            arr.setflags(write=False)
            splits[name] = arr
        tr = splits["train"]
        out_adj = _build_csr(tr[:, 0], tr[:, 1], tr[:, 2], n_ent)
        in_adj = _build_csr(tr[:, 2], tr[:, 1], tr[:, 0], n_ent)

        answers: dict[tuple[int, int, str], set[int]] = defaultdict(set)
        for arr in splits.values():
            for h, r, t in arr.tolist():
                answers[(h, r, TAIL)].add(t)
                answers[(t, r, HEAD)].add(h)
        return cls(
            entity_ids=list(entity_ids),
            relation_ids=list(relation_ids),
            triples=splits,
            mentions=MentionTable.build(list(entity_mentions), list(relation_mentions)),
            out_adj=out_adj,
            in_adj=in_adj,
            filter_index={k: frozenset(v) for k, v in answers.items()},
            entity_index={s: i for i, s in enumerate(entity_ids)},
            relation_index={s: i for i, s in enumerate(relation_ids)},
        )

    def check_entity(self, e: int) -> None:
        if not 0 <= e < self.num_entities:
            raise ValueError(f"entity id {e} out of range [0, {self.num_entities})")

    def incident_edges(self, e: int) -> np.ndarray:
        """Train-triple indices touching ``e`` (outgoing first, then incoming; self-loops once)."""
        o = self.out_adj.tid[self.out_adj.row(e)]
        i = self.in_adj.tid[self.in_adj.row(e)]
        if len(o) and len(i):
            i = i[~np.isin(i, o)]
        return np.concatenate([o, i])


def neighbors(g: KnowledgeGraph, e: int) -> list[tuple[int, int, str]]:
    """Outgoing then incoming train edges of ``e`` as ``(relation, other, orientation)``."""
    g.check_entity(e)
    out, inc = g.out_adj.row(e), g.in_adj.row(e)
    res = [(int(r), int(t), OUTGOING) for r, t in zip(g.out_adj.rel[out], g.out_adj.other[out])]
    res += [(int(r), int(h), INCOMING) for r, h in zip(g.in_adj.rel[inc], g.in_adj.other[inc])]
    return res


def degrees(g: KnowledgeGraph) -> np.ndarray:
    return np.diff(g.out_adj.ptr) + np.diff(g.in_adj.ptr)


def graph_stats(g: KnowledgeGraph) -> dict:
    n = g.num_entities
    if n < 2:
        raise ValueError("density is undefined for fewer than 2 entities")
    n_train = len(g.train)
    deg = np.sort(degrees(g))
    return {
        "num_entities": n,
        "num_relations": g.num_relations,
        "train": n_train,
        "valid": len(g.triples["valid"]),
        "test": len(g.triples["test"]),
        "avg_degree": 2.0 * n_train / n,
        "median_degree": float(deg[(n - 1) // 2]),  # lower median
        "density": n_train / (n * (n - 1) / 2.0),
    }


def filter_answers(g: KnowledgeGraph, e: int, r: int, direction: str) -> frozenset[int]:
    return g.filter_index.get((e, r, direction), frozenset())


# -- ingestion ---------------------------------------------------------------


def _read_labels(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise DatasetError(f"missing label file: {path}")
    with path.open(encoding="utf-8") as fh:
        raw = json.load(fh)
    labels = {}
    for key, val in raw.items():
        # CoDEx ships {"Q42": {"label": ..., "description": ...}}
        if isinstance(val, dict):
            val = val.get("label") or ""
        labels[str(key)] = str(val).strip()
    return labels


def _read_triples(path: Path) -> list[tuple[str, str, str]]:
    if not path.is_file():
        raise DatasetError(f"missing triple file: {path}")
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{path.name}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def disambiguate(raw_ids: list[str], labels: dict[str, str]) -> list[str]:
    """Mentions for ``raw_ids``; colliding labels after the first (raw-id order) get ``" #<raw-id>"``."""
    mention = {}
    for rid in raw_ids:
        s = labels.get(rid, "").strip()
        mention[rid] = s if s else rid
    by_text: dict[str, list[str]] = defaultdict(list)
    for rid in raw_ids:
        by_text[mention[rid]].append(rid)
    for text, rids in by_text.items():
        if len(rids) > 1:
            for rid in sorted(rids)[1:]:
                mention[rid] = f"{text} #{rid}"
    out = [mention[rid] for rid in raw_ids]
    if len(set(out)) != len(out):
        raise DatasetError("mention disambiguation produced duplicates")
    return out


def _find_labels(root: Path, name: str) -> Path:
    """``root/name``, else the CoDEx layout ``<data>/{entities,relations}/en/name`` next to ``triples/<kg>``."""
    here = root / name
    if here.is_file():
        return here
    codex = root.parent.parent / Path(name).stem / "en" / name
    return codex if codex.is_file() else here


def load_dataset(
    root: str | Path,
    entity_labels: str | Path | None = None,
    relation_labels: str | Path | None = None,
) -> KnowledgeGraph:
    """Load ``train.txt``/``valid.txt``/``test.txt`` plus the two label files under ``root``.

    Label files may live elsewhere: the CoDEx layout is found automatically,
    other locations can be passed explicitly.
    """
    root = Path(root)
    ent_labels = _read_labels(Path(entity_labels) if entity_labels else _find_labels(root, ENTITY_LABELS))
    rel_labels = _read_labels(Path(relation_labels) if relation_labels else _find_labels(root, RELATION_LABELS))
    raw = {name: _read_triples(root / f"{name}.txt") for name in SPLITS}

    used_ent, used_rel = set(), set()
    for rows in raw.values():
        for h, r, t in rows:
            used_ent.update((h, t))
            used_rel.add(r)
    missing = sorted(used_ent - ent_labels.keys()) + sorted(used_rel - rel_labels.keys())
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise DatasetError(f"{len(missing)} raw id(s) without a label: {shown}")

    # label-file order first, restricted to ids that occur in some split
    entity_ids = [k for k in ent_labels if k in used_ent]
    relation_ids = [k for k in rel_labels if k in used_rel]
    e_idx = {k: i for i, k in enumerate(entity_ids)}
    r_idx = {k: i for i, k in enumerate(relation_ids)}
    triples = {
        name: np.array([(e_idx[h], r_idx[r], e_idx[t]) for h, r, t in rows], dtype=np.int64).reshape(-1, 3)
        for name, rows in raw.items()
    }
    g = KnowledgeGraph.from_arrays(
        entity_ids,
        relation_ids,
        triples,
        disambiguate(entity_ids, ent_labels),
        disambiguate(relation_ids, rel_labels),
    )
    log.info(
        "loaded %s: %d entities, %d relations, %s",
        root, g.num_entities, g.num_relations, {k: len(v) for k, v in g.triples.items()},
    )
    return g


def write_split(g: KnowledgeGraph, split: str, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for h, r, t in g.triples[split].tolist():
            fh.write(f"{g.entity_ids[h]}\t{g.relation_ids[r]}\t{g.entity_ids[t]}\n")


def write_dataset(
    root: str | Path,
    triples: dict[str, list[tuple[str, str, str]]],
    entity_labels: dict[str, str],
    relation_labels: dict[str, str],
) -> Path:
    """Write raw-id triples and labels in the on-disk layout ``load_dataset`` reads."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        with (root / f"{name}.txt").open("w", encoding="utf-8") as fh:
            for h, r, t in triples.get(name, []):
                fh.write(f"{h}\t{r}\t{t}\n")
    (root / ENTITY_LABELS).write_text(json.dumps(entity_labels, indent=1, ensure_ascii=False), encoding="utf-8")
    (root / RELATION_LABELS).write_text(json.dumps(relation_labels, indent=1, ensure_ascii=False), encoding="utf-8")
    return root
