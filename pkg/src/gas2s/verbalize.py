"""Text templates for queries, neighbour triples and flattened 1-hop context."""

from __future__ import annotations

from typing import Iterable

from .kg import HEAD, TAIL, MentionTable

CLS = "[CLS]"
SEP = "|"
_PREFIX = {TAIL: "Predict tail:", HEAD: "Predict head:"}


def verbalize_query(e: int, r: int, direction: str, m: MentionTable) -> str:
    if direction not in _PREFIX:
        raise ValueError(f"direction must be 'tail' or 'head', got {direction!r}")
    return f"{_PREFIX[direction]} {m.entity[e].strip()} {SEP} {m.relation[r].strip()}"


def verbalize_triple(triple: tuple[int, int, int], m: MentionTable) -> str:
    h, r, t = (int(x) for x in triple)
    return f"{CLS} {m.entity[h].strip()} {SEP} {m.relation[r].strip()} {SEP} {m.entity[t].strip()}"


def verbalize_context(
    query_text: str, e: int, triples: Iterable[tuple[int, int, int]], m: MentionTable
) -> str:
    """Query followed by the linearised 1-hop neighbourhood of ``e``.

    Edges where ``e`` is the tail are written as ``inverse of <relation> | <head>``.
    """
    parts = []
    for h, r, t in triples:
        if h == e:
            parts.append(f"{m.relation[r].strip()} {SEP} {m.entity[t].strip()}")
        elif t == e:
            parts.append(f"inverse of {m.relation[r].strip()} {SEP} {m.entity[h].strip()}")
    return f"{query_text} {SEP} Context: " + f" {SEP} ".join(parts)


def template_words() -> list[str]:
    """Fixed template text, included in tokenizer training corpora."""
    return [_PREFIX[TAIL], _PREFIX[HEAD], "Context:", "inverse of"]


def mention_corpus(m: MentionTable) -> list[str]:
    return list(m.entity) + list(m.relation) + template_words()
