"""Deterministic byte-level pair-merge tokenizer with reserved structural tokens."""

from __future__ import annotations

import heapq
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

log = logging.getLogger(__name__)

PAD, EOS, UNK, CLS, SEP = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "</s>", "<unk>", "[CLS]", "|")
MAX_LEN = 512
VERSION = 1

_SPLIT_RESERVED = re.compile(r"(\[CLS\]|\|)")
_PRETOKEN = re.compile(r"\s*\S+|\s+")


def _segments(text: str) -> list[str | int]:
    """Split ``text`` into plain segments and reserved token ids."""
    out: list[str | int] = []
    for part in _SPLIT_RESERVED.split(text):
        if part == "[CLS]":
            out.append(CLS)
        elif part == "|":
            out.append(SEP)
        elif part:
            out.append(part)
    return out


def _pretokens(text: str) -> Iterable[bytes]:
    for seg in _segments(text):
        if isinstance(seg, str):
            for piece in _PRETOKEN.findall(seg):
                yield piece.encode("utf-8")


@dataclass
class Vocabulary:
    alphabet: list[int]
    merges: list[tuple[int, int]]
    target_size: int | None = None
    tokens: list[bytes] = field(init=False, repr=False)
    _byte_id: dict[int, int] = field(init=False, repr=False)
    _rank: dict[tuple[int, int], int] = field(init=False, repr=False)
    _cache: dict[bytes, tuple[int, ...]] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        base = len(RESERVED)
        self.tokens = [s.encode() for s in RESERVED] + [bytes([b]) for b in self.alphabet]
        self._byte_id = {b: base + i for i, b in enumerate(self.alphabet)}
        self._rank = {}
        for i, (a, b) in enumerate(self.merges):
            self._rank[(a, b)] = i
            self.tokens.append(self.tokens[a] + self.tokens[b])
        self._cache = {}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def _encode_piece(self, piece: bytes) -> tuple[int, ...]:
        hit = self._cache.get(piece)
        if hit is not None:
            return hit
        syms = [self._byte_id.get(b, UNK) for b in piece]
        while len(syms) > 1:
            best, best_rank = None, None
            for i in range(len(syms) - 1):
                rk = self._rank.get((syms[i], syms[i + 1]))
                if rk is not None and (best_rank is None or rk < best_rank):
                    best, best_rank = (syms[i], syms[i + 1]), rk
            if best is None:
                break
            new_id = len(RESERVED) + len(self.alphabet) + best_rank
            merged, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == best:
                    merged.append(new_id)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            syms = merged
        out = tuple(syms)
        self._cache[piece] = out
        return out

    def to_json(self) -> dict:
        return {
            "version": VERSION,
            "reserved": list(RESERVED),
            "alphabet": self.alphabet,
            "merges": [[a, b] for a, b in self.merges],
            "vocab_size": self.size,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        if obj.get("version") != VERSION or list(obj.get("reserved", [])) != list(RESERVED):
            raise ValueError("unsupported vocabulary file")
        vocab = cls(alphabet=[int(b) for b in obj["alphabet"]], merges=[(int(a), int(b)) for a, b in obj["merges"]])
        if vocab.size != obj["vocab_size"]:
            raise ValueError("vocabulary size mismatch")
        return vocab

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def train_tokenizer(corpus: Iterable[str], vocab_size: int = 8000) -> Vocabulary:
    """Learn byte-pair merges over ``corpus`` until the vocabulary has ``vocab_size`` entries.

    Ties between equally frequent pairs go to the lexicographically smallest
    byte pair. If the corpus runs out of pairs first, a smaller vocabulary is
    returned and a warning is logged.
    """
    words: Counter[bytes] = Counter()
    n_texts = 0
    for text in corpus:
        n_texts += 1
        words.update(_pretokens(text))
    if n_texts == 0:
        raise ValueError("tokenizer corpus is empty")
    alphabet = sorted({b for w in words for b in w})
    minimum = len(RESERVED) + len(alphabet)
    if vocab_size <= minimum:
        raise ValueError(f"vocab_size must exceed {minimum} (reserved tokens + distinct bytes), got {vocab_size}")

    base = len(RESERVED)
    byte_id = {b: base + i for i, b in enumerate(alphabet)}
    tokens = [s.encode() for s in RESERVED] + [bytes([b]) for b in alphabet]
    seqs = [[byte_id[b] for b in w] for w in words]
    freqs = list(words.values())

    counts: dict[tuple[int, int], int] = defaultdict(int)
    where: dict[tuple[int, int], set[int]] = defaultdict(set)
    for wi, syms in enumerate(seqs):
        for p in zip(syms, syms[1:]):
            counts[p] += freqs[wi]
            where[p].add(wi)

    def key(p):
        return (-counts[p], tokens[p[0]], tokens[p[1]], p)

    heap = [key(p) for p in counts]
    heapq.heapify(heap)
    merges: list[tuple[int, int]] = []
    while len(tokens) < vocab_size and heap:
        neg, _, _, pair = heapq.heappop(heap)
        if counts.get(pair, 0) != -neg or -neg <= 0:
            continue
        new_id = len(tokens)
        tokens.append(tokens[pair[0]] + tokens[pair[1]])
        merges.append(pair)
        touched = set()
        for wi in sorted(where.pop(pair, ())):
            syms, f = seqs[wi], freqs[wi]
            for p in zip(syms, syms[1:]):
                counts[p] -= f
                touched.add(p)
            merged, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == pair:
                    merged.append(new_id)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            seqs[wi] = merged
            for p in zip(merged, merged[1:]):
                counts[p] += f
                where[p].add(wi)
                touched.add(p)
        counts.pop(pair, None)
        for p in touched:
            if counts.get(p, 0) > 0:
                heapq.heappush(heap, key(p))
            else:
                counts.pop(p, None)
                where.pop(p, None)
    if len(tokens) < vocab_size:
        log.warning("corpus supports only %d of %d requested tokens", len(tokens), vocab_size)
    return Vocabulary(alphabet=alphabet, merges=merges, target_size=vocab_size)


def encode(v: Vocabulary, text: str, max_len: int = MAX_LEN) -> list[int]:
    """Token ids for ``text`` followed by EOS, truncated to ``max_len`` keeping the EOS."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids: list[int] = []
    for seg in _segments(text):
        if isinstance(seg, int):
            ids.append(seg)
        else:
            for piece in _PRETOKEN.findall(seg):
                ids.extend(v._encode_piece(piece.encode("utf-8")))
        if len(ids) >= max_len:
            break
    return ids[: max_len - 1] + [EOS]


def decode(v: Vocabulary, ids: Iterable[int]) -> str:
    buf = bytearray()
    for i in ids:
        i = int(i)
        if i == EOS:
            break
        if i == PAD:
            continue
        if i == UNK:
            buf += "�".encode()
        elif 0 <= i < v.size:
            buf += v.tokens[i]
    return buf.decode("utf-8", errors="replace")
