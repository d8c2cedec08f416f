"""Beam search over the decoder with exact (unnormalised) sequence log-probabilities."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .model import GAS2S, DecoderMemory
from .tokenizer import EOS, Vocabulary, decode


def beam_search(
    step: Callable[[np.ndarray], np.ndarray],
    beam_width: int,
    max_new_tokens: int,
    eos: int = EOS,
) -> list[tuple[tuple[int, ...], float]]:
    """EOS-terminated token sequences with their summed log-probabilities, best first.

    ``step`` maps a (K, t) prefix matrix to (K, V) next-token log-probs. Each
    live prefix proposes its ``beam_width`` best tokens; the best
    ``beam_width`` unfinished candidates stay live. Search stops once
    ``beam_width`` hypotheses have finished and no live prefix can beat the
    worst of them. Ties are broken by the token sequence.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[tuple[int, ...], float]] = []
    for _ in range(max_new_tokens):
        prefixes = np.array([p for p, _ in live], dtype=np.int64).reshape(len(live), -1)
        logp = step(prefixes)
        cands = []
        for (p, s), row in zip(live, logp):
            k = min(beam_width, len(row))
            top = np.argpartition(-row, k - 1)[:k] if k < len(row) else np.arange(len(row))
            top = sorted(top.tolist(), key=lambda t: (-row[t], t))[:k]
            cands.extend((p + (t,), s + float(row[t])) for t in top)
        cands.sort(key=lambda c: (-c[1], c[0]))
        cands = cands[:beam_width]
        live = []
        for p, s in cands:
            (finished if p[-1] == eos else live).append((p, s))
        finished.sort(key=lambda c: (-c[1], c[0]))
        finished = finished[:beam_width]
        if not live:
            break
        if len(finished) >= beam_width and live[0][1] <= finished[-1][1]:
            break
    return finished


def generate(
    model: GAS2S,
    memory: DecoderMemory,
    vocab: Vocabulary,
    beam_width: int,
    max_new_tokens: int = 32,
) -> list[tuple[str, float]]:
    """Decoded candidate strings with exact log-probabilities, sorted descending."""
    if memory.memory.shape[0] != 1:
        raise ValueError("generate expects the memory of a single query")
    hyps = beam_search(lambda prefixes: model.next_token_logprobs(memory, prefixes), beam_width, max_new_tokens)
    return [(decode(vocab, toks), score) for toks, score in hyps]


def greedy(model: GAS2S, memory: DecoderMemory, max_new_tokens: int = 32) -> tuple[int, ...]:
    toks: list[int] = []
    for _ in range(max_new_tokens):
        lp = model.next_token_logprobs(memory, np.array([toks], dtype=np.int64).reshape(1, -1))[0]
        t = int(np.argmax(lp))
        toks.append(t)
        if t == EOS:
            break
    return tuple(toks)
