"""Deterministic synthetic knowledge graphs for overfitting and structure-dependence checks."""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np

from .kg import KnowledgeGraph, load_dataset, write_dataset

_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


def _names(n: int, seed: int) -> list[str]:
    syll = [c + v for c, v in itertools.product(_ONSETS, _VOWELS)]
    rng = np.random.default_rng(seed)
    out, seen = [], set()
    while len(out) < n:
        a, b, c = rng.choice(len(syll), 3)
        name = (syll[a] + syll[b]).capitalize() + " " + (syll[c] + syll[a]).capitalize()
        if name not in seen:
            seen.add(name)
            out.append(name)
    return out


def memorization_kg(num_entities: int = 50, num_triples: int = 100, seed: int = 7) -> dict:
    """Random multi-relational graph over ``num_entities`` named entities.

    Splits: ``num_triples`` train triples plus 10 valid and 10 test triples
    drawn from the same distribution.
    """
    rng = np.random.default_rng(seed)
    names = _names(num_entities, seed)
    ents = {f"E{i:03d}": names[i] for i in range(num_entities)}
    rels = {"R0": "likes", "R1": "works with", "R2": "lives near", "R3": "mentors", "R4": "admires"}
    keys = list(ents)
    total = num_triples + 20
    seen = set()
    triples = []
    while len(triples) < total:
        h, t = rng.choice(num_entities, 2, replace=False)
        r = int(rng.integers(len(rels)))
        tr = (keys[h], f"R{r}", keys[t])
        if tr not in seen:
            seen.add(tr)
            triples.append(tr)
    return {
        "triples": {"train": triples[:num_triples], "valid": triples[num_triples:num_triples + 10],
                    "test": triples[num_triples + 10:]},
        "entities": ents,
        "relations": rels,
    }


def two_hop_kg(num_hubs: int = 24, per_hub: int = 3, num_colors: int = 4, num_cities: int = 6,
               held_out: int = 16, seed: int = 11) -> dict:
    """Graph where a person's favourite colour equals the colour of the club they belong to.

    person --member of--> club --has color--> colour, so the answer sits two
    hops from the query entity and nothing in the query text reveals it.
    Clubs have degree ``per_hub + 1`` and people degree <= 3, so a (10, 5)
    fan-out always reaches the colour. Held-out people (test, then half as
    many for valid) have no favourite-colour triple in train, and their
    colours are balanced so a colour prior alone scores about 1/num_colors.
    """
    # separate stream from the name generator so names carry no trace of the colour layout
    rng = np.random.default_rng([seed, 1])
    colors = ["red", "green", "blue", "yellow", "purple", "orange"][:num_colors]
    people = _names(num_hubs * per_hub, seed)
    clubs = [f"club {n.split()[0].lower()}" for n in _names(num_hubs, seed + 1)]
    cities = [f"city of {n.split()[1].lower()}" for n in _names(num_cities, seed + 2)]
    ents: dict[str, str] = {}
    pid = [f"P{i:03d}" for i in range(len(people))]
    hid = [f"H{i:03d}" for i in range(num_hubs)]
    cid = [f"C{i}" for i in range(num_colors)]
    tid = [f"T{i}" for i in range(num_cities)]
    ents.update(zip(pid, people))
    ents.update(zip(hid, clubs))
    ents.update(zip(cid, colors))
    ents.update(zip(tid, cities))
    rels = {"member": "member of", "color": "has color", "lives": "lives in", "fav": "favorite color"}

    hub_color = [i % num_colors for i in range(num_hubs)]
    rng.shuffle(hub_color)
    train, fav = [], []
    for h in range(num_hubs):
        train.append((hid[h], "color", cid[hub_color[h]]))
    for i, p in enumerate(pid):
        h = i // per_hub
        train.append((p, "member", hid[h]))
        train.append((p, "lives", tid[int(rng.integers(num_cities))]))
        fav.append((p, "fav", cid[hub_color[h]]))
    # round-robin over colours so held-out answers are balanced
    by_color = [[f for f in fav if f[2] == c] for c in cid]
    for group in by_color:
        rng.shuffle(group)
    fav = [f for row in itertools.zip_longest(*by_color) for f in row if f is not None]
    test, valid, fav_train = fav[:held_out], fav[held_out:held_out + held_out // 2], fav[held_out + held_out // 2:]
    return {
        "triples": {"train": train + fav_train, "valid": valid, "test": test},
        "entities": ents,
        "relations": rels,
    }


KINDS = {"memorize": memorization_kg, "two-hop": two_hop_kg}


def write_synthetic(kind: str, root: str | Path, **kwargs) -> Path:
    spec = KINDS[kind](**kwargs)
    return write_dataset(root, spec["triples"], spec["entities"], spec["relations"])


def synthetic_graph(kind: str, root: str | Path, **kwargs) -> KnowledgeGraph:
    return load_dataset(write_synthetic(kind, root, **kwargs))
