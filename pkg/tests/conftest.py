import json
from pathlib import Path

import numpy as np
import pytest

from gas2s.kg import KnowledgeGraph, load_dataset, write_dataset
from gas2s.model import GAS2S, ModelConfig
from gas2s.tokenizer import train_tokenizer
from gas2s.verbalize import mention_corpus

TOY_TRIPLES = {
    "train": [("A", "r1", "B"), ("A", "r2", "C"), ("B", "r1", "C"), ("C", "r3", "D"), ("D", "r1", "A")],
    "valid": [("A", "r1", "D")],
    "test": [("B", "r2", "D")],
}
TOY_ENTITIES = {"A": "Alpha", "B": "Beta", "C": "Gamma", "D": "Delta"}
TOY_RELATIONS = {"r1": "knows", "r2": "likes", "r3": "follows"}


@pytest.fixture
def toy_dir(tmp_path) -> Path:
    return write_dataset(tmp_path / "toy", TOY_TRIPLES, TOY_ENTITIES, TOY_RELATIONS)


@pytest.fixture
def toy(toy_dir) -> KnowledgeGraph:
    return load_dataset(toy_dir)


def random_graph(rng: np.random.Generator, n_ent: int, n_rel: int, n_train: int, self_loops=True) -> KnowledgeGraph:
    """In-memory random multigraph with integer labels."""
    ents = [f"e{i}" for i in range(n_ent)]
    rels = [f"r{i}" for i in range(n_rel)]
    h = rng.integers(n_ent, size=n_train)
    t = rng.integers(n_ent, size=n_train)
    if not self_loops:
        t = np.where(t == h, (t + 1) % n_ent, t)
    r = rng.integers(n_rel, size=n_train)
    train = np.stack([h, r, t], axis=1).astype(np.int64)
    empty = np.zeros((0, 3), dtype=np.int64)
    return KnowledgeGraph.from_arrays(
        ents, rels, {"train": train, "valid": empty, "test": empty},
        [f"ent {i}" for i in range(n_ent)], [f"rel {i}" for i in range(n_rel)],
    )


@pytest.fixture
def tiny_cfg():
    def make(vocab_size=40, num_relations=3, **kw):
        base = dict(d_model=16, encoder_layers=1, decoder_layers=1, attn_heads=2, d_ff=24,
                    m=2, rgat_layers=1, dropout=0.0)
        base.update(kw)
        return ModelConfig(vocab_size=vocab_size, num_relations=num_relations, **base)
    return make


@pytest.fixture
def toy_vocab(toy):
    return train_tokenizer(mention_corpus(toy.mentions), 120)


@pytest.fixture
def tiny_model(tiny_cfg, toy, toy_vocab):
    def make(mode="ga-s2s", seed=0, **kw):
        return GAS2S(tiny_cfg(toy_vocab.size, toy.num_relations, mode=mode, **kw), seed=seed)
    return make


def read_json(path):
    return json.loads(Path(path).read_text())
