import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gas2s.kg import (
    HEAD, INCOMING, OUTGOING, TAIL, DatasetError, KnowledgeGraph, degrees, disambiguate,
    filter_answers, graph_stats, load_dataset, neighbors, write_dataset, write_split,
)

from conftest import TOY_ENTITIES, TOY_RELATIONS, TOY_TRIPLES, random_graph


def test_toy_load_counts(toy):
    assert toy.num_entities == 4
    assert toy.num_relations == 3
    assert {k: len(v) for k, v in toy.triples.items()} == {"train": 5, "valid": 1, "test": 1}
    # label-file order
    assert toy.entity_ids == ["A", "B", "C", "D"]
    assert toy.mentions.entity == ["Alpha", "Beta", "Gamma", "Delta"]


def test_toy_adjacency_matches_hand_drawing(toy):
    a, b, c, d = range(4)
    knows, likes, follows = range(3)
    assert neighbors(toy, a) == [(knows, b, OUTGOING), (likes, c, OUTGOING), (knows, d, INCOMING)]
    assert neighbors(toy, d) == [(knows, a, OUTGOING), (follows, c, INCOMING)]
    assert degrees(toy).tolist() == [3, 2, 3, 2]


def test_single_triple_neighbors():
    g = KnowledgeGraph.from_arrays(["x", "y"], ["r"], {"train": [[0, 0, 1]]}, ["X", "Y"], ["R"])
    assert neighbors(g, 0) == [(0, 1, OUTGOING)]
    assert neighbors(g, 1) == [(0, 0, INCOMING)]
    with pytest.raises(ValueError):
        neighbors(g, 2)
    assert graph_stats(g)["avg_degree"] == 1.0
    assert graph_stats(g)["density"] == 1.0


def test_stats_need_two_entities():
    g = KnowledgeGraph.from_arrays(["x"], ["r"], {"train": [[0, 0, 0]]}, ["X"], ["R"])
    with pytest.raises(ValueError):
        graph_stats(g)


def test_lower_median():
    g = random_graph(np.random.default_rng(3), 10, 2, 17)
    deg = np.sort(degrees(g))
    assert graph_stats(g)["median_degree"] == deg[4]


def test_empty_train_split(tmp_path):
    root = write_dataset(tmp_path / "d", {"train": [], "valid": [("A", "r", "B")], "test": []},
                         {"A": "a", "B": "b"}, {"r": "rel"})
    g = load_dataset(root)
    assert len(g.train) == 0
    assert all(neighbors(g, e) == [] for e in range(g.num_entities))


def test_filter_answers_all_splits(tmp_path):
    root = write_dataset(
        tmp_path / "d",
        {"train": [("A", "r", "B")], "valid": [], "test": [("A", "r", "C")]},
        {"A": "a", "B": "b", "C": "c"}, {"r": "rel", "s": "unused"},
    )
    g = load_dataset(root)
    assert filter_answers(g, 0, 0, TAIL) == {1, 2}
    assert filter_answers(g, 1, 0, HEAD) == {0}
    assert filter_answers(g, 0, 1, TAIL) == frozenset()


def test_missing_file_named(tmp_path, toy_dir):
    (toy_dir / "valid.txt").unlink()
    with pytest.raises(DatasetError, match="valid.txt"):
        load_dataset(toy_dir)


def test_unlabeled_id_listed(toy_dir):
    with open(toy_dir / "test.txt", "a") as fh:
        fh.write("A\tr1\tZZZ\n")
    with pytest.raises(DatasetError, match="ZZZ"):
        load_dataset(toy_dir)


def test_malformed_line_number(toy_dir):
    with open(toy_dir / "train.txt", "a") as fh:
        fh.write("A\tr1\n")
    with pytest.raises(DatasetError, match="train.txt:6"):
        load_dataset(toy_dir)


def test_codex_label_layout(tmp_path):
    root = tmp_path / "data"
    trip = root / "triples" / "small"
    write_dataset(trip, TOY_TRIPLES, TOY_ENTITIES, TOY_RELATIONS)
    for kind, labels in (("entities", TOY_ENTITIES), ("relations", TOY_RELATIONS)):
        (trip / f"{kind}.json").unlink()
        d = root / kind / "en"
        d.mkdir(parents=True)
        (d / f"{kind}.json").write_text(json.dumps({k: {"label": v, "description": ""} for k, v in labels.items()}))
    g = load_dataset(trip)
    assert g.mentions.entity == ["Alpha", "Beta", "Gamma", "Delta"]


def test_disambiguation_order():
    out = disambiguate(["Q9", "Q10", "Q2"], {"Q9": "Paris", "Q10": "Paris", "Q2": "Paris"})
    # lexicographic raw-id order: Q10 < Q2 < Q9
    assert out == ["Paris #Q9", "Paris", "Paris #Q2"]


def test_empty_label_falls_back_to_raw_id():
    assert disambiguate(["Q1"], {"Q1": "  "}) == ["Q1"]


def test_round_trip_split_files(toy, toy_dir, tmp_path):
    for split in ("train", "valid", "test"):
        write_split(toy, split, tmp_path / f"{split}.txt")
        assert sorted((tmp_path / f"{split}.txt").read_text().splitlines()) == sorted(
            (toy_dir / f"{split}.txt").read_text().splitlines()
        )


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 15), st.integers(1, 4), st.integers(0, 40), st.integers(0, 2**32 - 1))
def test_adjacency_soundness(n_ent, n_rel, n_train, seed):
    g = random_graph(np.random.default_rng(seed), n_ent, n_rel, n_train)
    out_count = in_count = 0
    for e in range(n_ent):
        nb = neighbors(g, e)
        outs = sorted((r, o) for r, o, d in nb if d == OUTGOING)
        ins = sorted((r, o) for r, o, d in nb if d == INCOMING)
        assert outs == sorted((r, t) for h, r, t in g.train.tolist() if h == e)
        assert ins == sorted((r, h) for h, r, t in g.train.tolist() if t == e)
        out_count += len(outs)
        in_count += len(ins)
    assert out_count == in_count == n_train
    s = graph_stats(g)
    assert s["avg_degree"] * n_ent == pytest.approx(2 * n_train)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", ""]), min_size=1, max_size=12))
def test_mention_bijection(labels):
    ids = [f"Q{i}" for i in range(len(labels))]
    mentions = disambiguate(ids, dict(zip(ids, labels)))
    assert len(set(mentions)) == len(ids)
    assert all(mentions)
