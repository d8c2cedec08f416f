import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gas2s.tokenizer import CLS, EOS, PAD, RESERVED, SEP, UNK, Vocabulary, decode, encode, train_tokenizer
from gas2s.verbalize import (
    mention_corpus, template_words, verbalize_context, verbalize_query, verbalize_triple,
)
from gas2s.kg import HEAD, TAIL, MentionTable

MENTIONS = ["Michael Jackson", "pop music", "Gary, Indiana", "Zoë Saldaña", "東京", "occupation", "genre"]


@pytest.fixture(scope="module")
def vocab():
    return train_tokenizer(MENTIONS + template_words(), 120)


def test_reserved_ids():
    assert RESERVED[PAD] == "<pad>" and RESERVED[EOS] == "</s>" and RESERVED[UNK] == "<unk>"
    assert RESERVED[CLS] == "[CLS]" and RESERVED[SEP] == "|"


def test_single_symbol_corpus():
    v = train_tokenizer(["aaaa"], len(RESERVED) + 1 + 2)
    assert b"aa" in v.tokens
    assert len(encode(v, "aaaa")) - 1 < 4
    assert decode(v, encode(v, "aaaa")) == "aaaa"


def test_deterministic(vocab):
    again = train_tokenizer(MENTIONS + template_words(), 120)
    assert again.merges == vocab.merges


def test_exact_size_when_corpus_allows(vocab):
    assert vocab.size == 120


def test_vocab_too_small():
    with pytest.raises(ValueError):
        train_tokenizer(["abc"], len(RESERVED) + 3)


def test_empty_corpus():
    with pytest.raises(ValueError):
        train_tokenizer([], 100)


def test_exhausted_corpus_returns_smaller(caplog):
    v = train_tokenizer(["ab"], 50)
    assert v.size < 50
    assert "supports only" in caplog.text


def test_encode_empty(vocab):
    assert encode(vocab, "") == [EOS]


def test_truncation_keeps_eos(vocab):
    ids = encode(vocab, "Michael Jackson " * 400)
    assert len(ids) == 512 and ids[-1] == EOS
    assert len(encode(vocab, "Michael Jackson " * 400, max_len=7)) == 7


def test_reserved_atomic(vocab):
    ids = encode(vocab, verbalize_triple((0, 0, 1), MentionTable.build(MENTIONS, ["genre"])))
    assert ids[0] == CLS
    assert CLS not in ids[1:]
    assert ids.count(SEP) == 2
    # merges never produce reserved tokens
    assert all(a >= len(RESERVED) and b >= len(RESERVED) for a, b in vocab.merges)


def test_unknown_byte_maps_to_unk(vocab):
    assert UNK in encode(vocab, "Ω")


def test_json_round_trip(vocab, tmp_path):
    vocab.save(tmp_path / "v.json")
    again = Vocabulary.load(tmp_path / "v.json")
    assert again.tokens == vocab.tokens
    assert encode(again, "Michael Jackson") == encode(vocab, "Michael Jackson")


def test_all_mentions_round_trip(vocab):
    for s in MENTIONS:
        assert decode(vocab, encode(vocab, s)) == s


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(sorted(set("".join(MENTIONS)))), max_size=30).map("".join))
def test_round_trip_over_alphabet(vocab, text):
    assert decode(vocab, encode(vocab, text, max_len=10_000)) == text


def test_round_trip_1000_random_mentions():
    rng = np.random.default_rng(0)
    alphabet = list("abcdefghijklmnopqrstuvwxyz ABCXYZ-'.,éü")
    corpus = ["".join(rng.choice(alphabet, rng.integers(1, 20))) for _ in range(1000)]
    v = train_tokenizer(corpus, 400)
    assert all(decode(v, encode(v, s)) == s for s in corpus)


# -- templates ---------------------------------------------------------------

M = MentionTable.build(["Michael Jackson", "pop music", "  Gary  "], ["occupation", "genre"])


def test_query_templates():
    assert verbalize_query(0, 0, TAIL, M) == "Predict tail: Michael Jackson | occupation"
    assert verbalize_query(1, 1, HEAD, M) == "Predict head: pop music | genre"
    assert verbalize_query(2, 0, TAIL, M) == "Predict tail: Gary | occupation"
    with pytest.raises(ValueError):
        verbalize_query(0, 0, "sideways", M)


def test_triple_template():
    assert verbalize_triple((0, 1, 1), M) == "[CLS] Michael Jackson | genre | pop music"
    assert verbalize_triple((1, 0, 1), M) == "[CLS] pop music | occupation | pop music"


def test_context_template():
    text = verbalize_context("Predict tail: Michael Jackson | genre", 0, [(0, 1, 1), (2, 0, 0)], M)
    assert text == ("Predict tail: Michael Jackson | genre | Context: genre | pop music"
                    " | inverse of occupation | Gary")


@settings(max_examples=100, deadline=None)
@given(st.tuples(st.integers(0, 2), st.integers(0, 1), st.integers(0, 2)),
       st.tuples(st.integers(0, 2), st.integers(0, 1), st.integers(0, 2)))
def test_triple_template_injective(a, b):
    assert (verbalize_triple(a, M) == verbalize_triple(b, M)) == (a == b)


def test_corpus_covers_templates():
    corpus = mention_corpus(M)
    assert "Predict tail:" in corpus and "genre" in corpus
