import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adapt.data import SCENARIOS
from adapt.tokenizer import (CLS_ID, MAX_SENTENCE_LEN, NUM_RESERVED, PAD_ID, SEP_ID, SPECIAL_TOKENS,
                             TruncationWarning, Vocab, build_vocab, decode, encode, normalize,
                             pad_and_segment, tokenize)

TEMPLATES = [s for sc in SCENARIOS.values() for s in (sc.narration, sc.reasoning)]


@pytest.fixture(scope="module")
def world_vocab():
    return build_vocab(TEMPLATES * 2)


def test_reserved_ids_fixed(world_vocab):
    assert tuple(world_vocab.tokens[:NUM_RESERVED]) == SPECIAL_TOKENS
    assert (PAD_ID, CLS_ID, SEP_ID) == (0, 1, 2)


def test_stop_stops_subword():
    vocab = build_vocab(["stop", "stops"])
    assert "stop" in vocab and "##s" in vocab
    assert tokenize("stops", vocab) == ["stop", "##s"]


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        build_vocab([])


def test_max_size_below_charset_rejected():
    with pytest.raises(ValueError, match="max_size"):
        build_vocab(["abcdef"], max_size=8)


def test_empty_sentence_encodes_to_nothing(world_vocab):
    assert encode("", world_vocab) == []


def test_world_corpus_fits_and_stays_short(world_vocab):
    assert len(world_vocab) <= 256
    for s in TEMPLATES:
        assert len(encode(s, world_vocab)) <= MAX_SENTENCE_LEN - 2


@pytest.mark.parametrize("sentence", TEMPLATES)
def test_corpus_sentences_round_trip(world_vocab, sentence):
    ids = encode(sentence, world_vocab)
    assert all(NUM_RESERVED <= i < len(world_vocab) for i in ids)
    assert decode(ids, world_vocab) == normalize(sentence)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(sorted({w for s in TEMPLATES for w in s.split()})), min_size=0, max_size=8))
def test_any_sentence_over_corpus_words_round_trips(words):
    vocab = build_vocab(TEMPLATES * 2)
    sentence = " ".join(words)
    assert decode(encode(sentence, vocab), vocab) == sentence


@settings(max_examples=50, deadline=None)
@given(st.text(alphabet="abcdefgh ", min_size=1, max_size=30).filter(str.strip))
def test_every_corpus_character_is_encodable(text):
    vocab = build_vocab([text])
    ids = encode(text, vocab)
    assert 4 not in ids  # [UNK]
    assert decode(ids, vocab) == normalize(text)


def test_unknown_piece_becomes_unk(world_vocab):
    assert encode("zzz", world_vocab) == [world_vocab.id("[UNK]")]


def test_vocab_file_line_number_is_id(tmp_path, world_vocab):
    path = tmp_path / "vocab.txt"
    world_vocab.save(path)
    lines = path.read_text().splitlines()
    assert lines == world_vocab.tokens
    assert Vocab.load(path) == world_vocab


def test_layout_example():
    vocab = Vocab(list(SPECIAL_TOKENS) + ["a", "b", "c"])
    seq = pad_and_segment(encode("a b", vocab), encode("c", vocab))
    a, b, c = 5, 6, 7
    assert seq.ids[:15].tolist() == [CLS_ID, a, b, SEP_ID] + [PAD_ID] * 11
    assert seq.ids[15:].tolist() == [CLS_ID, c, SEP_ID] + [PAD_ID] * 12
    assert seq.segment_ids.tolist() == [0] * 15 + [1] * 15
    assert seq.valid.tolist() == [True] * 4 + [False] * 11 + [True] * 3 + [False] * 12


def test_empty_reasoning_block():
    seq = pad_and_segment([5], [])
    assert seq.ids[15:].tolist() == [CLS_ID, SEP_ID] + [PAD_ID] * 13


def test_long_narration_truncated_with_warning():
    with pytest.warns(TruncationWarning):
        seq = pad_and_segment(list(range(5, 25)), [5])
    assert seq.ids[:15].tolist() == [CLS_ID] + list(range(5, 18)) + [SEP_ID]


def test_short_input_no_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pad_and_segment([5] * 13, [5] * 13)
