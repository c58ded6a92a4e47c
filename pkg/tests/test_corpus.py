from collections import Counter

import pytest

from embeval.corpus import (
    CHEM_TOKEN,
    NUM_TOKEN,
    NUM_UNIT_TOKEN,
    PreprocessConfig,
    TokenizedCorpus,
    construct_bigrams,
    mask_entities,
    preprocess,
)
from embeval.errors import EmptyCorpusError, FormatError
from embeval.stopwords import ENGLISH_STOPWORDS


def test_stopword_list_size():
    assert len(ENGLISH_STOPWORDS) == 179


def test_preprocess_basic():
    cfg = PreprocessConfig(lowercase=True, stopword_list=frozenset({"the"}),
                           strip_punctuation=True)
    corpus = preprocess(["The Cat sat."], cfg)
    assert corpus.sentences == [["cat", "sat"]]
    assert corpus.total_tokens == 2


def test_preprocess_empty_stream():
    with pytest.raises(EmptyCorpusError):
        preprocess([], PreprocessConfig())


def test_preprocess_all_filtered():
    with pytest.raises(EmptyCorpusError):
        preprocess(["the a an", "..."], PreprocessConfig())


def test_preprocess_counts_match_hand_count():
    # oracle: independent word count over the fixture
    lines = [
        "alpha beta gamma alpha",
        "beta beta delta",
        "gamma alpha",
    ]
    cfg = PreprocessConfig(lowercase=True, stopword_list=frozenset(),
                           strip_punctuation=False)
    corpus = preprocess(lines, cfg)
    oracle = Counter()
    for line in lines:
        oracle.update(line.split())
    assert corpus.token_counts == oracle
    assert corpus.total_tokens == sum(oracle.values())


def test_preprocess_invalid_utf8(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_bytes(b"good line\n\xff\xfe broken\n")
    with pytest.raises(FormatError, match="byte offset"):
        preprocess(p)


def test_preprocess_idempotent():
    lines = ["The quick-thinking Dr. Smith ran, fast!", "Numbers: 12 mg."]
    cfg = PreprocessConfig()
    first = preprocess(lines, cfg)
    rejoined = [" ".join(sent) for sent in first.sentences]
    second = preprocess(rejoined, cfg)
    assert second.sentences == first.sentences


def test_stopword_removal_reduces_total():
    lines = ["the cat and the dog"]
    no_stop = preprocess(lines, PreprocessConfig(stopword_list=frozenset()))
    with_stop = preprocess(lines, PreprocessConfig())
    assert with_stop.total_tokens <= no_stop.total_tokens


def test_bigrams_merges_frequent_pair():
    # "new york" 50x, each word also appears 5x alone -> count 55 each
    sentences = [["new", "york"]] * 50
    sentences += [["new"], ["york"]] * 5
    corpus = TokenizedCorpus.from_sentences(sentences)
    # brute-force score: (50 - 5) / (55 * 55) ~= 0.0149 > 1e-4
    cfg = PreprocessConfig(bigram_min_count=5, bigram_score_threshold=1e-4)
    out = construct_bigrams(corpus, cfg)
    assert "new_york" in out.token_counts
    assert out.token_counts["new_york"] == 50


def test_bigrams_infinite_threshold_is_identity():
    corpus = TokenizedCorpus.from_sentences([["a", "b"]] * 10)
    cfg = PreprocessConfig(bigram_min_count=1,
                           bigram_score_threshold=float("inf"))
    out = construct_bigrams(corpus, cfg)
    assert out.sentences == corpus.sentences


def test_bigrams_left_to_right_non_overlapping():
    # merge orders enumerated by hand: left-to-right non-overlapping on
    # "a b a b" gives (a,b)(a,b), never (b,a) in the middle
    corpus = TokenizedCorpus.from_sentences([["a", "b", "a", "b"]])
    cfg = PreprocessConfig(bigram_min_count=2, bigram_score_threshold=0.0)
    out = construct_bigrams(corpus, cfg)
    assert out.sentences == [["a_b", "a_b"]]


def test_bigrams_single_join_per_pass():
    corpus = TokenizedCorpus.from_sentences([["a", "b", "c"]] * 10)
    cfg = PreprocessConfig(bigram_min_count=1, bigram_score_threshold=0.0)
    out = construct_bigrams(corpus, cfg)
    for tok in out.token_counts:
        assert tok.count("_") <= 1


MASK_FIXTURE = [
    # (token, expected)
    ("h2so4", CHEM_TOKEN),
    ("c6h12o6", CHEM_TOKEN),
    ("h2o", CHEM_TOKEN),
    ("co2", CHEM_TOKEN),
    ("nacl2", CHEM_TOKEN),
    ("ch4", CHEM_TOKEN),
    ("cat", "cat"),
    ("nacl", "nacl"),  # no digit -> left alone
    ("protein", "protein"),
    ("42", NUM_TOKEN),
    ("3.14", NUM_TOKEN),
    ("-7", NUM_TOKEN),
    ("5mg", NUM_UNIT_TOKEN),
    ("10ml", NUM_UNIT_TOKEN),
    ("2.5kg", NUM_UNIT_TOKEN),
    ("hello", "hello"),
    ("b2b", CHEM_TOKEN),  # parses as boron sequence
    ("x9y", "x9y"),  # x is not an element symbol
]


def test_mask_entities_fixture():
    tokens = [t for t, _ in MASK_FIXTURE]
    expected = [e for _, e in MASK_FIXTURE]
    out = mask_entities(TokenizedCorpus.from_sentences([tokens]))
    assert out.sentences == [expected]


def test_mask_number_unit_pair_collapses():
    out = mask_entities(TokenizedCorpus.from_sentences([["5", "mg", "dose"]]))
    assert out.sentences == [[NUM_UNIT_TOKEN, "dose"]]


def test_mask_preserves_sentence_count():
    corpus = TokenizedCorpus.from_sentences(
        [["5", "mg"], ["h2o", "is", "wet"], ["plain"]])
    out = mask_entities(corpus)
    assert len(out.sentences) == len(corpus.sentences)


def test_corpus_save_load_roundtrip(tmp_path):
    corpus = TokenizedCorpus.from_sentences([["a", "b"], ["c"]])
    p = tmp_path / "corpus.txt"
    tsv = tmp_path / "counts.tsv"
    corpus.save(p, counts_path=tsv)
    loaded = TokenizedCorpus.load(p)
    assert loaded.sentences == corpus.sentences
    assert loaded.token_counts == corpus.token_counts
    lines = tsv.read_text().splitlines()
    assert len(lines) == 3
    assert all("\t" in ln for ln in lines)
