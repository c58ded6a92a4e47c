"""Corpus ingestion and preprocessing.

The pipeline turns line-oriented raw text into a tokenized training corpus:
lowercasing, stopword and punctuation removal, phrase (bigram) construction,
and masking of chemical formulas and numeric quantities.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import EmptyCorpusError, FormatError
from .stopwords import ENGLISH_STOPWORDS


@dataclass
class PreprocessConfig:
    lowercase: bool = True
    stopword_list: frozenset[str] = ENGLISH_STOPWORDS
    strip_punctuation: bool = True
    bigram_min_count: int = 5
    bigram_score_threshold: float = 1e-4
    mask_entities: bool = False

    def __post_init__(self):
        if self.bigram_min_count < 1:
            raise ValueError("bigram_min_count must be >= 1")
        if self.bigram_score_threshold < 0:
            raise ValueError("bigram_score_threshold must be >= 0")
        self.stopword_list = frozenset(self.stopword_list)


@dataclass
class TokenizedCorpus:
    sentences: list[list[str]]
    token_counts: Counter = field(default_factory=Counter)
    total_tokens: int = 0

    @classmethod
    def from_sentences(cls, sentences: list[list[str]]) -> "TokenizedCorpus":
        counts = Counter()
        for sent in sentences:
            counts.update(sent)
        return cls(sentences=sentences, token_counts=counts,
                   total_tokens=sum(counts.values()))

    def save(self, path, counts_path=None):
        """Write one sentence per line, tokens space-separated; counts as TSV."""
        path = Path(path)
        with path.open("w", encoding="utf-8") as f:
            for sent in self.sentences:
                f.write(" ".join(sent) + "\n")
        if counts_path is not None:
            with Path(counts_path).open("w", encoding="utf-8") as f:
                for tok, cnt in sorted(self.token_counts.items(),
                                       key=lambda kv: (-kv[1], kv[0])):
                    f.write(f"{tok}\t{cnt}\n")

    @classmethod
    def load(cls, path) -> "TokenizedCorpus":
        sentences = []
        with Path(path).open("r", encoding="utf-8") as f:
            for line in f:
                toks = line.split()
                if toks:
                    sentences.append(toks)
        return cls.from_sentences(sentences)


def _is_punct_only(token: str) -> bool:
    return all(unicodedata.category(ch).startswith("P") for ch in token)


def _strip_edge_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def _iter_lines(stream) -> Iterator[str]:
    """Yield decoded lines; byte streams are decoded strictly with offsets."""
    if isinstance(stream, (str, Path)):
        path = Path(stream)
        raw = path.read_bytes()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 at byte offset {exc.start}",
                              path=path) from exc
        yield from text.splitlines()
        return
    for item in stream:
        if isinstance(item, bytes):
            try:
                item = item.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError(
                    f"invalid UTF-8 at byte offset {exc.start}") from exc
        yield item.rstrip("\n")


def preprocess(stream: Iterable[str] | str | Path,
               cfg: PreprocessConfig | None = None) -> TokenizedCorpus:
    """One sentence per input line; tokens split on Unicode whitespace.

    Stopword matching happens after lowercasing when lowercase is on.
    Punctuation handling strips leading/trailing punctuation characters and
    drops tokens that were punctuation-only.
    """
    cfg = cfg or PreprocessConfig()
    sentences = []
    for line in _iter_lines(stream):
        tokens = []
        for tok in line.split():
            if cfg.lowercase:
                tok = tok.lower()
            if cfg.strip_punctuation:
                if _is_punct_only(tok):
                    continue
                tok = _strip_edge_punct(tok)
                if not tok:
                    continue
            if tok in cfg.stopword_list:
                continue
            tokens.append(tok)
        sentences.append(tokens)
    corpus = TokenizedCorpus.from_sentences(sentences)
    if corpus.total_tokens == 0:
        raise EmptyCorpusError("corpus contains no tokens after filtering")
    if cfg.mask_entities:
        corpus = mask_entities(corpus)
    return corpus


def bigram_score(pair_count: int, left_count: int, right_count: int,
                 min_count: int) -> float:
    """Count-discounted normalized phrase score."""
    return (pair_count - min_count) / (left_count * right_count)


def construct_bigrams(corpus: TokenizedCorpus,
                      cfg: PreprocessConfig | None = None) -> TokenizedCorpus:
    """Merge frequent adjacent pairs into single "a_b" tokens.

    A pair qualifies when count(ab) >= bigram_min_count and its score
    meets the threshold. Merging is a single left-to-right, non-overlapping
    pass; pair eligibility is decided from pre-merge counts.
    """
    cfg = cfg or PreprocessConfig()
    if corpus.total_tokens == 0:
        raise EmptyCorpusError("cannot construct bigrams on an empty corpus")
    pair_counts = Counter()
    for sent in corpus.sentences:
        for a, b in zip(sent, sent[1:]):
            pair_counts[(a, b)] += 1
    counts = corpus.token_counts
    eligible = set()
    for (a, b), pc in pair_counts.items():
        if pc < cfg.bigram_min_count:
            continue
        score = bigram_score(pc, counts[a], counts[b], cfg.bigram_min_count)
        if score >= cfg.bigram_score_threshold:
            eligible.add((a, b))
    merged = []
    for sent in corpus.sentences:
        out, i = [], 0
        while i < len(sent):
            if i + 1 < len(sent) and (sent[i], sent[i + 1]) in eligible:
                out.append(sent[i] + "_" + sent[i + 1])
                i += 2
            else:
                out.append(sent[i])
                i += 1
        merged.append(out)
    return TokenizedCorpus.from_sentences(merged)


# Lowercased element symbols; the corpus is lowercased before masking.
_ELEMENTS = (
    "he li be ne na mg al si cl ar ca sc ti cr mn fe co ni cu zn ga ge se br "
    "kr rb sr zr nb mo tc ru rh pd ag cd sn sb te xe cs ba la ce pr nd pm sm "
    "eu gd tb dy ho er tm yb lu hf ta re os ir pt au hg tl pb bi po at rn fr "
    "ra ac th pa np pu am cm bk cf es fm md no lr rf db sg bh hs mt ds rg cn "
    "nh fl mc lv ts og h b c n o f p s k v y i w u"
).split()

DEFAULT_UNITS = frozenset(
    "mg g kg ug ng ml l ul dl mol mmol umol nmol nm um mm cm m km s ms us ns "
    "min h hr hz khz mhz ghz k pa kpa mpa gpa ev kev mev da kda v mv a ma w "
    "kw j kj cal kcal ppm ppb".split()
)

_NUMBER_RE = re.compile(r"^[+-]?\d+(?:[.,]\d+)?(?:e[+-]?\d+)?$")
# element symbols optionally followed by a count, repeated; >=1 digit required
_FORMULA_RE = re.compile(
    r"^(?:(?:" + "|".join(sorted(_ELEMENTS, key=len, reverse=True)) + r")\d*)+$"
)

CHEM_TOKEN = "<chem>"
NUM_TOKEN = "<num>"
NUM_UNIT_TOKEN = "<num_unit>"


def is_chemical_formula(token: str) -> bool:
    """Element-symbol sequence containing at least one digit, e.g. h2so4."""
    return any(ch.isdigit() for ch in token) and bool(_FORMULA_RE.match(token))


def is_number(token: str) -> bool:
    return bool(_NUMBER_RE.match(token))


def _number_with_unit(token: str, units: frozenset[str]) -> bool:
    m = re.match(r"^[+-]?\d+(?:[.,]\d+)?", token)
    return bool(m) and token[m.end():] in units


def mask_entities(corpus: TokenizedCorpus,
                  units: frozenset[str] = DEFAULT_UNITS) -> TokenizedCorpus:
    """Replace chemical formulas and numeric quantities by normalized forms.

    A bare number followed by a unit token collapses to a single
    "<num_unit>" token, so sentence lengths may shrink; the sentence count
    never changes.
    """
    if corpus.total_tokens == 0:
        raise EmptyCorpusError("cannot mask an empty corpus")
    masked = []
    for sent in corpus.sentences:
        out, i = [], 0
        while i < len(sent):
            tok = sent[i]
            if is_number(tok):
                if i + 1 < len(sent) and sent[i + 1] in units:
                    out.append(NUM_UNIT_TOKEN)
                    i += 2
                    continue
                out.append(NUM_TOKEN)
            elif _number_with_unit(tok, units):
                out.append(NUM_UNIT_TOKEN)
            elif is_chemical_formula(tok):
                out.append(CHEM_TOKEN)
            else:
                out.append(tok)
            i += 1
        masked.append(out)
    return TokenizedCorpus.from_sentences(masked)
