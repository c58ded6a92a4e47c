"""Tokenizer training and application: word-level, BPE, WordPiece, Unigram.

All trainers are deterministic: pair/score ties break by (creation time of
the left symbol, then lexicographic order of the pair), and serialization is
byte-stable for a given corpus and config.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import TokenizedCorpus
from .errors import ConfigError, EmptyCorpusError

END_OF_WORD = "</w>"
DEFAULT_UNK = "<unk>"
DEFAULT_VOCAB_SIZE = 50_000
MIN_PAIR_FREQ = 2  # hapax pairs are never merged

ABSENT_ID = -1  # sentinel id for OOV words under the word kind


@dataclass
class Encoding:
    pieces: list[str]
    ids: list[int]
    word_spans: list[tuple[int, int]]


@dataclass
class TokenizerModel:
    kind: str  # word | bpe | wordpiece | unigram
    vocab: dict[str, int]
    merges: list[tuple[str, str]] = field(default_factory=list)
    piece_logprobs: dict[str, float] = field(default_factory=dict)
    continuation_prefix: str = "##"
    unk_token: str = DEFAULT_UNK
    target_vocab_size: int = DEFAULT_VOCAB_SIZE

    @property
    def id_to_token(self) -> list[str]:
        out = [None] * len(self.vocab)
        for tok, i in self.vocab.items():
            out[i] = tok
        return out

    def save(self, path):
        doc = {
            "kind": self.kind,
            "vocab": self.id_to_token,
            "merges": [list(m) for m in self.merges],
            "piece_logprobs": {t: self.piece_logprobs[t]
                               for t in self.id_to_token
                               if t in self.piece_logprobs},
            "continuation_prefix": self.continuation_prefix,
            "unk_token": self.unk_token,
            "config": {"target_vocab_size": self.target_vocab_size},
        }
        Path(path).write_text(
            json.dumps(doc, ensure_ascii=False, indent=None,
                       separators=(",", ":")),
            encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TokenizerModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            kind=doc["kind"],
            vocab={tok: i for i, tok in enumerate(doc["vocab"])},
            merges=[tuple(m) for m in doc["merges"]],
            piece_logprobs=doc.get("piece_logprobs", {}),
            continuation_prefix=doc.get("continuation_prefix", "##"),
            unk_token=doc.get("unk_token", DEFAULT_UNK),
            target_vocab_size=doc["config"]["target_vocab_size"],
        )


def train_word(corpus: TokenizedCorpus, min_count: int = 1) -> TokenizerModel:
    """Whole-word vocabulary: tokens with count >= min_count, most
    frequent first, ties lexicographic. No unk behavior; OOV words encode
    to the absent sentinel."""
    if corpus.total_tokens == 0:
        raise EmptyCorpusError("cannot train on an empty corpus")
    kept = [(tok, cnt) for tok, cnt in corpus.token_counts.items()
            if cnt >= min_count]
    kept.sort(key=lambda kv: (-kv[1], kv[0]))
    vocab = {tok: i for i, (tok, _) in enumerate(kept)}
    return TokenizerModel(kind="word", vocab=vocab,
                          target_vocab_size=len(vocab))


def _word_symbol_counts(corpus: TokenizedCorpus):
    return Counter(corpus.token_counts)


def _bpe_symbols(word: str) -> list[str]:
    return list(word) + [END_OF_WORD]


def _wp_symbols(word: str, prefix: str) -> list[str]:
    return [word[0]] + [prefix + c for c in word[1:]]


def _check_subword_pre(corpus, target_vocab_size, alphabet_size):
    if corpus.total_tokens == 0:
        raise EmptyCorpusError("cannot train on an empty corpus")
    if target_vocab_size <= alphabet_size:
        raise ConfigError(
            f"target vocab size {target_vocab_size} must exceed the base "
            f"alphabet size {alphabet_size}")


def train_bpe(corpus: TokenizedCorpus,
              target_vocab_size: int = DEFAULT_VOCAB_SIZE) -> TokenizerModel:
    """Greedy merge of the most frequent adjacent symbol pair until the
    vocabulary reaches the target or no pair occurs at least twice."""
    word_counts = _word_symbol_counts(corpus)
    words = {w: _bpe_symbols(w) for w in word_counts}
    base = sorted({sym for syms in words.values() for sym in syms})
    _check_subword_pre(corpus, target_vocab_size, len(base))
    tokens = [DEFAULT_UNK] + base
    creation = {tok: i for i, tok in enumerate(tokens)}
    merges: list[tuple[str, str]] = []

    while len(tokens) < target_vocab_size:
        pair_counts = Counter()
        for w, syms in words.items():
            cnt = word_counts[w]
            for a, b in zip(syms, syms[1:]):
                pair_counts[(a, b)] += cnt
        candidates = [(c, p) for p, c in pair_counts.items()
                      if c >= MIN_PAIR_FREQ]
        if not candidates:
            break
        best = min(candidates,
                   key=lambda cp: (-cp[0], creation[cp[1][0]], cp[1]))[1]
        new_tok = best[0] + best[1]
        merges.append(best)
        creation[new_tok] = len(tokens)
        tokens.append(new_tok)
        for w, syms in words.items():
            words[w] = _apply_merge(syms, best, new_tok)

    vocab = {tok: i for i, tok in enumerate(tokens)}
    return TokenizerModel(kind="bpe", vocab=vocab, merges=merges,
                          target_vocab_size=target_vocab_size)


def _apply_merge(syms: list[str], pair: tuple[str, str],
                 new_tok: str) -> list[str]:
    out, i = [], 0
    while i < len(syms):
        if i + 1 < len(syms) and syms[i] == pair[0] and syms[i + 1] == pair[1]:
            out.append(new_tok)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return out


def wordpiece_score(pair_count: int, left_count: int,
                    right_count: int) -> float:
    return pair_count / (left_count * right_count)


def _wp_merge_token(left: str, right: str, prefix: str) -> str:
    return left + right.removeprefix(prefix)


def train_wordpiece(corpus: TokenizedCorpus,
                    target_vocab_size: int = DEFAULT_VOCAB_SIZE,
                    continuation_prefix: str = "##") -> TokenizerModel:
    """Like BPE, but pair selection maximizes pair_count/(left*right).

    Only the vocabulary is stored; encoding is greedy longest match with
    the continuation prefix on non-initial pieces.
    """
    word_counts = _word_symbol_counts(corpus)
    words = {w: _wp_symbols(w, continuation_prefix) for w in word_counts}
    base = sorted({sym for syms in words.values() for sym in syms})
    _check_subword_pre(corpus, target_vocab_size, len(base))
    tokens = [DEFAULT_UNK] + base
    creation = {tok: i for i, tok in enumerate(tokens)}

    while len(tokens) < target_vocab_size:
        sym_counts = Counter()
        pair_counts = Counter()
        for w, syms in words.items():
            cnt = word_counts[w]
            for s in syms:
                sym_counts[s] += cnt
            for a, b in zip(syms, syms[1:]):
                pair_counts[(a, b)] += cnt
        candidates = [
            (wordpiece_score(c, sym_counts[p[0]], sym_counts[p[1]]), p)
            for p, c in pair_counts.items() if c >= MIN_PAIR_FREQ
        ]
        if not candidates:
            break
        best = min(candidates,
                   key=lambda sp: (-sp[0], creation[sp[1][0]], sp[1]))[1]
        new_tok = _wp_merge_token(best[0], best[1], continuation_prefix)
        creation[new_tok] = len(tokens)
        tokens.append(new_tok)
        for w, syms in words.items():
            words[w] = _apply_merge(syms, best, new_tok)

    vocab = {tok: i for i, tok in enumerate(tokens)}
    return TokenizerModel(kind="wordpiece", vocab=vocab,
                          continuation_prefix=continuation_prefix,
                          target_vocab_size=target_vocab_size)


# ---------------------------------------------------------------------------
# Unigram

MAX_SEED_PIECE_LEN = 8
SEED_CAP_FACTOR = 10
PRUNE_FRACTION = 0.2
EM_ITERS_PER_ROUND = 2
_SINGLE_CHAR_FLOOR = 1e-10  # keeps unused single chars finite and in-vocab


def _viterbi(word: str, logprobs: dict[str, float],
             exclude: str | None = None):
    """Best segmentation of `word` by total log-probability.

    Ties prefer the longer final piece (fewer pieces overall). Returns
    (pieces, logprob) or (None, -inf) when no segmentation exists.
    """
    n = len(word)
    best = [-math.inf] * (n + 1)
    back = [0] * (n + 1)
    best[0] = 0.0
    for i in range(1, n + 1):
        for j in range(max(0, i - MAX_SEED_PIECE_LEN), i):
            piece = word[j:i]
            if piece == exclude:
                continue
            lp = logprobs.get(piece)
            if lp is None or best[j] == -math.inf:
                continue
            cand = best[j] + lp
            if cand > best[i] or (cand == best[i] and j < back[i]):
                best[i] = cand
                back[i] = j
    if best[n] == -math.inf:
        return None, -math.inf
    pieces = []
    i = n
    while i > 0:
        j = back[i]
        pieces.append(word[j:i])
        i = j
    pieces.reverse()
    return pieces, best[n]


def _seed_unigram_vocab(word_counts: Counter, target: int) -> Counter:
    sub_counts = Counter()
    for w, cnt in word_counts.items():
        for length in range(1, min(len(w), MAX_SEED_PIECE_LEN) + 1):
            for start in range(len(w) - length + 1):
                sub_counts[w[start:start + length]] += cnt
    singles = {s: c for s, c in sub_counts.items() if len(s) == 1}
    multis = [(s, c) for s, c in sub_counts.items()
              if len(s) > 1 and c >= 2]
    multis.sort(key=lambda sc: (-sc[1], sc[0]))
    cap = max(0, SEED_CAP_FACTOR * target - len(singles))
    seed = Counter(singles)
    seed.update(dict(multis[:cap]))
    return seed


def train_unigram(corpus: TokenizedCorpus,
                  target_vocab_size: int = DEFAULT_VOCAB_SIZE,
                  nll_trace: list[float] | None = None) -> TokenizerModel:
    """EM with iterative pruning: Viterbi segmentation, probability
    re-estimation, then removal of the pieces whose loss impact is lowest.

    Single characters are never pruned. When `nll_trace` is given, the
    corpus negative log-likelihood after each E-step is appended to it.
    """
    word_counts = _word_symbol_counts(corpus)
    alphabet = {c for w in word_counts for c in w}
    _check_subword_pre(corpus, target_vocab_size, len(alphabet))
    # the unk token occupies one vocab slot
    piece_budget = target_vocab_size - 1

    seed = _seed_unigram_vocab(word_counts, piece_budget)
    total = sum(seed.values())
    logprobs = {p: math.log(c / total) for p, c in seed.items()}

    def em_step():
        piece_counts = Counter()
        nll = 0.0
        segmentations = {}
        for w, cnt in word_counts.items():
            pieces, lp = _viterbi(w, logprobs)
            segmentations[w] = pieces
            nll -= cnt * lp
            for p in pieces:
                piece_counts[p] += cnt
        if nll_trace is not None:
            nll_trace.append(nll)
        new_total = sum(piece_counts.values())
        floor = _SINGLE_CHAR_FLOOR
        new_lp = {}
        for p in logprobs:
            c = piece_counts.get(p, 0)
            if c == 0:
                if len(p) > 1:
                    continue  # unused multi-char pieces drop out
                c = floor
            new_lp[p] = math.log(c / (new_total + floor * len(alphabet)))
        return new_lp, segmentations

    while True:
        for _ in range(EM_ITERS_PER_ROUND):
            logprobs, segmentations = em_step()
        if len(logprobs) <= piece_budget:
            break
        # loss increase per multi-char piece if it were removed
        users: dict[str, list[str]] = {}
        for w, pieces in segmentations.items():
            for p in set(pieces):
                if len(p) > 1:
                    users.setdefault(p, []).append(w)
        prunable = [p for p in logprobs if len(p) > 1]
        deltas = []
        for p in prunable:
            delta = 0.0
            for w in users.get(p, ()):
                _, lp = _viterbi(w, logprobs)
                _, lp_without = _viterbi(w, logprobs, exclude=p)
                delta += word_counts[w] * (lp - lp_without)
            deltas.append((delta, p))
        deltas.sort(key=lambda dp: (dp[0], dp[1]))
        n_remove = min(max(1, math.ceil(PRUNE_FRACTION * len(prunable))),
                       len(logprobs) - piece_budget)
        for _, p in deltas[:n_remove]:
            del logprobs[p]

    logprobs, _ = em_step()
    pieces = sorted(logprobs, key=lambda p: (-logprobs[p], p))
    vocab = {DEFAULT_UNK: 0}
    for p in pieces:
        vocab[p] = len(vocab)
    return TokenizerModel(kind="unigram", vocab=vocab,
                          piece_logprobs=dict(logprobs),
                          target_vocab_size=target_vocab_size)


# ---------------------------------------------------------------------------
# Encoding / decoding


def _encode_word_bpe(model: TokenizerModel, word: str) -> list[str]:
    syms = [s if s in model.vocab else model.unk_token
            for s in _bpe_symbols(word)]
    for left, right in model.merges:
        if left + right in "".join(syms):  # cheap skip for absent material
            syms = _apply_merge(syms, (left, right), left + right)
    return syms


def _encode_word_wordpiece(model: TokenizerModel, word: str) -> list[str]:
    prefix = model.continuation_prefix
    pieces, pos = [], 0
    while pos < len(word):
        end = len(word)
        found = None
        while end > pos:
            cand = word[pos:end]
            if pos > 0:
                cand = prefix + cand
            if cand in model.vocab:
                found = cand
                break
            end -= 1
        if found is None:
            return [model.unk_token]
        pieces.append(found)
        pos = end
    return pieces


def _encode_word_unigram(model: TokenizerModel, word: str) -> list[str]:
    pieces, _ = _viterbi(word, model.piece_logprobs)
    if pieces is None:
        return [model.unk_token]
    return pieces


def encode(model: TokenizerModel, words: list[str]) -> Encoding:
    """Segment a word sequence. Unknown material degrades to the unk token
    (subword kinds) or the absent sentinel id (word kind); never raises."""
    pieces: list[str] = []
    ids: list[int] = []
    spans: list[tuple[int, int]] = []
    for word in words:
        start = len(pieces)
        if model.kind == "word":
            word_pieces = [word]
        elif model.kind == "bpe":
            word_pieces = _encode_word_bpe(model, word)
        elif model.kind == "wordpiece":
            word_pieces = _encode_word_wordpiece(model, word)
        elif model.kind == "unigram":
            word_pieces = _encode_word_unigram(model, word)
        else:
            raise ConfigError(f"unknown tokenizer kind {model.kind!r}")
        for p in word_pieces:
            pieces.append(p)
            if model.kind == "word":
                ids.append(model.vocab.get(p, ABSENT_ID))
            else:
                ids.append(model.vocab.get(p, model.vocab[model.unk_token]))
        spans.append((start, len(pieces)))
    return Encoding(pieces=pieces, ids=ids, word_spans=spans)


def decode(model: TokenizerModel, encoding: Encoding) -> list[str]:
    """Inverse of encode for unk-free input; unk pieces pass through
    literally (lossy)."""
    size = len(model.vocab)
    for i in encoding.ids:
        if i != ABSENT_ID and not 0 <= i < size:
            raise ValueError(f"id {i} out of range for vocab of size {size}")
    words = []
    for start, end in encoding.word_spans:
        parts = []
        for p in encoding.pieces[start:end]:
            if model.kind == "bpe":
                p = p.removesuffix(END_OF_WORD)
            elif model.kind == "wordpiece":
                p = p.removeprefix(model.continuation_prefix)
            if p:
                parts.append(p)
        words.append("".join(parts))
    return words
