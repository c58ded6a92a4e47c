"""Static embedding training (word2vec CBOW/Skipgram, FastText) and vector
resolution under OOV policies.

Training is plain negative-sampling SGD in numpy. With a single worker it is
fully deterministic for a given seed; the trained store is immutable and can
be shared across threads.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import TokenizedCorpus
from .errors import ConfigError, EmptyCorpusError, FormatError
from .tokenizers import TokenizerModel, encode

NOISE_POWER = 0.75
LR_FLOOR_FACTOR = 1e-4


@dataclass
class TrainConfig:
    algorithm: str = "skipgram"  # skipgram | cbow
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    initial_lr: float | None = None  # default 0.025 skipgram, 0.05 cbow
    min_count: int = 5
    subsample_t: float = 1e-3
    seed: int = 1
    ngram_min: int = 3
    ngram_max: int = 6
    bucket_count: int = 2_000_000

    def __post_init__(self):
        if self.algorithm not in ("skipgram", "cbow"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.window < 1 or self.negatives < 1 or self.bucket_count < 1:
            raise ConfigError("window, negatives and bucket_count must be >= 1")
        if self.ngram_min > self.ngram_max:
            raise ConfigError("ngram_min must be <= ngram_max")
        if self.initial_lr is None:
            self.initial_lr = 0.025 if self.algorithm == "skipgram" else 0.05


@dataclass
class VectorStore:
    vocab: dict[str, int]
    matrix: np.ndarray
    kind: str  # word2vec | fasttext | external
    dim: int
    ngram_matrix: np.ndarray | None = None
    ngram_min: int = 3
    ngram_max: int = 6
    bucket_count: int = 0

    def __contains__(self, token: str) -> bool:
        return token in self.vocab

    def row(self, token: str) -> np.ndarray:
        return self.matrix[self.vocab[token]]


@dataclass
class OovPolicy:
    variant: str  # skip | zero | subword_mean | ngram_mean
    tokenizer: TokenizerModel | None = None

    def __post_init__(self):
        if self.variant not in ("skip", "zero", "subword_mean", "ngram_mean"):
            raise ConfigError(f"unknown OOV policy {self.variant!r}")
        if self.variant == "subword_mean" and (
                self.tokenizer is None or self.tokenizer.kind == "word"):
            raise ConfigError("subword_mean requires a subword tokenizer")


def fnv1a_64(data: str) -> int:
    """FNV-1a 64-bit over the UTF-8 bytes; fixed so models are portable."""
    h = 0xCBF29CE484222325
    for byte in data.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def word_ngrams(word: str, nmin: int, nmax: int) -> list[str]:
    """Character n-grams of the word wrapped in '<' '>'."""
    wrapped = f"<{word}>"
    return [wrapped[i:i + n]
            for n in range(nmin, nmax + 1)
            for i in range(len(wrapped) - n + 1)]


def ngram_bucket_ids(word: str, nmin: int, nmax: int,
                     bucket_count: int) -> list[int]:
    return [fnv1a_64(g) % bucket_count
            for g in word_ngrams(word, nmin, nmax)]


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def negative_sampling_loss(v, u_pos, u_negs):
    """Loss and analytic gradients for one (input, output, negatives) triple.

    loss = -log sigma(u_pos.v) - sum log sigma(-u_neg.v)
    Returns (loss, d_v, d_u_pos, d_u_negs). Pure, float64-friendly; used by
    the gradient check and as the reference objective for training updates.
    """
    v = np.asarray(v, dtype=np.float64)
    u_pos = np.asarray(u_pos, dtype=np.float64)
    u_negs = np.asarray(u_negs, dtype=np.float64)
    s_pos = sigmoid(u_pos @ v)
    s_negs = sigmoid(u_negs @ v)
    loss = -np.log(s_pos) - np.sum(np.log1p(-s_negs))
    d_u_pos = (s_pos - 1.0) * v
    d_u_negs = s_negs[:, None] * v[None, :]
    d_v = (s_pos - 1.0) * u_pos + s_negs @ u_negs
    return loss, d_v, d_u_pos, d_u_negs


class _Trainer:
    """Shared SGNS machinery for word2vec and fasttext."""

    def __init__(self, sentences, cfg: TrainConfig, fasttext: bool):
        counts = {}
        for sent in sentences:
            for tok in sent:
                counts[tok] = counts.get(tok, 0) + 1
        kept = sorted(((t, c) for t, c in counts.items()
                       if c >= cfg.min_count), key=lambda kv: (-kv[1], kv[0]))
        if not kept:
            raise EmptyCorpusError(
                "no unit meets min_count; vocabulary is empty")
        self.cfg = cfg
        self.vocab = {t: i for i, (t, _) in enumerate(kept)}
        self.counts = np.array([c for _, c in kept], dtype=np.float64)
        self.sentences = sentences
        self.fasttext = fasttext
        self.rng = np.random.default_rng(cfg.seed)

        noise = self.counts ** NOISE_POWER
        self.noise_cdf = np.cumsum(noise / noise.sum())

        total = self.counts.sum()
        freq = self.counts / total
        ratio = cfg.subsample_t / freq
        self.keep_prob = np.minimum(1.0, np.sqrt(ratio) + ratio)

        dim = cfg.dim
        scale = 0.5 / dim
        self.w_in = self.rng.uniform(-scale, scale,
                                     (len(kept), dim)).astype(np.float32)
        self.w_out = np.zeros((len(kept), dim), dtype=np.float32)
        if fasttext:
            self.ngrams = self.rng.uniform(
                -scale, scale, (cfg.bucket_count, dim)).astype(np.float32)
            self.word_buckets = [
                np.array(ngram_bucket_ids(t, cfg.ngram_min, cfg.ngram_max,
                                          cfg.bucket_count), dtype=np.int64)
                for t, _ in kept]
        # total unit budget for linear lr decay
        self.total_units = max(1, cfg.epochs * int(total))
        self.processed = 0

    def _input_vector(self, idx: int) -> np.ndarray:
        if not self.fasttext:
            return self.w_in[idx]
        buckets = self.word_buckets[idx]
        if len(buckets) == 0:
            return self.w_in[idx]
        return (self.w_in[idx] + self.ngrams[buckets].sum(axis=0)) / (
            1 + len(buckets))

    def _apply_input_grad(self, idx: int, grad: np.ndarray):
        if not self.fasttext:
            self.w_in[idx] += grad
            return
        buckets = self.word_buckets[idx]
        share = grad / (1 + len(buckets))
        self.w_in[idx] += share
        if len(buckets):
            np.add.at(self.ngrams, buckets, share)

    def _lr(self) -> float:
        lr0 = self.cfg.initial_lr
        frac = self.processed / self.total_units
        return max(lr0 * (1.0 - frac), lr0 * LR_FLOOR_FACTOR)

    def _sample_negatives(self, n: int) -> np.ndarray:
        return np.searchsorted(self.noise_cdf, self.rng.random(n))

    def _pair_update(self, in_vec, target: int, lr: float):
        """One positive target plus sampled negatives; returns grad wrt the
        input representation (already lr-scaled)."""
        negs = self._sample_negatives(self.cfg.negatives)
        idxs = np.concatenate(([target], negs))
        labels = np.zeros(len(idxs), dtype=np.float32)
        labels[0] = 1.0
        u = self.w_out[idxs]
        f = sigmoid(u @ in_vec)
        g = (labels - f) * lr
        d_in = g @ u
        np.add.at(self.w_out, idxs, np.outer(g, in_vec))
        return d_in

    def run(self):
        cfg = self.cfg
        for _ in range(cfg.epochs):
            for sent in self.sentences:
                ids = [self.vocab[t] for t in sent if t in self.vocab]
                kept = [i for i in ids
                        if self.rng.random() < self.keep_prob[i]]
                self.processed += len(ids)
                n = len(kept)
                for pos in range(n):
                    lr = self._lr()
                    b = int(self.rng.integers(1, cfg.window + 1))
                    ctx = kept[max(0, pos - b):pos] + kept[pos + 1:pos + 1 + b]
                    if not ctx:
                        continue
                    center = kept[pos]
                    if cfg.algorithm == "skipgram":
                        for c in ctx:
                            v = self._input_vector(center)
                            d = self._pair_update(v, c, lr)
                            self._apply_input_grad(center, d)
                    else:  # cbow
                        vecs = [self._input_vector(c) for c in ctx]
                        h = np.mean(vecs, axis=0)
                        d = self._pair_update(h, center, lr) / len(ctx)
                        for c in ctx:
                            self._apply_input_grad(c, d)

    def store(self, kind: str) -> VectorStore:
        cfg = self.cfg
        return VectorStore(
            vocab=dict(self.vocab), matrix=self.w_in, kind=kind, dim=cfg.dim,
            ngram_matrix=self.ngrams if self.fasttext else None,
            ngram_min=cfg.ngram_min, ngram_max=cfg.ngram_max,
            bucket_count=cfg.bucket_count if self.fasttext else 0)


def _unit_sentences(corpus: TokenizedCorpus,
                    tok: TokenizerModel | None) -> list[list[str]]:
    if tok is None or tok.kind == "word":
        return corpus.sentences
    return [encode(tok, sent).pieces for sent in corpus.sentences]


def train_word2vec(corpus: TokenizedCorpus, tok: TokenizerModel | None,
                   cfg: TrainConfig) -> VectorStore:
    """Train CBOW/Skipgram vectors; with a subword tokenizer the training
    units are its pieces."""
    if corpus.total_tokens == 0:
        raise EmptyCorpusError("cannot train on an empty corpus")
    trainer = _Trainer(_unit_sentences(corpus, tok), cfg, fasttext=False)
    trainer.run()
    return trainer.store("word2vec")


def train_fasttext(corpus: TokenizedCorpus, cfg: TrainConfig) -> VectorStore:
    """Word2vec with hashed character n-gram input vectors."""
    if corpus.total_tokens == 0:
        raise EmptyCorpusError("cannot train on an empty corpus")
    trainer = _Trainer(corpus.sentences, cfg, fasttext=True)
    trainer.run()
    return trainer.store("fasttext")


# ---------------------------------------------------------------------------
# Resolution


def vector(store: VectorStore, token: str,
           policy: OovPolicy) -> np.ndarray | None:
    """Resolve a token to a vector; None means absent (skip policy)."""
    if policy.variant == "ngram_mean" and store.kind != "fasttext":
        raise ConfigError("ngram_mean policy requires a fasttext store")
    idx = store.vocab.get(token)
    if idx is not None:
        if store.kind == "fasttext":
            # fasttext composes in-vocab words from word + n-gram rows too
            buckets = ngram_bucket_ids(token, store.ngram_min,
                                       store.ngram_max, store.bucket_count)
            if buckets:
                return (store.matrix[idx]
                        + store.ngram_matrix[buckets].sum(axis=0)) / (
                    1 + len(buckets))
        return store.matrix[idx]
    if policy.variant == "skip":
        return None
    if policy.variant == "zero":
        return np.zeros(store.dim, dtype=store.matrix.dtype)
    if policy.variant == "ngram_mean":
        buckets = ngram_bucket_ids(token, store.ngram_min, store.ngram_max,
                                   store.bucket_count)
        if not buckets:
            return np.zeros(store.dim, dtype=store.matrix.dtype)
        # sorted so equal bucket multisets sum in the same order (bitwise
        # identical results under float32)
        return store.ngram_matrix[sorted(buckets)].mean(axis=0)
    # subword_mean
    enc = encode(policy.tokenizer, [token])
    rows = [store.matrix[store.vocab[p]] for p in enc.pieces
            if p in store.vocab]
    if not rows:
        return np.zeros(store.dim, dtype=store.matrix.dtype)
    return np.mean(rows, axis=0)


def embed_sentence(store: VectorStore, tokens: list[str],
                   policy: OovPolicy) -> np.ndarray | None:
    """Mean of resolved token vectors; absent tokens are excluded. Returns
    None when every token is absent."""
    if not tokens:
        raise ValueError("cannot embed an empty token list")
    vecs = [v for v in (vector(store, t, policy) for t in tokens)
            if v is not None]
    if not vecs:
        return None
    return np.mean(vecs, axis=0)


# ---------------------------------------------------------------------------
# Serialization


def save_vectors(store: VectorStore, path):
    """Text format: header '<count> <dim>', then 'token v1 ... v_dim'."""
    path = Path(path)
    order = sorted(store.vocab.items(), key=lambda kv: kv[1])
    with path.open("w", encoding="utf-8") as f:
        f.write(f"{len(order)} {store.dim}\n")
        for tok, idx in order:
            vals = " ".join(repr(float(x)) for x in store.matrix[idx])
            f.write(f"{tok} {vals}\n")


def load_vectors(path) -> VectorStore:
    """Load the text vector format; a missing header is inferred from the
    first row. Duplicate tokens keep the first occurrence with a warning."""
    path = Path(path)
    vocab: dict[str, int] = {}
    rows: list[np.ndarray] = []
    dim = None
    with path.open("r", encoding="utf-8") as f:
        first = f.readline()
        parts = first.split()
        start_line = 2
        pending = None
        if len(parts) == 2 and all(p.isdigit() for p in parts):
            dim = int(parts[1])
        else:
            pending = (first, 1)

        def handle(line, lineno):
            nonlocal dim
            cols = line.rstrip("\n").split(" ")
            if len(cols) < 2:
                raise FormatError("row has no vector values",
                                  line=lineno, path=path)
            tok, vals = cols[0], cols[1:]
            try:
                vec = np.array([float(v) for v in vals], dtype=np.float32)
            except ValueError as exc:
                raise FormatError(f"non-numeric field: {exc}",
                                  line=lineno, path=path) from exc
            if dim is None:
                dim = len(vec)
            if len(vec) != dim:
                raise FormatError(
                    f"ragged row: expected {dim} values, got {len(vec)}",
                    line=lineno, path=path)
            if tok in vocab:
                warnings.warn(f"duplicate token {tok!r} at line {lineno}; "
                              "keeping first occurrence")
                return
            vocab[tok] = len(rows)
            rows.append(vec)
        if pending is not None:
            handle(*pending)
        for lineno, line in enumerate(f, start=start_line):
            if line.strip():
                handle(line, lineno)
    if not rows:
        raise FormatError("no vectors found", path=path)
    return VectorStore(vocab=vocab, matrix=np.vstack(rows),
                       kind="external", dim=dim)


# ---------------------------------------------------------------------------
# Contextual vectors


class ContextualStore:
    """Sentence-keyed, token-aligned vectors supplied by an external
    provider (JSON Lines: {"id", "tokens", "vectors"})."""

    def __init__(self, records: dict[str, tuple[list[str], np.ndarray]],
                 dim: int):
        self.records = records
        self.dim = dim
        self.kind = "contextual"

    def token_vectors(self, sentence_id: str) -> np.ndarray:
        if sentence_id not in self.records:
            raise KeyError(f"sentence id {sentence_id!r} missing from "
                           "contextual store")
        return self.records[sentence_id][1]

    def sentence_vector(self, sentence_id: str) -> np.ndarray:
        return self.token_vectors(sentence_id).mean(axis=0)

    def require_ids(self, ids):
        missing = [i for i in ids if i not in self.records]
        if missing:
            raise FormatError(
                "contextual store is missing sentence ids: "
                + ", ".join(map(str, missing[:20]))
                + ("..." if len(missing) > 20 else ""))


def load_contextual(path) -> ContextualStore:
    path = Path(path)
    records = {}
    dim = None
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc}",
                                  line=lineno, path=path) from exc
            try:
                sid, tokens, vectors = doc["id"], doc["tokens"], doc["vectors"]
            except KeyError as exc:
                raise FormatError(f"missing field {exc}",
                                  line=lineno, path=path) from exc
            if len(vectors) != len(tokens):
                raise FormatError(
                    f"alignment error: {len(tokens)} tokens but "
                    f"{len(vectors)} vectors for id {sid!r}",
                    line=lineno, path=path)
            mat = np.array(vectors, dtype=np.float32)
            if mat.ndim != 2:
                raise FormatError("vectors must share one dimension",
                                  line=lineno, path=path)
            if dim is None:
                dim = mat.shape[1]
            elif mat.shape[1] != dim:
                raise FormatError(
                    f"dimension mismatch: expected {dim}, got {mat.shape[1]}",
                    line=lineno, path=path)
            records[str(sid)] = (list(tokens), mat)
    if dim is None:
        raise FormatError("no records found", path=path)
    return ContextualStore(records, dim)
