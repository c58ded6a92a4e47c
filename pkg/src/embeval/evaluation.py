"""The evaluation suite: similarity correlations, token-level NER probing,
KNN document classification, and the report tables.

Correlation metrics drop pairs with NaN/absent model values before
computation; a correlation is undefined (None) when fewer than two pairs
remain or either side is constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datasets import DocDataset, SimilarityDataset, TaggedDataset
from .embeddings import ContextualStore, OovPolicy, VectorStore, \
    embed_sentence, vector
from .errors import ConfigError
from .neural import TaggerConfig, predict, train_on_embedded

OUTSIDE_TAG = "O"


# ---------------------------------------------------------------------------
# Metrics


def cosine(u, v) -> float:
    """Cosine similarity in [-1, 1]; NaN when either norm is zero (treated
    downstream like an OOV skip)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return float("nan")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _finite_pairs(xs, ys):
    xs = np.asarray([math.nan if x is None else x for x in xs], dtype=float)
    ys = np.asarray([math.nan if y is None else y for y in ys], dtype=float)
    if xs.shape != ys.shape:
        raise ValueError("length mismatch")
    keep = np.isfinite(xs) & np.isfinite(ys)
    return xs[keep], ys[keep]


def pearson(xs, ys) -> float | None:
    x, y = _finite_pairs(xs, ys)
    if len(x) < 2:
        return None
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        return None
    return float(xc @ yc) / denom


def average_ranks(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties averaged."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=float)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys) -> float | None:
    x, y = _finite_pairs(xs, ys)
    if len(x) < 2:
        return None
    return pearson(average_ranks(x), average_ranks(y))


def kendall(xs, ys) -> float | None:
    """Tau-b (tie-corrected), computed from all pairwise comparisons."""
    x, y = _finite_pairs(xs, ys)
    n = len(x)
    if n < 2:
        return None
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    concordance = float((sx[iu] * sy[iu]).sum())
    n0 = n * (n - 1) / 2
    n1 = n0 - float((sx[iu] != 0).sum())
    n2 = n0 - float((sy[iu] != 0).sum())
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0.0:
        return None
    return concordance / denom


# ---------------------------------------------------------------------------
# Reports


@dataclass
class CorrelationReport:
    pearson: float | None
    kendall: float | None
    spearman: float | None
    n_total: int
    n_oov: int
    n_used: int
    split: str  # in_vocab | oov | overall

    def to_dict(self) -> dict:
        return {
            "pearson": self.pearson, "kendall": self.kendall,
            "spearman": self.spearman, "n_total": self.n_total,
            "n_oov": self.n_oov, "n_used": self.n_used, "split": self.split,
        }


@dataclass
class ClassificationReport:
    accuracy: float
    precision: float
    recall: float
    f_beta: float
    matthews: float
    per_class: dict[str, dict[str, float]]
    beta: float = 1.0
    averaging: str = "weighted"
    mcc_undefined: bool = False
    o_excluded: bool = False

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f_beta": self.f_beta,
            "matthews": self.matthews, "per_class": self.per_class,
            "beta": self.beta, "averaging": self.averaging,
            "mcc_undefined": self.mcc_undefined,
            "o_excluded": self.o_excluded,
        }


def _correlate(model_scores, human_scores, n_total, n_oov,
               split) -> CorrelationReport:
    x, y = _finite_pairs(model_scores, human_scores)
    return CorrelationReport(
        pearson=pearson(model_scores, human_scores),
        kendall=kendall(model_scores, human_scores),
        spearman=spearman(model_scores, human_scores),
        n_total=n_total, n_oov=n_oov, n_used=len(x), split=split)


def matthews_corrcoef(confusion: np.ndarray) -> tuple[float, bool]:
    """Multiclass MCC in covariance form; (0.0, True) when undefined."""
    c = float(np.trace(confusion))
    s = float(confusion.sum())
    p = confusion.sum(axis=0).astype(float)  # predicted per class
    t = confusion.sum(axis=1).astype(float)  # true per class
    num = c * s - float(p @ t)
    denom = math.sqrt((s * s - float(p @ p)) * (s * s - float(t @ t)))
    if denom == 0.0:
        return 0.0, True
    return num / denom, False


def classification_metrics(gold, pred, beta: float = 1.0,
                           label_set=None) -> ClassificationReport:
    """Per-class precision/recall/F-beta plus support-weighted global
    averages, accuracy, and multiclass MCC. Classes never predicted take
    precision 0."""
    if len(gold) != len(pred):
        raise ValueError("gold and pred lengths differ")
    if not gold:
        raise ValueError("empty input")
    labels = sorted(label_set) if label_set else sorted(set(gold) | set(pred))
    index = {lab: i for i, lab in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for g, p in zip(gold, pred):
        confusion[index[g], index[p]] += 1
    per_class = {}
    for lab in labels:
        i = index[lab]
        tp = confusion[i, i]
        support = int(confusion[i].sum())
        predicted = int(confusion[:, i].sum())
        prec = tp / predicted if predicted else 0.0
        rec = tp / support if support else 0.0
        b2 = beta * beta
        f = ((1 + b2) * prec * rec / (b2 * prec + rec)
             if prec + rec > 0 else 0.0)
        per_class[lab] = {"precision": prec, "recall": rec, "f_beta": f,
                          "support": support}
    total = sum(pc["support"] for pc in per_class.values())
    weighted = {
        key: sum(pc[key] * pc["support"] for pc in per_class.values()) / total
        for key in ("precision", "recall", "f_beta")
    }
    accuracy = float(np.trace(confusion)) / len(gold)
    mcc, undefined = matthews_corrcoef(confusion)
    return ClassificationReport(
        accuracy=accuracy, precision=weighted["precision"],
        recall=weighted["recall"], f_beta=weighted["f_beta"], matthews=mcc,
        per_class=per_class, beta=beta, mcc_undefined=undefined)


# ---------------------------------------------------------------------------
# Token resolution shared by the tasks


def _resolve(store, token, policy, lowercase):
    return vector(store, token.lower() if lowercase else token, policy)


def _sentence_vec(store, tokens, policy, lowercase):
    toks = [t.lower() for t in tokens] if lowercase else list(tokens)
    return embed_sentence(store, toks, policy)


# ---------------------------------------------------------------------------
# Word / sentence similarity


def eval_word_similarity(store: VectorStore, policy: OovPolicy,
                         dataset: SimilarityDataset, lowercase: bool = True,
                         ) -> dict[str, CorrelationReport]:
    """Three reports: in_vocab / oov / overall. A pair is OOV when either
    word is absent from the word vocabulary; under the skip policy such
    pairs yield NaN and are dropped by the correlation metrics."""
    rows = []  # (is_oov, model_sim, human)
    for _, w1, w2, human in dataset.items:
        t1 = w1.lower() if lowercase else w1
        t2 = w2.lower() if lowercase else w2
        is_oov = t1 not in store.vocab or t2 not in store.vocab
        v1 = vector(store, t1, policy)
        v2 = vector(store, t2, policy)
        sim = float("nan") if v1 is None or v2 is None else cosine(v1, v2)
        rows.append((is_oov, sim, human))
    n_total = len(rows)
    n_oov = sum(1 for oov, _, _ in rows if oov)
    out = {}
    for split, keep in (("in_vocab", lambda oov: not oov),
                        ("oov", lambda oov: oov),
                        ("overall", lambda oov: True)):
        sims = [s for oov, s, _ in rows if keep(oov)]
        humans = [h for oov, _, h in rows if keep(oov)]
        out[split] = _correlate(sims, humans, n_total, n_oov, split)
    return out


def eval_sentence_similarity(store, policy: OovPolicy | None,
                             dataset: SimilarityDataset,
                             lowercase: bool = True) -> CorrelationReport:
    """Sentence vector = mean of token vectors, then the word-similarity
    procedure. `store` may be a ContextualStore keyed by '<pair-id>/l' and
    '<pair-id>/r'."""
    sims, humans = [], []
    n_oov = 0
    for pid, left, right, human in dataset.items:
        if isinstance(store, ContextualStore):
            v1 = store.sentence_vector(f"{pid}/l")
            v2 = store.sentence_vector(f"{pid}/r")
        else:
            v1 = _sentence_vec(store, left.split(), policy, lowercase)
            v2 = _sentence_vec(store, right.split(), policy, lowercase)
        if v1 is None or v2 is None:
            n_oov += 1
            sims.append(float("nan"))
        else:
            sims.append(cosine(v1, v2))
        humans.append(human)
    return _correlate(sims, humans, len(dataset.items), n_oov, "overall")


def similarity_sentence_records(dataset: SimilarityDataset) -> list[dict]:
    """Sentence records for the contextual provider, one per pair side."""
    records = []
    for pid, left, right, _ in dataset.items:
        records.append({"id": f"{pid}/l", "tokens": left.split()})
        records.append({"id": f"{pid}/r", "tokens": right.split()})
    return records


def tagged_sentence_records(dataset: TaggedDataset) -> list[dict]:
    return [{"id": sid, "tokens": tokens}
            for sid, tokens, _ in dataset.sentences]


# ---------------------------------------------------------------------------
# NER probe


def _split_indices(dataset: TaggedDataset) -> tuple[list[int], list[int]]:
    if "train" in dataset.splits and "test" in dataset.splits:
        return dataset.splits["train"], dataset.splits["test"]
    n = len(dataset.sentences)
    cut = max(1, int(n * 0.8))
    return list(range(cut)), list(range(cut, n))


def _embed_tagged(store, policy, dataset, indices, lowercase):
    """Embedded sentence matrices; absent tokens fall back to zero vectors
    so the probe always sees a full-length input."""
    out = []
    for i in indices:
        sid, tokens, _ = dataset.sentences[i]
        if isinstance(store, ContextualStore):
            out.append(np.asarray(store.token_vectors(sid), dtype=np.float64))
            continue
        rows = []
        for tok in tokens:
            v = _resolve(store, tok, policy, lowercase)
            rows.append(np.zeros(store.dim) if v is None
                        else np.asarray(v, dtype=np.float64))
        out.append(np.stack(rows))
    return out


def eval_ner(store, policy: OovPolicy | None, dataset: TaggedDataset,
             cfg: TaggerConfig, lowercase: bool = True,
             ) -> ClassificationReport:
    """Train the BiLSTM probe on the train split with frozen embeddings and
    score the test split: accuracy over all tokens; precision/recall/F/MCC
    over tokens involving a non-O tag."""
    train_idx, test_idx = _split_indices(dataset)
    if not train_idx or not test_idx:
        raise ValueError("dataset must provide nonempty train and test sets")
    if isinstance(store, ContextualStore):
        store.require_ids([dataset.sentences[i][0]
                           for i in train_idx + test_idx])
    train_x = _embed_tagged(store, policy, dataset, train_idx, lowercase)
    train_y = [dataset.sentences[i][2] for i in train_idx]
    model = train_on_embedded(train_x, train_y, cfg,
                              tag_vocab=sorted(dataset.tag_set))
    test_x = _embed_tagged(store, policy, dataset, test_idx, lowercase)
    gold, pred = [], []
    for x, i in zip(test_x, test_idx):
        gold.extend(dataset.sentences[i][2])
        pred.extend(predict(model, x))
    return ner_metrics(gold, pred)


def ner_metrics(gold, pred, beta: float = 1.0) -> ClassificationReport:
    """Token-level NER scoring: accuracy over all tokens; the remaining
    metrics over tokens where gold or pred is a non-O tag."""
    full = classification_metrics(gold, pred, beta=beta)
    pairs = [(g, p) for g, p in zip(gold, pred)
             if g != OUTSIDE_TAG or p != OUTSIDE_TAG]
    if pairs:
        sub_gold = [g for g, _ in pairs]
        sub_pred = [p for _, p in pairs]
        sub = classification_metrics(sub_gold, sub_pred, beta=beta)
        per_class = {lab: pc for lab, pc in sub.per_class.items()
                     if lab != OUTSIDE_TAG}
        support = sum(pc["support"] for pc in per_class.values())
        if support:
            weighted = {
                key: sum(pc[key] * pc["support"]
                         for pc in per_class.values()) / support
                for key in ("precision", "recall", "f_beta")
            }
        else:
            weighted = {"precision": 0.0, "recall": 0.0, "f_beta": 0.0}
        mcc, undefined = sub.matthews, sub.mcc_undefined
    else:
        per_class = {}
        weighted = {"precision": 0.0, "recall": 0.0, "f_beta": 0.0}
        mcc, undefined = 0.0, True
    return ClassificationReport(
        accuracy=full.accuracy, precision=weighted["precision"],
        recall=weighted["recall"], f_beta=weighted["f_beta"], matthews=mcc,
        per_class=per_class, beta=beta, mcc_undefined=undefined,
        o_excluded=True)


# ---------------------------------------------------------------------------
# KNN document classification


def split_stratified(labels, test_frac: float = 0.2, seed: int = 1,
                     ) -> tuple[list[int], list[int]]:
    """Deterministic stratified split; classes with a single example stay
    in the training set."""
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        by_label.setdefault(lab, []).append(i)
    train, test = [], []
    for lab in sorted(by_label):
        idxs = by_label[lab]
        perm = list(rng.permutation(len(idxs)))
        n_test = int(len(idxs) * test_frac)
        test.extend(idxs[p] for p in perm[:n_test])
        train.extend(idxs[p] for p in perm[n_test:])
    return sorted(train), sorted(test)


def knn_predict(train_vecs: np.ndarray, train_labels: list[str],
                query: np.ndarray, k: int = 3,
                distance: str = "cosine") -> str:
    """Majority label among the k nearest training vectors; ties broken by
    the single nearest neighbor's label. Zero-norm cosine pairs rank last."""
    if len(train_labels) < k:
        raise ValueError(f"need at least k={k} training documents, "
                         f"have {len(train_labels)}")
    if distance == "cosine":
        sims = np.array([cosine(query, tv) for tv in train_vecs])
        dists = 1.0 - np.where(np.isfinite(sims), sims, -1.0)
    elif distance == "euclidean":
        dists = np.linalg.norm(train_vecs - query[None, :], axis=1)
    else:
        raise ConfigError(f"unknown distance {distance!r}")
    order = sorted(range(len(dists)), key=lambda i: (dists[i], i))
    top = order[:k]
    votes: dict[str, int] = {}
    for i in top:
        votes[train_labels[i]] = votes.get(train_labels[i], 0) + 1
    best = max(votes.values())
    winners = [lab for lab, v in votes.items() if v == best]
    if len(winners) == 1:
        return winners[0]
    return train_labels[top[0]]


def eval_docclass(store, policy: OovPolicy | None, dataset: DocDataset,
                  k: int = 3, seed: int = 1, distance: str = "cosine",
                  lowercase: bool = True) -> ClassificationReport:
    """Mean-embedding KNN classification over a seeded stratified 80/20
    split."""
    labels = [lab for _, _, _, lab in dataset.docs]
    vecs = []
    for i in range(len(dataset.docs)):
        tokens = dataset.text(i).split()
        v = _sentence_vec(store, tokens, policy, lowercase) if tokens else None
        vecs.append(np.zeros(store.dim) if v is None
                    else np.asarray(v, dtype=np.float64))
    vecs = np.stack(vecs)
    train_idx, test_idx = split_stratified(labels, seed=seed)
    if len(train_idx) < k:
        raise ValueError(f"fewer than k={k} training documents")
    train_vecs = vecs[train_idx]
    train_labels = [labels[i] for i in train_idx]
    gold = [labels[i] for i in test_idx]
    pred = [knn_predict(train_vecs, train_labels, vecs[i], k=k,
                        distance=distance) for i in test_idx]
    return classification_metrics(gold, pred,
                                  label_set=sorted(dataset.label_set))


# ---------------------------------------------------------------------------
# Table rendering

CORRELATION_COLUMNS = ["Pearson", "Kendall", "Spearman"]
CLASSIFICATION_COLUMNS = ["Accuracy", "Precision", "Recall", "F_beta",
                          "Matthews"]


def _fmt(value) -> str:
    if value is None:
        return "NaN"
    return f"{value:.4f}"


def _table(header, rows, best_high=True) -> str:
    """Markdown table; the best value per numeric column is bolded."""
    n_cols = len(header) - 1
    best = [None] * n_cols
    for _, vals in rows:
        for j, v in enumerate(vals):
            if v is not None and (best[j] is None or
                                  (v > best[j] if best_high else v < best[j])):
                best[j] = v
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join(["---"] * len(header)) + "|"]
    for name, vals in rows:
        cells = [name]
        for j, v in enumerate(vals):
            text = _fmt(v)
            if v is not None and best[j] is not None and v == best[j]:
                text = f"**{text}**"
            cells.append(text)
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def correlation_table(rows: list[tuple[str, CorrelationReport]]) -> str:
    return _table(["Model Name"] + CORRELATION_COLUMNS,
                  [(name, [r.pearson, r.kendall, r.spearman])
                   for name, r in rows])


def classification_table(rows: list[tuple[str, ClassificationReport]]) -> str:
    return _table(["Model Name"] + CLASSIFICATION_COLUMNS,
                  [(name, [r.accuracy, r.precision, r.recall, r.f_beta,
                           r.matthews]) for name, r in rows])


def correlation_csv(rows: list[tuple[str, CorrelationReport]]) -> str:
    lines = ["model," + ",".join(c.lower() for c in CORRELATION_COLUMNS)]
    for name, r in rows:
        lines.append(",".join([name, _fmt(r.pearson), _fmt(r.kendall),
                               _fmt(r.spearman)]))
    return "\n".join(lines) + "\n"


def classification_csv(rows: list[tuple[str, ClassificationReport]]) -> str:
    lines = ["model," + ",".join(c.lower() for c in CLASSIFICATION_COLUMNS)]
    for name, r in rows:
        lines.append(",".join([name, _fmt(r.accuracy), _fmt(r.precision),
                               _fmt(r.recall), _fmt(r.f_beta),
                               _fmt(r.matthews)]))
    return "\n".join(lines) + "\n"
