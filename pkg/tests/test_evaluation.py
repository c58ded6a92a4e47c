import math
import random

import numpy as np
import pytest

from embeval.datasets import DocDataset, SimilarityDataset, TaggedDataset
from embeval.embeddings import ContextualStore, OovPolicy, VectorStore
from embeval.evaluation import (
    classification_metrics,
    classification_table,
    correlation_csv,
    correlation_table,
    cosine,
    eval_docclass,
    eval_ner,
    eval_sentence_similarity,
    eval_word_similarity,
    kendall,
    knn_predict,
    matthews_corrcoef,
    ner_metrics,
    pearson,
    similarity_sentence_records,
    spearman,
    split_stratified,
)
from embeval.neural import TaggerConfig


# ---------------------------------------------------------------------------
# independent metric oracles (pure Python, no numpy vectorization)

def pearson_oracle(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    num = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    den = math.sqrt(sum((x - mx) ** 2 for x in xs)
                    * sum((y - my) ** 2 for y in ys))
    return num / den


def ranks_oracle(xs):
    out = [0.0] * len(xs)
    for i, x in enumerate(xs):
        less = sum(1 for v in xs if v < x)
        equal = sum(1 for v in xs if v == x)
        out[i] = less + (equal + 1) / 2.0
    return out


def kendall_oracle(xs, ys):
    n = len(xs)
    concordant = discordant = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = xs[i] - xs[j]
            dy = ys[i] - ys[j]
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tx += 1
            elif dy == 0:
                ty += 1
            elif (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    pairs_x = {}
    pairs_y = {}
    for v in xs:
        pairs_x[v] = pairs_x.get(v, 0) + 1
    for v in ys:
        pairs_y[v] = pairs_y.get(v, 0) + 1
    n0 = n * (n - 1) / 2
    n1 = sum(c * (c - 1) / 2 for c in pairs_x.values())
    n2 = sum(c * (c - 1) / 2 for c in pairs_y.values())
    return (concordant - discordant) / math.sqrt((n0 - n1) * (n0 - n2))


def drop_nan_pairs(xs, ys):
    kept = [(x, y) for x, y in zip(xs, ys)
            if not (math.isnan(x) or math.isnan(y))]
    return [x for x, _ in kept], [y for _, y in kept]


# ---------------------------------------------------------------------------
# correlations

def test_correlations_match_oracles_on_random_data():
    rng = random.Random(101)
    for trial in range(10):
        n = rng.randint(5, 40)
        xs = [rng.uniform(-3, 3) for _ in range(n)]
        ys = [0.4 * x + rng.uniform(-1, 1) for x in xs]
        if trial % 2:  # inject ties
            xs = [round(x, 1) for x in xs]
            ys = [round(y, 1) for y in ys]
        assert abs(pearson(xs, ys) - pearson_oracle(xs, ys)) <= 1e-12
        assert abs(spearman(xs, ys)
                   - pearson_oracle(ranks_oracle(xs),
                                    ranks_oracle(ys))) <= 1e-12
        assert abs(kendall(xs, ys) - kendall_oracle(xs, ys)) <= 1e-12


def test_correlations_skip_nan_pairs():
    rng = random.Random(202)
    xs = [rng.uniform(0, 1) for _ in range(30)]
    ys = [rng.uniform(0, 1) for _ in range(30)]
    for i in (2, 7, 11):
        xs[i] = float("nan")
    ys[20] = float("nan")
    cx, cy = drop_nan_pairs(xs, ys)
    assert abs(pearson(xs, ys) - pearson_oracle(cx, cy)) <= 1e-12
    assert abs(kendall(xs, ys) - kendall_oracle(cx, cy)) <= 1e-12
    assert abs(spearman(xs, ys)
               - pearson_oracle(ranks_oracle(cx), ranks_oracle(cy))) <= 1e-12


def test_correlations_none_accepted_as_nan():
    assert pearson([1.0, None, 2.0, 3.0], [1.0, 9.0, 2.0, 3.0]) == \
        pytest.approx(1.0)


def test_correlation_undefined_cases():
    for fn in (pearson, spearman, kendall):
        assert fn([], []) is None
        assert fn([1.0], [2.0]) is None
        assert fn([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) is None
        assert fn([float("nan"), 1.0, float("nan")], [1.0, 2.0, 3.0]) is None


def test_perfect_correlations():
    xs = [1.0, 2.0, 3.0, 4.0]
    ys = [10.0, 20.0, 30.0, 40.0]
    assert pearson(xs, ys) == pytest.approx(1.0, abs=1e-12)
    assert spearman(xs, ys) == pytest.approx(1.0, abs=1e-12)
    assert kendall(xs, ys) == pytest.approx(1.0, abs=1e-12)
    ys_rev = ys[::-1]
    assert kendall(xs, ys_rev) == pytest.approx(-1.0, abs=1e-12)


def test_cosine():
    assert cosine([1, 0], [0, 1]) == pytest.approx(0.0)
    assert cosine([1, 2], [2, 4]) == pytest.approx(1.0)
    assert cosine([1, 0], [-1, 0]) == pytest.approx(-1.0)
    assert math.isnan(cosine([0, 0], [1, 1]))
    with pytest.raises(ValueError):
        cosine([1, 2], [1, 2, 3])


# ---------------------------------------------------------------------------
# classification metrics

def test_classification_metrics_hand_oracle():
    gold = ["a", "a", "a", "b", "b", "c"]
    pred = ["a", "b", "a", "b", "b", "a"]
    rep = classification_metrics(gold, pred)
    assert rep.accuracy == pytest.approx(4 / 6, abs=1e-12)
    # class a: tp=2, predicted=3, support=3
    assert rep.per_class["a"]["precision"] == pytest.approx(2 / 3)
    assert rep.per_class["a"]["recall"] == pytest.approx(2 / 3)
    # class c: never predicted correctly
    assert rep.per_class["c"]["recall"] == 0.0
    expected_prec = (3 * (2 / 3) + 2 * (2 / 3) + 1 * 0.0) / 6
    assert rep.precision == pytest.approx(expected_prec, abs=1e-12)


def test_weighted_recall_equals_accuracy():
    rng = random.Random(99)
    labels = ["x", "y", "z", "w"]
    for _ in range(50):
        n = rng.randint(2, 60)
        gold = [rng.choice(labels) for _ in range(n)]
        pred = [rng.choice(labels) for _ in range(n)]
        rep = classification_metrics(gold, pred)
        assert abs(rep.recall - rep.accuracy) <= 1e-12


def test_mcc_extremes_and_binary_oracle():
    gold = ["p", "n", "p", "n", "p"]
    assert classification_metrics(gold, gold).matthews == pytest.approx(1.0)
    flipped = ["n", "p", "n", "p", "n"]
    assert classification_metrics(gold, flipped).matthews == \
        pytest.approx(-1.0)
    rng = random.Random(7)
    for _ in range(20):
        gold = [rng.choice("pn") for _ in range(40)]
        pred = [rng.choice("pn") for _ in range(40)]
        tp = sum(g == p == "p" for g, p in zip(gold, pred))
        tn = sum(g == p == "n" for g, p in zip(gold, pred))
        fp = sum(g == "n" and p == "p" for g, p in zip(gold, pred))
        fn = sum(g == "p" and p == "n" for g, p in zip(gold, pred))
        den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
        rep = classification_metrics(gold, pred)
        if den == 0:
            assert rep.matthews == 0.0 and rep.mcc_undefined
        else:
            assert rep.matthews == pytest.approx(
                (tp * tn - fp * fn) / den, abs=1e-12)


def test_mcc_undefined_flag():
    rep = classification_metrics(["a", "a"], ["a", "a"])
    assert rep.matthews == 0.0
    assert rep.mcc_undefined


def test_f_beta():
    gold = ["a"] * 8 + ["b"] * 2
    pred = ["a"] * 6 + ["b"] * 4
    rep1 = classification_metrics(gold, pred, beta=1.0)
    rep2 = classification_metrics(gold, pred, beta=2.0)
    pc = rep2.per_class["a"]
    prec, rec = pc["precision"], pc["recall"]
    assert pc["f_beta"] == pytest.approx(5 * prec * rec / (4 * prec + rec))
    assert rep1.per_class["a"]["f_beta"] != pc["f_beta"]


def test_classification_metrics_input_validation():
    with pytest.raises(ValueError):
        classification_metrics(["a"], ["a", "b"])
    with pytest.raises(ValueError):
        classification_metrics([], [])


def test_matthews_corrcoef_confusion_form():
    confusion = np.array([[5, 1], [2, 7]])
    mcc, undefined = matthews_corrcoef(confusion)
    assert not undefined
    den = math.sqrt((5 + 1) * (5 + 2) * (7 + 1) * (7 + 2))
    assert mcc == pytest.approx((5 * 7 - 1 * 2) / den, abs=1e-12)


# ---------------------------------------------------------------------------
# NER scoring

def test_ner_metrics_excludes_outside_tag():
    gold = ["O", "O", "B-PER", "B-PER", "O", "B-LOC"]
    pred = ["O", "B-PER", "B-PER", "O", "O", "B-LOC"]
    rep = ner_metrics(gold, pred)
    assert rep.o_excluded
    assert rep.accuracy == pytest.approx(4 / 6)
    assert "O" not in rep.per_class
    # non-O weighted: B-PER support 2 (prec 1/2, rec 1/2), B-LOC support 1
    assert rep.precision == pytest.approx((2 * 0.5 + 1 * 1.0) / 3)
    assert rep.recall == pytest.approx((2 * 0.5 + 1 * 1.0) / 3)


def test_ner_metrics_all_outside():
    rep = ner_metrics(["O", "O"], ["O", "O"])
    assert rep.accuracy == 1.0
    assert rep.precision == 0.0
    assert rep.mcc_undefined


# ---------------------------------------------------------------------------
# word / sentence similarity evaluation

def word_store():
    words = ["cold", "ice", "hot", "fire", "warm"]
    mat = np.array([
        [1.0, 0.0, 0.1],
        [0.9, 0.1, 0.0],
        [0.0, 1.0, 0.0],
        [0.1, 0.9, 0.1],
        [0.4, 0.6, 0.0],
    ])
    return VectorStore(vocab={w: i for i, w in enumerate(words)},
                       matrix=mat, kind="word2vec", dim=3)


def test_eval_word_similarity_splits_and_counts():
    store = word_store()
    items = [
        ("p0", "Cold", "ICE", 9.0),     # in vocab after lowercasing
        ("p1", "hot", "fire", 8.0),
        ("p2", "cold", "fire", 2.0),
        ("p3", "cold", "plasma", 5.0),  # OOV
        ("p4", "xenon", "argon", 7.0),  # OOV
    ]
    ds = SimilarityDataset(items=items, score_scale=(0, 10),
                           granularity="word")
    reports = eval_word_similarity(store, OovPolicy("skip"), ds)
    overall = reports["overall"]
    assert overall.n_total == 5
    assert overall.n_oov == 2
    assert overall.n_used == 3
    assert reports["in_vocab"].n_used == 3
    assert reports["oov"].n_used == 0
    assert reports["oov"].pearson is None
    # oracle: correlate hand-computed cosines for the in-vocab pairs
    mat = store.matrix
    sims = [cosine(mat[0], mat[1]), cosine(mat[2], mat[3]),
            cosine(mat[0], mat[3])]
    assert reports["in_vocab"].pearson == pytest.approx(
        pearson_oracle(sims, [9.0, 8.0, 2.0]), abs=1e-12)


def test_eval_word_similarity_zero_policy_uses_all_pairs():
    store = word_store()
    items = [("p0", "cold", "ice", 9.0), ("p1", "cold", "qqq", 5.0),
             ("p2", "hot", "fire", 8.0)]
    ds = SimilarityDataset(items=items, score_scale=(0, 10),
                           granularity="word")
    reports = eval_word_similarity(store, OovPolicy("zero"), ds)
    # zero vector has zero norm: cosine is NaN, pair still dropped
    assert reports["overall"].n_used == 2


def test_eval_sentence_similarity_static():
    store = word_store()
    items = [("p0", "cold ice", "hot fire", 1.0),
             ("p1", "cold ice", "cold ice", 5.0),
             ("p2", "warm fire", "hot", 3.0)]
    ds = SimilarityDataset(items=items, score_scale=(0, 5),
                           granularity="sentence")
    rep = eval_sentence_similarity(store, OovPolicy("skip"), ds)
    assert rep.n_used == 3
    assert rep.pearson is not None and rep.pearson > 0


def test_eval_sentence_similarity_contextual():
    items = [("p0", "a b", "a b", 5.0), ("p1", "a b", "c d", 0.0),
             ("p2", "a", "c", 1.0)]
    ds = SimilarityDataset(items=items, score_scale=(0, 5),
                           granularity="sentence")
    rng = np.random.default_rng(3)
    records = {}
    for rec in similarity_sentence_records(ds):
        base = np.ones(4) if "a" in rec["tokens"] else -np.ones(4)
        mat = np.stack([base + rng.normal(scale=0.01, size=4)
                        for _ in rec["tokens"]])
        records[rec["id"]] = (rec["tokens"], mat)
    store = ContextualStore(records, dim=4)
    rep = eval_sentence_similarity(store, None, ds)
    assert rep.n_used == 3
    assert rep.pearson > 0.9


def test_similarity_sentence_records_ids():
    ds = SimilarityDataset(items=[("p7", "x y", "z", 1.0)],
                           score_scale=(0, 5), granularity="sentence")
    recs = similarity_sentence_records(ds)
    assert [r["id"] for r in recs] == ["p7/l", "p7/r"]
    assert recs[0]["tokens"] == ["x", "y"]


# ---------------------------------------------------------------------------
# NER probe end to end

def test_eval_ner_separable():
    # block-coded embeddings keyed by token identity
    rng = np.random.default_rng(11)
    tags = ["O", "B-PER", "B-CHEM"]
    vocab = {}
    dim = 12
    for t_i, tag in enumerate(tags):
        for k in range(8):
            v = rng.normal(scale=0.05, size=dim)
            v[t_i * 4:(t_i + 1) * 4] += 2.0
            vocab[f"{tag.lower().replace('-', '')}{k}"] = (v, tag)
    words = sorted(vocab)
    mat = np.stack([vocab[w][0] for w in words])
    store = VectorStore(vocab={w: i for i, w in enumerate(words)},
                        matrix=mat, kind="word2vec", dim=dim)
    sentences = []
    for s in range(60):
        length = int(rng.integers(4, 9))
        toks = [words[int(rng.integers(len(words)))] for _ in range(length)]
        sentences.append((f"s{s}", toks, [vocab[t][1] for t in toks]))
    ds = TaggedDataset(sentences=sentences, tag_set=set(tags))
    cfg = TaggerConfig(hidden_size=16, epochs=6, lr=0.005, batch_size=8,
                       seed=1)
    rep = eval_ner(store, OovPolicy("skip"), ds, cfg)
    assert rep.o_excluded
    assert rep.accuracy >= 0.9
    assert rep.f_beta >= 0.85


# ---------------------------------------------------------------------------
# KNN document classification

def test_knn_predict_matches_brute_force():
    rng = np.random.default_rng(21)
    train = rng.normal(size=(30, 5))
    labels = [rng.choice(["a", "b", "c"]) for _ in range(30)]
    for _ in range(20):
        q = rng.normal(size=5)
        got = knn_predict(train, labels, q, k=3)
        sims = [cosine(q, t) for t in train]
        order = sorted(range(30), key=lambda i: (-(sims[i]), i))
        top = order[:3]
        votes = {}
        for i in top:
            votes[labels[i]] = votes.get(labels[i], 0) + 1
        best = max(votes.values())
        winners = [lab for lab, v in votes.items() if v == best]
        expected = winners[0] if len(winners) == 1 else labels[top[0]]
        assert got == expected


def test_knn_tie_breaks_to_nearest():
    train = np.array([[1.0, 0.0], [0.9, 0.4], [0.0, 1.0]])
    labels = ["near", "mid", "far"]
    # three distinct labels in top-3: tie resolved by nearest neighbor
    assert knn_predict(train, labels, np.array([1.0, 0.05]), k=3) == "near"


def test_knn_requires_k_training_docs():
    with pytest.raises(ValueError):
        knn_predict(np.ones((2, 3)), ["a", "b"], np.ones(3), k=3)


def test_split_stratified_deterministic_and_proportional():
    labels = ["a"] * 40 + ["b"] * 10
    tr1, te1 = split_stratified(labels, seed=5)
    tr2, te2 = split_stratified(labels, seed=5)
    assert (tr1, te1) == (tr2, te2)
    assert len(te1) == 10  # 8 from a, 2 from b
    assert sorted(tr1 + te1) == list(range(50))
    assert sum(1 for i in te1 if labels[i] == "b") == 2


def test_split_stratified_singleton_class_stays_in_train():
    labels = ["a"] * 10 + ["solo"]
    train, test = split_stratified(labels, seed=1)
    assert 10 in train


def docclass_fixture():
    # two well-separated topics with disjoint vocabularies
    rng = np.random.default_rng(31)
    words_a = [f"enzyme{i}" for i in range(10)]
    words_b = [f"tariff{i}" for i in range(10)]
    vocab = {}
    mat = []
    for w in words_a:
        vocab[w] = len(mat)
        mat.append(np.array([1.0, 0.0]) + rng.normal(scale=0.05, size=2))
    for w in words_b:
        vocab[w] = len(mat)
        mat.append(np.array([0.0, 1.0]) + rng.normal(scale=0.05, size=2))
    store = VectorStore(vocab=vocab, matrix=np.stack(mat), kind="word2vec",
                        dim=2)
    docs = []
    text_chunks = []
    offset = 0
    py_rng = random.Random(17)
    for d in range(40):
        words = words_a if d % 2 == 0 else words_b
        label = "bio" if d % 2 == 0 else "econ"
        text = " ".join(py_rng.choice(words) for _ in range(6))
        docs.append((f"d{d}", offset, offset + len(text), label))
        text_chunks.append(text)
        offset += len(text)
    ds = DocDataset(docs=docs, backing_text="".join(text_chunks),
                    label_set={"bio", "econ"})
    return store, ds


def test_eval_docclass_separable():
    store, ds = docclass_fixture()
    rep = eval_docclass(store, OovPolicy("skip"), ds, k=3, seed=1)
    assert rep.accuracy == pytest.approx(1.0)
    assert rep.f_beta == pytest.approx(1.0)


def test_eval_docclass_deterministic():
    store, ds = docclass_fixture()
    r1 = eval_docclass(store, OovPolicy("skip"), ds, k=3, seed=4)
    r2 = eval_docclass(store, OovPolicy("skip"), ds, k=3, seed=4)
    assert r1.to_dict() == r2.to_dict()


# ---------------------------------------------------------------------------
# tables

def test_correlation_table_bolds_best():
    from embeval.evaluation import CorrelationReport
    r1 = CorrelationReport(0.5, 0.3, 0.4, 10, 0, 10, "overall")
    r2 = CorrelationReport(0.7, 0.2, None, 10, 0, 10, "overall")
    md = correlation_table([("m1", r1), ("m2", r2)])
    assert "**0.7000**" in md
    assert "**0.3000**" in md
    assert "NaN" in md
    assert md.count("|") > 10


def test_classification_table_and_csv():
    gold = ["a", "a", "b"]
    rep = classification_metrics(gold, gold)
    md = classification_table([("m", rep)])
    assert "**1.0000**" in md
    csv_text = correlation_csv([])
    assert csv_text.startswith("model,pearson,kendall,spearman")
