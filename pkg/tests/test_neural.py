import numpy as np
import pytest

from embeval.errors import ConfigError
from embeval.neural import (
    TaggerConfig,
    TaggerModel,
    batch_loss,
    forward,
    forward_batch,
    gradient_check,
    init_params,
    masked_cross_entropy,
    predict,
    train_on_embedded,
)


def make_model(input_dim=3, hidden=2, num_tags=3, seed=0, zero=False):
    rng = np.random.default_rng(seed)
    params = init_params(input_dim, hidden, num_tags, 2, rng)
    if zero:
        params = {k: np.zeros_like(v) for k, v in params.items()}
    return TaggerModel(params=params,
                       tag_to_id={f"t{i}": i for i in range(num_tags)},
                       input_dim=input_dim, hidden_size=hidden)


def rule_dataset(n_sentences=200, dim=24, seed=42):
    """Tag is a deterministic function of the token; embeddings are
    block-coded by tag so the labeling rule is the oracle."""
    rng = np.random.default_rng(seed)
    tags = ["O", "PER", "LOC", "CHEM"]
    vocab = {}
    for t_i, tag in enumerate(tags):
        for k in range(15):
            v = rng.normal(scale=0.1, size=dim)
            v[t_i * 6:(t_i + 1) * 6] += 2.0
            vocab[f"{tag.lower()}{k}"] = (v, tag)
    words = list(vocab)
    sents, sent_tags = [], []
    for _ in range(n_sentences):
        length = int(rng.integers(5, 12))
        toks = [words[int(rng.integers(len(words)))] for _ in range(length)]
        sents.append(np.stack([vocab[t][0] for t in toks]))
        sent_tags.append([vocab[t][1] for t in toks])
    return sents, sent_tags


def token_accuracy(model, sents, tags):
    correct = total = 0
    for x, ts in zip(sents, tags):
        pred = predict(model, x)
        correct += sum(p == g for p, g in zip(pred, ts))
        total += len(ts)
    return correct / total


# ---------------------------------------------------------------------------
# forward

def test_forward_shape_and_normalization():
    model = make_model()
    probs = forward(model, np.ones((1, 3)))
    assert probs.shape == (1, 3)
    assert abs(probs.sum() - 1.0) <= 1e-6


def test_forward_zero_params_uniform():
    model = make_model(zero=True)
    probs = forward(model, np.random.default_rng(1).normal(size=(4, 3)))
    assert np.allclose(probs, 1.0 / 3)


def test_forward_dim_mismatch():
    model = make_model(input_dim=3)
    with pytest.raises(ValueError):
        forward(model, np.ones((2, 5)))


def test_forward_matches_scalar_recurrence():
    # independent step-by-step LSTM recurrence with hand-set weights
    hidden, dim, T = 2, 3, 2
    rng = np.random.default_rng(7)
    model = make_model(input_dim=dim, hidden=hidden, num_tags=2, seed=7)
    x = rng.normal(size=(T, dim))
    p = model.params

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    def run_dir(seq, key):
        W, U, b = p[f"{key}_W"], p[f"{key}_U"], p[f"{key}_b"]
        h = np.zeros(hidden)
        c = np.zeros(hidden)
        out = []
        for t in range(len(seq)):
            z = seq[t] @ W + h @ U + b
            i, f = sig(z[:hidden]), sig(z[hidden:2 * hidden])
            g, o = np.tanh(z[2 * hidden:3 * hidden]), sig(z[3 * hidden:])
            c = f * c + i * g
            h = o * np.tanh(c)
            out.append(h.copy())
        return np.stack(out)

    def bilstm(seq, layer):
        hf = run_dir(seq, f"l{layer}_fwd")
        hb = run_dir(seq[::-1], f"l{layer}_bwd")[::-1]
        return np.concatenate([hf, hb], axis=1)

    h2 = bilstm(bilstm(x, 0), 1)
    logits = h2 @ p["proj_W"] + p["proj_b"]
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    expected = e / e.sum(axis=1, keepdims=True)
    got = forward(model, x)
    assert np.abs(got - expected).max() <= 1e-10


def test_no_nan_on_extreme_inputs():
    model = make_model()
    probs = forward(model, np.array([[1e6, -1e6, 0.0], [1e-9, 0.0, 50.0]]))
    assert np.all(np.isfinite(probs))
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_padding_invariance():
    model = make_model(input_dim=3, hidden=2, num_tags=3)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 4, 3))
    y = rng.integers(0, 3, size=(1, 4))
    mask = np.ones((1, 4))
    probs, _ = forward_batch(model.params, x, [4], 2)
    loss, _ = masked_cross_entropy(probs, y, mask)
    # append masked padding timesteps
    xp = np.concatenate([x, np.zeros((1, 3, 3))], axis=1)
    yp = np.concatenate([y, np.zeros((1, 3), dtype=np.int64)], axis=1)
    mp = np.concatenate([mask, np.zeros((1, 3))], axis=1)
    probs_p, _ = forward_batch(model.params, xp, [4], 2)
    loss_p, _ = masked_cross_entropy(probs_p, yp, mp)
    assert abs(loss - loss_p) <= 1e-10


# ---------------------------------------------------------------------------
# gradient check

def test_gradient_check_projection_only():
    assert gradient_check(num_layers=0) <= 1e-8


def test_gradient_check_full_model():
    assert gradient_check(input_dim=3, hidden=2, T=3, num_layers=2) <= 1e-4


def test_gradient_check_detects_planted_fault():
    assert gradient_check(num_layers=2, corrupt="l1_bwd_U") > 1e-2


# ---------------------------------------------------------------------------
# training

def test_train_rule_dataset_accuracy():
    sents, tags = rule_dataset()
    cfg = TaggerConfig(hidden_size=64, epochs=5, lr=0.0005, batch_size=16,
                       seed=1)
    model = train_on_embedded(sents, tags, cfg)
    assert token_accuracy(model, sents, tags) >= 0.95


def test_overfit_single_sentence():
    sents, tags = rule_dataset(n_sentences=1)
    cfg = TaggerConfig(hidden_size=16, epochs=50, lr=0.005, batch_size=1,
                       seed=2)
    model = train_on_embedded(sents, tags, cfg)
    hist = model.history
    assert all(b <= a + 1e-9 for a, b in zip(hist[1:], hist[2:]))
    assert hist[-1] < hist[0]


def test_training_reduces_loss():
    sents, tags = rule_dataset(n_sentences=40)
    cfg = TaggerConfig(hidden_size=16, epochs=1, lr=0.0005, batch_size=16,
                       seed=3)
    untrained = train_on_embedded(sents, tags,
                                  TaggerConfig(hidden_size=16, epochs=1,
                                               lr=1e-12, batch_size=16,
                                               seed=3))
    trained = train_on_embedded(sents, tags, cfg)
    assert batch_loss(trained, sents, tags) < batch_loss(untrained,
                                                         sents, tags)


def test_training_reproducible():
    sents, tags = rule_dataset(n_sentences=30)
    cfg = dict(hidden_size=8, epochs=2, lr=0.001, batch_size=8, seed=9)
    m1 = train_on_embedded(sents, tags, TaggerConfig(**cfg))
    m2 = train_on_embedded(sents, tags, TaggerConfig(**cfg))
    for k in m1.params:
        assert np.array_equal(m1.params[k], m2.params[k])


def test_unseen_tag_in_vocab_never_predicted():
    sents, tags = rule_dataset(n_sentences=20)
    cfg = TaggerConfig(hidden_size=8, epochs=1, lr=0.001, batch_size=8,
                       seed=4)
    model = train_on_embedded(sents, tags, cfg, tag_vocab=["EXTRA"])
    assert "EXTRA" in model.tag_to_id


def test_config_validation():
    with pytest.raises(ConfigError):
        TaggerConfig(num_layers=1)
    with pytest.raises(ConfigError):
        TaggerConfig(lr=0)
    with pytest.raises(ConfigError):
        TaggerConfig(optimizer="sgd")


def test_checkpoint_roundtrip(tmp_path):
    sents, tags = rule_dataset(n_sentences=10)
    cfg = TaggerConfig(hidden_size=8, epochs=1, lr=0.001, batch_size=4,
                       seed=5)
    model = train_on_embedded(sents, tags, cfg)
    path = tmp_path / "tagger.npz"
    model.save(path)
    loaded = TaggerModel.load(path)
    assert loaded.tag_to_id == model.tag_to_id
    assert predict(loaded, sents[0]) == predict(model, sents[0])
