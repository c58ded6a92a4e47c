"""Minimal differentiable kernel for the NER probe: frozen embedding input,
two-layer bidirectional LSTM, linear projection, softmax cross-entropy, Adam.

Everything is plain numpy with hand-written backprop; gradient_check verifies
the analytic gradients against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

CHECKPOINT_VERSION = 1


@dataclass
class TaggerConfig:
    num_tags: int = 0  # filled from the dataset when 0
    hidden_size: int = 128
    num_layers: int = 2
    epochs: int = 5
    lr: float = 0.0005
    batch_size: int = 128
    seed: int = 1
    optimizer: str = "adam"
    clip_norm: float | None = None  # optional, threshold 5.0 when enabled

    def __post_init__(self):
        if self.num_layers != 2:
            raise ConfigError("the probe is fixed at two BiLSTM layers")
        if self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("lr must be > 0 and batch_size >= 1")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60, 60)))


def softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_params(input_dim: int, hidden: int, num_tags: int, num_layers: int,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform Glorot-style init; float64 throughout for exact grad checks."""
    params = {}
    for layer in range(num_layers):
        d = input_dim if layer == 0 else 2 * hidden
        for direction in ("fwd", "bwd"):
            k = f"l{layer}_{direction}"
            s = 1.0 / np.sqrt(hidden)
            params[f"{k}_W"] = rng.uniform(-s, s, (d, 4 * hidden))
            params[f"{k}_U"] = rng.uniform(-s, s, (hidden, 4 * hidden))
            params[f"{k}_b"] = np.zeros(4 * hidden)
    proj_in = 2 * hidden if num_layers > 0 else input_dim
    s = 1.0 / np.sqrt(proj_in)
    params["proj_W"] = rng.uniform(-s, s, (proj_in, num_tags))
    params["proj_b"] = np.zeros(num_tags)
    return params


@dataclass
class TaggerModel:
    params: dict[str, np.ndarray]
    tag_to_id: dict[str, int]
    input_dim: int
    hidden_size: int
    num_layers: int = 2
    history: list[float] = field(default_factory=list)

    @property
    def num_tags(self) -> int:
        return len(self.tag_to_id)

    @property
    def id_to_tag(self) -> list[str]:
        out = [None] * len(self.tag_to_id)
        for tag, i in self.tag_to_id.items():
            out[i] = tag
        return out

    def save(self, path):
        meta = {
            "version": CHECKPOINT_VERSION,
            "tag_to_id": self.tag_to_id,
            "input_dim": self.input_dim,
            "hidden_size": self.hidden_size,
            "num_layers": self.num_layers,
        }
        np.savez(Path(path), __meta__=np.array(json.dumps(meta)),
                 **self.params)

    @classmethod
    def load(cls, path) -> "TaggerModel":
        data = np.load(Path(path), allow_pickle=False)
        meta = json.loads(str(data["__meta__"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint version {meta['version']}")
        params = {k: data[k] for k in data.files if k != "__meta__"}
        return cls(params=params, tag_to_id=meta["tag_to_id"],
                   input_dim=meta["input_dim"],
                   hidden_size=meta["hidden_size"],
                   num_layers=meta["num_layers"])


# ---------------------------------------------------------------------------
# LSTM primitives (batched, gate order i, f, g, o)


def _lstm_forward(x, W, U, b):
    B, T, _ = x.shape
    H = U.shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.zeros((B, T, H))
    caches = []
    for t in range(T):
        z = x[:, t] @ W + h @ U + b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        caches.append((x[:, t], h, c, i, f, g, o, c_new))
        h, c = h_new, c_new
        hs[:, t] = h
    return hs, caches


def _lstm_backward(dhs, caches, W, U):
    B, T, H = dhs.shape
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(4 * H)
    dx = np.zeros((B, T, W.shape[0]))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(T)):
        x_t, h_prev, c_prev, i, f, g, o, c = caches[t]
        dh = dhs[:, t] + dh_next
        tanh_c = np.tanh(c)
        do = dh * tanh_c
        dc = dh * o * (1 - tanh_c ** 2) + dc_next
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f),
             dg * (1 - g ** 2), do * o * (1 - o)], axis=1)
        dW += x_t.T @ dz
        dU += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ W.T
        dh_next = dz @ U.T
        dc_next = dc * f
    return dx, dW, dU, db


def _reverse_padded(x, lengths):
    """Flip each sequence within its true length; padding stays zero."""
    out = np.zeros_like(x)
    for b, L in enumerate(lengths):
        out[b, :L] = x[b, L - 1::-1] if L > 0 else 0
    return out


def forward_batch(params, x, lengths, num_layers):
    """Per-token tag probabilities for a padded batch. Returns
    (probs, caches) where caches supports backward_batch."""
    cur = x
    layer_caches = []
    for layer in range(num_layers):
        Wf, Uf, bf = (params[f"l{layer}_fwd_{k}"] for k in "WUb")
        Wb, Ub, bb = (params[f"l{layer}_bwd_{k}"] for k in "WUb")
        hf, cache_f = _lstm_forward(cur, Wf, Uf, bf)
        x_rev = _reverse_padded(cur, lengths)
        hb_rev, cache_b = _lstm_forward(x_rev, Wb, Ub, bb)
        hb = _reverse_padded(hb_rev, lengths)
        layer_caches.append((cache_f, cache_b))
        cur = np.concatenate([hf, hb], axis=2)
    logits = cur @ params["proj_W"] + params["proj_b"]
    probs = softmax(logits)
    return probs, (layer_caches, cur, probs)


def backward_batch(params, caches, dlogits, lengths, num_layers):
    layer_caches, proj_in, _ = caches
    grads = {}
    grads["proj_W"] = np.einsum("btd,btk->dk", proj_in, dlogits)
    grads["proj_b"] = dlogits.sum(axis=(0, 1))
    dcur = dlogits @ params["proj_W"].T
    for layer in reversed(range(num_layers)):
        cache_f, cache_b = layer_caches[layer]
        if layer == num_layers - 1:
            hidden = params["proj_W"].shape[0] // 2
        else:
            hidden = params[f"l{layer + 1}_fwd_W"].shape[0] // 2
        dhf = dcur[:, :, :hidden]
        dhb = dcur[:, :, hidden:]
        Wf, Uf = params[f"l{layer}_fwd_W"], params[f"l{layer}_fwd_U"]
        Wb, Ub = params[f"l{layer}_bwd_W"], params[f"l{layer}_bwd_U"]
        dx_f, dWf, dUf, dbf = _lstm_backward(dhf, cache_f, Wf, Uf)
        dhb_rev = _reverse_padded(dhb, lengths)
        dx_b_rev, dWb, dUb, dbb = _lstm_backward(dhb_rev, cache_b, Wb, Ub)
        dx_b = _reverse_padded(dx_b_rev, lengths)
        grads[f"l{layer}_fwd_W"] = dWf
        grads[f"l{layer}_fwd_U"] = dUf
        grads[f"l{layer}_fwd_b"] = dbf
        grads[f"l{layer}_bwd_W"] = dWb
        grads[f"l{layer}_bwd_U"] = dUb
        grads[f"l{layer}_bwd_b"] = dbb
        dcur = dx_f + dx_b
    return grads


def masked_cross_entropy(probs, targets, mask):
    """Mean token-level CE over unmasked positions; returns (loss, dlogits).

    `targets` holds tag ids; masked positions contribute nothing.
    """
    n = mask.sum()
    if n == 0:
        raise ValueError("batch contains no unmasked tokens")
    B, T, K = probs.shape
    picked = probs[np.arange(B)[:, None], np.arange(T)[None, :], targets]
    loss = -(np.log(np.maximum(picked, 1e-300)) * mask).sum() / n
    onehot = np.zeros_like(probs)
    onehot[np.arange(B)[:, None], np.arange(T)[None, :], targets] = 1.0
    dlogits = (probs - onehot) * mask[:, :, None] / n
    return loss, dlogits


def forward(model: TaggerModel, embedded_sentence: np.ndarray) -> np.ndarray:
    """T x num_tags probabilities for one embedded sentence."""
    x = np.asarray(embedded_sentence, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(
            f"expected shape (T, {model.input_dim}), got {x.shape}")
    probs, _ = forward_batch(model.params, x[None], [x.shape[0]],
                             model.num_layers)
    return probs[0]


# ---------------------------------------------------------------------------
# Adam


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.b1, self.b2
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1 ** self.t)
            v_hat = self.v[k] / (1 - b2 ** self.t)
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _clip_grads(grads, threshold):
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > threshold:
        scale = threshold / total
        for k in grads:
            grads[k] = grads[k] * scale


# ---------------------------------------------------------------------------
# Training


def _make_batches(indices, lengths, batch_size, rng):
    order = sorted(indices, key=lambda i: lengths[i])
    batches = [order[i:i + batch_size]
               for i in range(0, len(order), batch_size)]
    rng.shuffle(batches)
    return batches


def _pad_batch(embedded, tag_ids, batch):
    lengths = [embedded[i].shape[0] for i in batch]
    T = max(lengths)
    dim = embedded[batch[0]].shape[1]
    x = np.zeros((len(batch), T, dim))
    y = np.zeros((len(batch), T), dtype=np.int64)
    mask = np.zeros((len(batch), T))
    for row, i in enumerate(batch):
        L = lengths[row]
        x[row, :L] = embedded[i]
        y[row, :L] = tag_ids[i]
        mask[row, :L] = 1.0
    return x, y, mask, lengths


def train_on_embedded(embedded: list[np.ndarray], tags: list[list[str]],
                      cfg: TaggerConfig,
                      tag_vocab: list[str] | None = None) -> TaggerModel:
    """Train the probe on pre-embedded sentences (embeddings stay frozen).

    Tags absent from the training data but present in `tag_vocab` become
    never-predicted classes rather than errors.
    """
    if not embedded:
        raise ValueError("empty training set")
    seen = sorted({t for ts in tags for t in ts})
    all_tags = sorted(set(seen) | set(tag_vocab or []))
    tag_to_id = {t: i for i, t in enumerate(all_tags)}
    input_dim = embedded[0].shape[1]
    rng = np.random.default_rng(cfg.seed)
    params = init_params(input_dim, cfg.hidden_size, len(all_tags),
                         cfg.num_layers, rng)
    model = TaggerModel(params=params, tag_to_id=tag_to_id,
                        input_dim=input_dim, hidden_size=cfg.hidden_size,
                        num_layers=cfg.num_layers)
    tag_ids = [np.array([tag_to_id[t] for t in ts], dtype=np.int64)
               for ts in tags]
    lengths = [e.shape[0] for e in embedded]
    opt = Adam(params, cfg.lr)
    for _ in range(cfg.epochs):
        batches = _make_batches(range(len(embedded)), lengths,
                                cfg.batch_size, rng)
        epoch_loss, n_tokens = 0.0, 0
        for batch in batches:
            x, y, mask, lens = _pad_batch(embedded, tag_ids, batch)
            probs, caches = forward_batch(params, x, lens, cfg.num_layers)
            loss, dlogits = masked_cross_entropy(probs, y, mask)
            grads = backward_batch(params, caches, dlogits, lens,
                                   cfg.num_layers)
            if cfg.clip_norm is not None:
                _clip_grads(grads, cfg.clip_norm)
            opt.step(params, grads)
            n = int(mask.sum())
            epoch_loss += loss * n
            n_tokens += n
        model.history.append(epoch_loss / n_tokens)
    return model


def predict(model: TaggerModel, embedded_sentence: np.ndarray) -> list[str]:
    probs = forward(model, embedded_sentence)
    id_to_tag = model.id_to_tag
    return [id_to_tag[i] for i in probs.argmax(axis=1)]


def batch_loss(model: TaggerModel, embedded, tags) -> float:
    tag_ids = [np.array([model.tag_to_id[t] for t in ts]) for ts in tags]
    x, y, mask, lens = _pad_batch(embedded, tag_ids, list(range(len(embedded))))
    probs, _ = forward_batch(model.params, x, lens, model.num_layers)
    loss, _ = masked_cross_entropy(probs, y, mask)
    return float(loss)


# ---------------------------------------------------------------------------
# Gradient verification


def gradient_check(input_dim=3, hidden=2, num_tags=3, T=2, num_layers=2,
                   seed=0, h=1e-5, corrupt: str | None = None) -> float:
    """Max relative error between analytic and central-difference gradients
    of the cross-entropy loss on one random sample.

    `corrupt` names a parameter whose analytic gradient is doubled, to prove
    the check detects planted faults. num_layers=0 checks the projection
    alone.
    """
    rng = np.random.default_rng(seed)
    params = init_params(input_dim, hidden, num_tags, num_layers, rng)
    # bias terms start at zero; jitter them so the check explores them too
    for k in params:
        if k.endswith("_b") or k == "proj_b":
            params[k] = rng.normal(scale=0.1, size=params[k].shape)
    x = rng.normal(size=(1, T, input_dim))
    y = rng.integers(0, num_tags, size=(1, T))
    mask = np.ones((1, T))
    lengths = [T]

    def loss_fn():
        probs, _ = forward_batch(params, x, lengths, num_layers)
        loss, _ = masked_cross_entropy(probs, y, mask)
        return loss

    probs, caches = forward_batch(params, x, lengths, num_layers)
    _, dlogits = masked_cross_entropy(probs, y, mask)
    grads = backward_batch(params, caches, dlogits, lengths, num_layers)
    if corrupt is not None:
        grads[corrupt] = grads[corrupt] * 2.0

    max_rel = 0.0
    for k, p in params.items():
        flat = p.reshape(-1)
        gflat = grads[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            numeric = (lp - lm) / (2 * h)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            max_rel = max(max_rel, abs(gflat[i] - numeric) / denom)
    return max_rel
