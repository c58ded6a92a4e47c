"""Token-aligned contextual vector export.

Input: JSON Lines, one sentence per record: {"id": str, "tokens": [str]}.
The tokens are whitespace-level words; the transformer's own subpieces are
aligned back to them by character offsets over the space-joined sentence.
Output: the contextual vector format, {"id", "tokens", "vectors", "dim"},
with one vector per source token (mean of its subpieces' last hidden
states). Special begin/end markers belong to no token and are excluded.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch


@dataclass
class ProviderConfig:
    model: str
    pooling: str = "mean_of_pieces"
    layer: str = "last_hidden"
    max_sequence_length: int = 512
    batch_size: int = 8

    def __post_init__(self):
        if self.pooling != "mean_of_pieces":
            raise ValueError(f"unsupported pooling {self.pooling!r}")
        if self.layer != "last_hidden":
            raise ValueError(f"unsupported layer {self.layer!r}")
        if self.max_sequence_length < 3:
            raise ValueError("max_sequence_length must allow at least one "
                             "piece between the special markers")


def _token_spans(tokens: list[str]) -> list[tuple[int, int]]:
    """Character spans of each token in ' '.join(tokens)."""
    spans = []
    pos = 0
    for tok in tokens:
        spans.append((pos, pos + len(tok)))
        pos += len(tok) + 1
    return spans


def _read_sentences(path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            doc = json.loads(line)
            if "id" not in doc or "tokens" not in doc:
                raise ValueError(f"line {lineno}: record needs 'id' and "
                                 "'tokens'")
            records.append({"id": str(doc["id"]),
                            "tokens": list(doc["tokens"])})
    return records


def _align(offsets, special_mask, spans):
    """Map each non-special subpiece index to a source token index.

    Returns (piece_to_token, error) where error describes the first
    unmappable piece, if any."""
    mapping = []
    for i, ((start, end), special) in enumerate(zip(offsets, special_mask)):
        if special:
            mapping.append(None)
            continue
        owner = None
        for t, (ts, te) in enumerate(spans):
            if ts <= start and end <= te:
                owner = t
                break
        if owner is None:
            return None, (f"subpiece {i} at offsets [{start}, {end}) "
                          "crosses a token boundary")
        mapping.append(owner)
    return mapping, None


def _pool_sentence(hidden, mapping, n_tokens):
    """Per-token mean of the subpiece rows assigned to it. A token left
    without any piece (all its pieces truncated away or dropped) is an
    alignment failure reported by the caller."""
    rows = [[] for _ in range(n_tokens)]
    for i, owner in enumerate(mapping):
        if owner is not None:
            rows[owner].append(hidden[i])
    missing = [t for t, r in enumerate(rows) if not r]
    if missing:
        return None, missing
    return np.stack([np.mean(r, axis=0) for r in rows]), None


def export(config: ProviderConfig, in_path, out_path,
           tokenizer=None, model=None) -> dict:
    """Run the model over every sentence record and write the contextual
    vector file atomically (temp file + rename). Sentences that cannot be
    aligned are skipped and listed in the returned summary and in a
    sidecar '<out>.errors.jsonl' file."""
    if tokenizer is None or model is None:
        from transformers import AutoModel, AutoTokenizer
        tokenizer = tokenizer or AutoTokenizer.from_pretrained(config.model)
        model = model or AutoModel.from_pretrained(config.model)
    model.eval()
    records = _read_sentences(in_path)
    out_path = Path(out_path)
    errors = []
    written = 0
    tmp_fd, tmp_name = tempfile.mkstemp(dir=out_path.parent,
                                        prefix=out_path.name + ".")
    try:
        with os.fdopen(tmp_fd, "w", encoding="utf-8") as out:
            for start in range(0, len(records), config.batch_size):
                batch = records[start:start + config.batch_size]
                rows = _export_batch(config, tokenizer, model, batch)
                for rec, result in zip(batch, rows):
                    if "error" in result:
                        errors.append({"id": rec["id"],
                                       "error": result["error"]})
                        continue
                    out.write(json.dumps(result) + "\n")
                    written += 1
        os.replace(tmp_name, out_path)
    except BaseException:
        os.unlink(tmp_name)
        raise
    if errors:
        sidecar = out_path.with_name(out_path.name + ".errors.jsonl")
        with sidecar.open("w", encoding="utf-8") as f:
            for entry in errors:
                f.write(json.dumps(entry) + "\n")
    return {"written": written, "skipped": errors}


def _export_batch(config, tokenizer, model, batch):
    texts = []
    usable = []
    results = [None] * len(batch)
    for i, rec in enumerate(batch):
        if not rec["tokens"]:
            results[i] = {"error": "empty token list"}
            continue
        texts.append(" ".join(rec["tokens"]))
        usable.append(i)
    if not usable:
        return results
    enc = tokenizer(texts, return_tensors="pt", padding=True,
                    truncation=True, max_length=config.max_sequence_length,
                    return_offsets_mapping=True,
                    return_special_tokens_mask=True)
    offsets = enc.pop("offset_mapping")
    special = enc.pop("special_tokens_mask")
    with torch.no_grad():
        hidden = model(**enc).last_hidden_state
    attn = enc["attention_mask"]
    for row, i in enumerate(usable):
        rec = batch[i]
        length = int(attn[row].sum())
        row_offsets = offsets[row][:length].tolist()
        row_special = special[row][:length].tolist()
        spans = _token_spans(rec["tokens"])
        mapping, err = _align(row_offsets, row_special, spans)
        if err is not None:
            results[i] = {"error": err}
            continue
        reached = {m for m in mapping if m is not None}
        n_tokens = len(rec["tokens"])
        warning = None
        if len(reached) < n_tokens:
            # truncation dropped trailing tokens: emit the covered prefix
            covered = max(reached) + 1 if reached else 0
            if set(range(covered)) != reached:
                results[i] = {"error": "tokens without any subpiece inside "
                              "the model window"}
                continue
            n_tokens = covered
            warning = (f"truncated to {covered} of {len(rec['tokens'])} "
                       "tokens (max_sequence_length="
                       f"{config.max_sequence_length})")
        vecs, missing = _pool_sentence(
            hidden[row][:length].numpy().astype(np.float64),
            mapping, n_tokens)
        if vecs is None:
            results[i] = {"error": f"no subpieces for tokens {missing}"}
            continue
        doc = {"id": rec["id"], "tokens": rec["tokens"][:n_tokens],
               "vectors": [[float(x) for x in v] for v in vecs],
               "dim": int(vecs.shape[1])}
        if warning:
            doc["warning"] = warning
        results[i] = doc
    return results
