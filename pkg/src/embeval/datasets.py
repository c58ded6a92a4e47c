"""Loaders for the three evaluation dataset shapes: word/sentence similarity
pairs, tagged (NER) sentences, and labeled documents.

Loaders are total over their declared formats: any input yields a dataset or
a positioned error; rejected rows are counted, never silently dropped.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError

STS_SCALE = (0.0, 5.0)


@dataclass
class SimilarityDataset:
    items: list[tuple[str, str, str, float]]  # (id, left, right, score)
    score_scale: tuple[float, float]
    granularity: str  # word | sentence
    rejected: int = 0


@dataclass
class TaggedDataset:
    sentences: list[tuple[str, list[str], list[str]]]  # (id, tokens, tags)
    tag_set: set[str]
    splits: dict[str, list[int]] = field(default_factory=dict)

    def entity_counts(self) -> Counter:
        counts = Counter()
        for _, _, tags in self.sentences:
            counts.update(t for t in tags if t != "O")
        return counts


@dataclass
class DocDataset:
    docs: list[tuple[str, int, int, str]]  # (id, char_start, char_end, label)
    backing_text: str
    label_set: set[str]

    def text(self, index: int) -> str:
        _, start, end, _ = self.docs[index]
        return self.backing_text[start:end]

    def supports(self) -> Counter:
        return Counter(label for _, _, _, label in self.docs)


def load_conll(path, split: str | None = None) -> TaggedDataset:
    """Whitespace-column file: token in column 0, tag in the last column,
    blank line separates sentences, -DOCSTART- lines are skipped. Tags are
    kept verbatim (I-/B-/O). Sibling files named like train/testa/testb are
    picked up as splits when `split` is None."""
    path = Path(path)
    sentences = []
    tag_set = set()
    tokens: list[str] = []
    tags: list[str] = []

    def flush():
        if tokens:
            sid = f"{path.stem}-{len(sentences)}"
            sentences.append((sid, tokens.copy(), tags.copy()))
            tokens.clear()
            tags.clear()

    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                flush()
                continue
            if stripped.startswith("-DOCSTART-"):
                flush()
                continue
            cols = stripped.split()
            if len(cols) < 2:
                raise FormatError(
                    f"expected at least 2 columns, got {len(cols)}",
                    line=lineno, path=path)
            tokens.append(cols[0])
            tags.append(cols[-1])
            tag_set.add(cols[-1])
    flush()
    splits = {}
    if split is not None:
        splits[split] = list(range(len(sentences)))
    return TaggedDataset(sentences=sentences, tag_set=tag_set, splits=splits)


def load_conll_split_files(train_path, test_path) -> TaggedDataset:
    """Merge sibling train/test files into one dataset with split markers."""
    train = load_conll(train_path)
    test = load_conll(test_path)
    sentences = train.sentences + [
        (f"test-{sid}", toks, tags) for sid, toks, tags in test.sentences]
    return TaggedDataset(
        sentences=sentences,
        tag_set=train.tag_set | test.tag_set,
        splits={"train": list(range(len(train.sentences))),
                "test": list(range(len(train.sentences), len(sentences)))})


def _parse_score(raw, scale, lineno, path):
    try:
        score = float(raw)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"unparseable score {raw!r}",
                          line=lineno, path=path) from exc
    lo, hi = scale
    if not lo <= score <= hi:
        raise FormatError(
            f"score {score} outside scale [{lo}, {hi}]",
            line=lineno, path=path)
    return score


def load_similarity(path, schema: str) -> SimilarityDataset:
    """schema 'umnsrs_csv': CSV with header; score/term columns found by
    name. schema 'sts_tsv': score<TAB>sentence1<TAB>sentence2."""
    path = Path(path)
    items = []
    rejected = 0
    if schema == "umnsrs_csv":
        with path.open("r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None:
                raise FormatError("missing header", path=path)
            lower = {name.lower(): name for name in reader.fieldnames}
            score_col = next((lower[c] for c in ("mean", "score", "similarity")
                              if c in lower), None)
            if score_col is None or "term1" not in lower or "term2" not in lower:
                raise FormatError(
                    "required columns (score/Mean, Term1, Term2) not found; "
                    f"header is {reader.fieldnames}", path=path)
            scores = []
            for lineno, row in enumerate(reader, start=2):
                try:
                    score = float(row[score_col])
                except (TypeError, ValueError):
                    rejected += 1
                    continue
                left = (row[lower["term1"]] or "").strip()
                right = (row[lower["term2"]] or "").strip()
                if not left or not right:
                    rejected += 1
                    continue
                items.append((f"pair-{len(items)}", left, right, score))
                scores.append(score)
            if not items:
                raise FormatError("no usable rows", path=path)
            scale = (min(scores), max(scores))
        return SimilarityDataset(items=items, score_scale=scale,
                                 granularity="word", rejected=rejected)
    if schema == "sts_tsv":
        with path.open("r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                cols = line.rstrip("\n").split("\t")
                if len(cols) < 3:
                    raise FormatError(
                        f"expected 3 tab-separated columns, got {len(cols)}",
                        line=lineno, path=path)
                score = _parse_score(cols[0], STS_SCALE, lineno, path)
                items.append((f"pair-{len(items)}", cols[1], cols[2], score))
        if not items:
            raise FormatError("no usable rows", path=path)
        return SimilarityDataset(items=items, score_scale=STS_SCALE,
                                 granularity="sentence", rejected=rejected)
    raise ValueError(f"unknown similarity schema {schema!r}")


def load_docclass(path) -> DocDataset:
    """JSON Lines {"id", "text", "label"}; texts are concatenated into one
    backing store addressed by (char_start, char_end)."""
    path = Path(path)
    docs = []
    chunks = []
    offset = 0
    labels = set()
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc}",
                                  line=lineno, path=path) from exc
            missing = [k for k in ("id", "text", "label") if k not in doc]
            if missing:
                raise FormatError(f"missing fields {missing}",
                                  line=lineno, path=path)
            text = doc["text"]
            if not text:
                raise FormatError(f"empty text for doc {doc['id']!r}",
                                  line=lineno, path=path)
            docs.append((str(doc["id"]), offset, offset + len(text),
                         str(doc["label"])))
            chunks.append(text)
            offset += len(text)
            labels.add(str(doc["label"]))
    if not docs:
        raise FormatError("no documents found", path=path)
    return DocDataset(docs=docs, backing_text="".join(chunks),
                      label_set=labels)


# ---------------------------------------------------------------------------
# Canonical internal serialization (JSON Lines per shape)


def save_tagged(dataset: TaggedDataset, path):
    with Path(path).open("w", encoding="utf-8") as f:
        f.write(json.dumps({"splits": dataset.splits}) + "\n")
        for sid, tokens, tags in dataset.sentences:
            f.write(json.dumps({"id": sid, "tokens": tokens,
                                "tags": tags}) + "\n")


def load_tagged(path) -> TaggedDataset:
    sentences = []
    tag_set = set()
    splits = {}
    with Path(path).open("r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        splits = header.get("splits", {})
        for line in f:
            if line.strip():
                doc = json.loads(line)
                sentences.append((doc["id"], doc["tokens"], doc["tags"]))
                tag_set.update(doc["tags"])
    return TaggedDataset(sentences=sentences, tag_set=tag_set, splits=splits)


def save_similarity(dataset: SimilarityDataset, path):
    with Path(path).open("w", encoding="utf-8") as f:
        f.write(json.dumps({"score_scale": list(dataset.score_scale),
                            "granularity": dataset.granularity,
                            "rejected": dataset.rejected}) + "\n")
        for sid, left, right, score in dataset.items:
            f.write(json.dumps({"id": sid, "left": left, "right": right,
                                "score": score}) + "\n")


def load_similarity_canonical(path) -> SimilarityDataset:
    items = []
    with Path(path).open("r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        for line in f:
            if line.strip():
                doc = json.loads(line)
                items.append((doc["id"], doc["left"], doc["right"],
                              doc["score"]))
    return SimilarityDataset(items=items,
                             score_scale=tuple(header["score_scale"]),
                             granularity=header["granularity"],
                             rejected=header.get("rejected", 0))


def convert_standoff_to_conll(tokens_path, annotations_path, out_path):
    """Converter stub for stand-off NER releases (CHEMDNER, SciERC).

    Native stand-off formats vary by release, so conversion to the CoNLL
    column layout (token, tag, blank-line sentence breaks) is left to
    release-specific scripts; this entry point documents the expected
    target format and fails loudly rather than guessing.
    """
    raise NotImplementedError(
        "convert your release to CoNLL columns (token ... tag) with blank "
        "lines between sentences, then use load_conll")
