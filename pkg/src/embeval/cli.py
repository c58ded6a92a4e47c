"""Command line surface: corpus preprocessing, tokenizer and embedding
training, the evaluation grid, and report rendering.

Run configs are TOML files; every flag has a config counterpart. Reports
are canonical JSON (sorted keys, no timestamps) so reruns with the same
seed and inputs are byte-identical.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import click

from . import __version__
from .corpus import PreprocessConfig, TokenizedCorpus, construct_bigrams, \
    mask_entities, preprocess
from .datasets import load_conll, load_conll_split_files, load_docclass, \
    load_similarity
from .embeddings import ContextualStore, OovPolicy, TrainConfig, \
    load_contextual, load_vectors, save_vectors, train_fasttext, \
    train_word2vec
from .errors import ConfigError
from .evaluation import ClassificationReport, CorrelationReport, \
    classification_csv, classification_table, correlation_csv, \
    correlation_table, eval_docclass, eval_ner, eval_sentence_similarity, \
    eval_word_similarity
from .neural import TaggerConfig
from .tokenizers import TokenizerModel, encode, train_bpe, train_unigram, \
    train_word, train_wordpiece

TASKS = ("word_sim", "sent_sim", "ner", "docclass")
CORRELATION_TASKS = ("word_sim", "sent_sim")
SUBWORD_TRAINERS = {"bpe": train_bpe, "wordpiece": train_wordpiece,
                    "unigram": train_unigram}


def _log(event: str, **fields):
    doc = {"event": event, **fields}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def _progress(message: str):
    if sys.stdout.isatty():
        print(message)


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_canonical_json(obj), encoding="utf-8")


# ---------------------------------------------------------------------------
# Run configuration


class RunConfig:
    """Validated experiment description loaded from a TOML file."""

    def __init__(self, doc: dict, path: Path):
        self.path = path
        self.doc = doc
        self.seed = int(doc.get("seed", 1))
        self.output_dir = Path(doc.get("output_dir", "runs/default"))
        self.corpus_path = doc.get("corpus", {}).get("path")
        self.corpus_options = doc.get("corpus", {})
        self.embeddings = doc.get("embeddings", [])
        self.datasets = doc.get("datasets", {})
        self.tagger = doc.get("tagger", {})
        self.knn = doc.get("knn", {})
        self.config_hash = _file_hash(path)
        self._validate()

    def _validate(self):
        problems = []
        names = [spec.get("name") for spec in self.embeddings]
        if len(names) != len(set(names)):
            problems.append("embedding names are not unique")
        keys = [(spec.get("kind"), spec.get("algorithm"), spec.get("dim"))
                for spec in self.embeddings if "vectors" not in spec]
        if len(keys) != len(set(keys)):
            problems.append("grid entries (kind, algorithm, dim) repeat")
        needs_corpus = any("vectors" not in spec for spec in self.embeddings)
        if needs_corpus and not self.corpus_path:
            problems.append("corpus.path required to train embeddings")
        for label, p in self._referenced_paths():
            if not Path(p).exists():
                problems.append(f"{label}: missing file {p}")
        for spec in self.embeddings:
            if not spec.get("name"):
                problems.append("every [[embeddings]] entry needs a name")
            kind = spec.get("kind", "word")
            if kind not in ("word", "bpe", "wordpiece", "unigram",
                            "fasttext", "contextual", "external"):
                problems.append(f"{spec.get('name')}: unknown kind {kind!r}")
        if problems:
            raise ConfigError("invalid run config:\n  "
                              + "\n  ".join(problems))

    def _referenced_paths(self):
        if self.corpus_path:
            yield "corpus", self.corpus_path
        for spec in self.embeddings:
            if "vectors" in spec:
                yield spec.get("name", "?"), spec["vectors"]
        ds = self.datasets
        if "word_sim" in ds:
            yield "word_sim", ds["word_sim"]["path"]
        if "sent_sim" in ds:
            yield "sent_sim", ds["sent_sim"]["path"]
        if "ner" in ds:
            yield "ner.train", ds["ner"]["train"]
            yield "ner.test", ds["ner"]["test"]
        if "docclass" in ds:
            yield "docclass", ds["docclass"]["path"]

    def tasks_for(self, spec: dict) -> list[str]:
        wanted = spec.get("tasks", list(TASKS))
        return [t for t in wanted if t in self.datasets]


def load_run_config(path) -> RunConfig:
    path = Path(path)
    with path.open("rb") as f:
        doc = tomllib.load(f)
    return RunConfig(doc, path)


def _cache_dir(cfg: RunConfig) -> Path:
    env = os.environ.get("EMBEVAL_CACHE")
    d = Path(env) if env else cfg.output_dir / "artifacts"
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# Artifact construction


def _preprocess_config(options: dict) -> PreprocessConfig:
    kwargs = {}
    for key in ("lowercase", "strip_punctuation", "bigram_min_count",
                "bigram_score_threshold", "mask_entities"):
        if key in options:
            kwargs[key] = options[key]
    if options.get("keep_stopwords"):
        kwargs["stopword_list"] = frozenset()
    return PreprocessConfig(**kwargs)


def _load_corpus(cfg: RunConfig) -> TokenizedCorpus:
    pcfg = _preprocess_config(cfg.corpus_options)
    corpus = preprocess(Path(cfg.corpus_path), pcfg)
    if cfg.corpus_options.get("mask_entities"):
        corpus = mask_entities(corpus)
    for _ in range(int(cfg.corpus_options.get("bigram_rounds", 0))):
        corpus = construct_bigrams(corpus, pcfg)
    return corpus


def _train_tokenizer(kind: str, corpus: TokenizedCorpus,
                     vocab_size: int) -> TokenizerModel:
    if kind == "word":
        return train_word(corpus)
    return SUBWORD_TRAINERS[kind](corpus, target_vocab_size=vocab_size)


def build_store(cfg: RunConfig, spec: dict, corpus: TokenizedCorpus | None,
                cache_dir: Path):
    """Build (or load from cache) the vector store for one grid entry.
    Returns (store, tokenizer or None, artifact paths)."""
    name = spec["name"]
    kind = spec.get("kind", "word")
    if kind == "contextual":
        return load_contextual(spec["vectors"]), None, [Path(spec["vectors"])]
    if "vectors" in spec:
        return load_vectors(spec["vectors"]), None, [Path(spec["vectors"])]
    key = hashlib.sha256(_canonical_json(
        {"spec": spec, "seed": cfg.seed,
         "corpus": _file_hash(cfg.corpus_path),
         "corpus_options": cfg.corpus_options}).encode()).hexdigest()[:16]
    vec_path = cache_dir / f"{name}-{key}.vec"
    tok_path = cache_dir / f"{name}-{key}.tokenizer.json"
    tcfg = TrainConfig(
        algorithm=spec.get("algorithm", "skipgram"),
        dim=int(spec.get("dim", 100)),
        epochs=int(spec.get("epochs", 5)),
        min_count=int(spec.get("min_count", 5)),
        seed=cfg.seed)
    if kind == "fasttext":
        # the text format has no n-gram table, so fasttext is retrained
        # every run (deterministic for a fixed seed) and cached for export
        store = train_fasttext(corpus, tcfg)
        if not vec_path.exists():
            save_vectors(store, vec_path)
        return store, None, [vec_path]
    tokenizer = _train_tokenizer(kind, corpus,
                                 int(spec.get("vocab_size", 10000)))
    tokenizer.save(tok_path)
    if not vec_path.exists():
        store = train_word2vec(corpus,
                               None if kind == "word" else tokenizer, tcfg)
        save_vectors(store, vec_path)
    # evaluate from the serialized artifact so cached and fresh runs see
    # identical values
    store = load_vectors(vec_path)
    return store, tokenizer, [vec_path, tok_path]


def _policy_for(spec: dict, tokenizer: TokenizerModel | None) -> OovPolicy:
    variant = spec.get("oov_policy", "skip")
    if variant == "subword_mean":
        return OovPolicy(variant, tokenizer=tokenizer)
    return OovPolicy(variant)


# ---------------------------------------------------------------------------
# Grid evaluation


def _tagger_config(cfg: RunConfig, num_tags: int) -> TaggerConfig:
    t = cfg.tagger
    return TaggerConfig(
        num_tags=num_tags,
        hidden_size=int(t.get("hidden_size", 128)),
        epochs=int(t.get("epochs", 5)),
        lr=float(t.get("lr", 0.0005)),
        batch_size=int(t.get("batch_size", 128)),
        seed=cfg.seed,
        clip_norm=t.get("clip_norm"))


def _run_task(cfg: RunConfig, task: str, store, policy):
    ds_cfg = cfg.datasets[task]
    if task == "word_sim":
        ds = load_similarity(ds_cfg["path"],
                             ds_cfg.get("schema", "umnsrs_csv"))
        reports = eval_word_similarity(store, policy, ds)
        return {split: rep.to_dict() for split, rep in reports.items()}
    if task == "sent_sim":
        ds = load_similarity(ds_cfg["path"], ds_cfg.get("schema", "sts_tsv"))
        return {"overall": eval_sentence_similarity(store, policy,
                                                    ds).to_dict()}
    if task == "ner":
        ds = load_conll_split_files(ds_cfg["train"], ds_cfg["test"])
        tcfg = _tagger_config(cfg, len(ds.tag_set))
        return eval_ner(store, policy, ds, tcfg).to_dict()
    if task == "docclass":
        ds = load_docclass(ds_cfg["path"])
        return eval_docclass(store, policy, ds,
                             k=int(cfg.knn.get("k", 3)), seed=cfg.seed,
                             distance=cfg.knn.get("distance",
                                                  "cosine")).to_dict()
    raise ConfigError(f"unknown task {task!r}")


def _run_spec(cfg: RunConfig, spec: dict, tasks: list[str],
              corpus: TokenizedCorpus | None, cache_dir: Path):
    """All cells for one embedding; returns (cell name, report doc or
    error string) pairs."""
    name = spec["name"]
    results = []
    try:
        store, tokenizer, artifacts = build_store(cfg, spec, corpus,
                                                  cache_dir)
        policy = _policy_for(spec, tokenizer)
    except Exception as exc:  # cell isolation: record, keep the run going
        return [(f"{name}/{t}", None, f"{type(exc).__name__}: {exc}")
                for t in tasks]
    provenance = {
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "model_hashes": {p.name: _file_hash(p) for p in artifacts},
        "version": __version__,
    }
    for task in tasks:
        cell = f"{name}/{task}"
        try:
            body = _run_task(cfg, task, store, policy)
            results.append((cell, {"embedding": name, "task": task,
                                   "results": body,
                                   "provenance": provenance}, None))
        except Exception as exc:
            results.append((cell, None, f"{type(exc).__name__}: {exc}"))
    return results


def run_grid(cfg: RunConfig, tasks: list[str], jobs: int = 1):
    """Run every (embedding x task) cell; returns (written paths, failed
    cells)."""
    tasks = [t for t in tasks if t in cfg.datasets]
    corpus = None
    if any("vectors" not in spec for spec in cfg.embeddings):
        corpus = _load_corpus(cfg)
    cache_dir = _cache_dir(cfg)
    report_dir = cfg.output_dir / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)
    written, failed = [], []

    def handle(spec):
        wanted = [t for t in cfg.tasks_for(spec) if t in tasks]
        return _run_spec(cfg, spec, wanted, corpus, cache_dir)

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(handle, cfg.embeddings))
    else:
        batches = [handle(spec) for spec in cfg.embeddings]
    for batch in batches:
        for cell, doc, error in batch:
            if error is not None:
                failed.append((cell, error))
                _log("cell_failed", cell=cell, error=error)
                continue
            path = report_dir / (cell.replace("/", "__") + ".json")
            _write_json(path, doc)
            written.append(path)
            _log("cell_done", cell=cell, path=str(path))
    return written, failed


# ---------------------------------------------------------------------------
# Report rendering


def _report_rows(report_dir: Path):
    by_task: dict[str, list[tuple[str, dict]]] = {}
    for path in sorted(report_dir.glob("*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        by_task.setdefault(doc["task"], []).append((doc["embedding"],
                                                    doc["results"]))
    return by_task


def render_tables(output_dir: Path) -> list[Path]:
    report_dir = output_dir / "reports"
    table_dir = output_dir / "tables"
    table_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for task, rows in _report_rows(report_dir).items():
        if task in CORRELATION_TASKS:
            reps = [(name, CorrelationReport(**body["overall"]))
                    for name, body in rows]
            md, csv_text = correlation_table(reps), correlation_csv(reps)
        else:
            reps = [(name, ClassificationReport(**body))
                    for name, body in rows]
            md, csv_text = classification_table(reps), \
                classification_csv(reps)
        md_path = table_dir / f"{task}.md"
        csv_path = table_dir / f"{task}.csv"
        md_path.write_text(md, encoding="utf-8")
        csv_path.write_text(csv_text, encoding="utf-8")
        written.extend([md_path, csv_path])
    return written


# ---------------------------------------------------------------------------
# Commands


@click.group()
@click.version_option(version=__version__)
def main():
    """Subword tokenizer and word embedding evaluation toolkit."""


@main.command("preprocess")
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--counts", "counts_path", type=click.Path())
@click.option("--no-lowercase", is_flag=True)
@click.option("--keep-stopwords", is_flag=True)
@click.option("--keep-punctuation", is_flag=True)
@click.option("--mask-entities", "mask", is_flag=True)
@click.option("--bigram-rounds", default=0, show_default=True)
@click.option("--bigram-min-count", default=5, show_default=True)
@click.option("--bigram-threshold", default=1e-4, show_default=True)
def cmd_preprocess(corpus_path, out_path, counts_path, no_lowercase,
                   keep_stopwords, keep_punctuation, mask, bigram_rounds,
                   bigram_min_count, bigram_threshold):
    """Normalize a raw line-oriented corpus into token form."""
    pcfg = PreprocessConfig(
        lowercase=not no_lowercase,
        stopword_list=frozenset() if keep_stopwords else
        PreprocessConfig().stopword_list,
        strip_punctuation=not keep_punctuation,
        bigram_min_count=bigram_min_count,
        bigram_score_threshold=bigram_threshold)
    corpus = preprocess(Path(corpus_path), pcfg)
    if mask:
        corpus = mask_entities(corpus)
    for _ in range(bigram_rounds):
        corpus = construct_bigrams(corpus, pcfg)
    corpus.save(out_path, counts_path)
    _log("preprocess_done", sentences=len(corpus.sentences),
         tokens=corpus.total_tokens, out=str(out_path))


@main.group("tok")
def tok_group():
    """Tokenizer training and encoding."""


@tok_group.command("train")
@click.option("--kind", required=True,
              type=click.Choice(["bpe", "wordpiece", "unigram", "word"]))
@click.option("--vocab-size", default=10000, show_default=True)
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_tok_train(kind, vocab_size, corpus_path, out_path):
    """Train a tokenizer on a preprocessed corpus."""
    corpus = TokenizedCorpus.load(corpus_path)
    model = _train_tokenizer(kind, corpus, vocab_size)
    model.save(out_path)
    _log("tok_train_done", kind=kind, vocab=len(model.vocab),
         out=str(out_path))


@tok_group.command("encode")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--stdin", "use_stdin", is_flag=True,
              help="Read sentences from standard input.")
@click.argument("text", required=False)
def cmd_tok_encode(model_path, use_stdin, text):
    """Encode whitespace-tokenized text, one sentence per line."""
    model = TokenizerModel.load(model_path)
    lines = sys.stdin if use_stdin else [text or ""]
    for line in lines:
        enc = encode(model, line.split())
        click.echo(" ".join(enc.pieces))


@main.group("embed")
def embed_group():
    """Embedding training and inspection."""


@embed_group.command("train")
@click.option("--algo", default="skipgram", show_default=True,
              type=click.Choice(["cbow", "skipgram"]))
@click.option("--fasttext", "use_fasttext", is_flag=True)
@click.option("--dim", default=100, show_default=True)
@click.option("--epochs", default=5, show_default=True)
@click.option("--min-count", default=5, show_default=True)
@click.option("--seed", default=1, show_default=True)
@click.option("--tokenizer", "tok_path", type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_embed_train(algo, use_fasttext, dim, epochs, min_count, seed,
                    tok_path, corpus_path, out_path):
    """Train static vectors on a preprocessed corpus."""
    corpus = TokenizedCorpus.load(corpus_path)
    tcfg = TrainConfig(algorithm=algo, dim=dim, epochs=epochs,
                       min_count=min_count, seed=seed)
    if use_fasttext:
        store = train_fasttext(corpus, tcfg)
    else:
        tokenizer = TokenizerModel.load(tok_path) if tok_path else None
        store = train_word2vec(corpus, tokenizer, tcfg)
    save_vectors(store, out_path)
    _log("embed_train_done", vocab=len(store.vocab), dim=store.dim,
         out=str(out_path))


@embed_group.command("inspect")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--top", default=10, show_default=True)
def cmd_embed_inspect(model_path, top):
    """Print vocabulary size, dimension, and the first entries."""
    store = load_vectors(model_path)
    click.echo(f"entries: {len(store.vocab)}")
    click.echo(f"dim: {store.dim}")
    for tok, _ in sorted(store.vocab.items(), key=lambda kv: kv[1])[:top]:
        click.echo(tok)


def _eval_command(task_names):
    @click.option("--config", "config_path", required=True,
                  type=click.Path(exists=True))
    @click.option("--jobs", default=1, show_default=True,
                  help="Worker pool size for independent grid cells.")
    def command(config_path, jobs):
        cfg = load_run_config(config_path)
        written, failed = run_grid(cfg, list(task_names), jobs=jobs)
        render_tables(cfg.output_dir)
        _progress(f"{len(written)} report(s) written to "
                  f"{cfg.output_dir / 'reports'}")
        if failed:
            lines = [f"{cell}: {err}" for cell, err in failed]
            raise click.ClickException("failed cells:\n  "
                                       + "\n  ".join(lines))
    return command


@main.group("eval")
def eval_group():
    """Run evaluation cells over the configured embedding grid."""


eval_group.command("word-sim")(_eval_command(["word_sim"]))
eval_group.command("sent-sim")(_eval_command(["sent_sim"]))
eval_group.command("ner")(_eval_command(["ner"]))
eval_group.command("docclass")(_eval_command(["docclass"]))
eval_group.command("all")(_eval_command(list(TASKS)))


@main.command("report")
@click.option("--run-dir", "run_dir", required=True,
              type=click.Path(exists=True))
def cmd_report(run_dir):
    """Render Markdown and CSV tables from the JSON reports in a run
    directory; the best value per column is bolded."""
    written = render_tables(Path(run_dir))
    if not written:
        raise click.ClickException(f"no reports found under {run_dir}")
    for path in written:
        click.echo(str(path))


if __name__ == "__main__":
    main()
