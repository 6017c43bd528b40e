"""Pipeline CLI: synth, sample, train, embed, index, recommend, evaluate.

Each subcommand reads its inputs from the workspace, validates their
fingerprints against the manifest, writes its artifact, and prints a
one-line summary. Exit codes: 0 success, 2 usage, 3 data problems,
4 numerical failures.

Configuration precedence: built-in defaults < config file < flags. The
config file is flat ``key = value`` text with kebab-case keys matching
the flag names (for example ``embed-dim = 32``).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__, ann, baselines, evalkit, synth
from .catalog import (
    build_vocabulary,
    encode_catalog,
    load_catalog,
    load_vocabulary,
    save_vocabulary,
    vocabulary_fingerprint,
)
from .compare_graph import (
    connected_components,
    load_pairs,
    load_triples,
    sample_triples,
    save_triples,
    split_train_validation,
)
from .embedding_store import (
    export_encoder,
    export_text,
    generate_embeddings,
    load_store,
    save_store,
)
from .errors import AltrecError, DataError, NumericalError, StaleArtifactError
from .neural import (
    RmsPropState,
    TrainConfig,
    init_model,
    load_checkpoint,
    model_fingerprint,
    save_checkpoint,
    train,
)
from .workspace import Manifest, file_sha256

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

ALGORITHM_NAMES = ("attribute_based", "frequently_compared", "deep_learning")
DISPLAY_NAMES = {
    "attribute_based": "Attribute Based",
    "frequently_compared": "Frequently Compared",
    "deep_learning": "Deep Learning Based",
}


@dataclass
class PipelineConfig:
    workspace: Path = Path("workspace")
    catalog: Path | None = None
    pairs: Path | None = None
    sessions: Path | None = None
    attributes: Path | None = None
    schema: Path | None = None
    l_title: int = 16
    l_desc: int = 96
    min_count: int = 2
    neg_ratio: int = 3
    positives_per_anchor: int = 1
    val_fraction: float = 0.1
    embed_dim: int = 32
    hidden_dim: int = 32
    batch_size: int = 64
    learning_rate: float = 1e-3
    decay_rho: float = 0.9
    rms_epsilon: float = 1e-8
    max_epochs: int = 50
    patience: int = 3
    loss_kind: str = "contrastive"
    m: int = 16
    ef_construction: int = 200
    ef_search: int = 100
    search_epsilon: float = 0.1
    threshold: float = 0.8
    n: int = 10
    seed: int = 7
    threads: int = 1
    families: int = 4
    products_per_family: int = 250
    missing_attr_fraction: float = 0.4
    uncompared_fraction: float = 0.3
    sessions_count: int = 500
    family_purchase_prob: float = 0.9

    def input_path(self, name: str) -> Path:
        override = getattr(self, name)
        if override is not None:
            return Path(override)
        filename = {
            "catalog": "catalog.jsonl",
            "pairs": "pairs.csv",
            "sessions": "sessions.csv",
            "attributes": "attributes.csv",
            "schema": "schema.csv",
        }[name]
        return self.workspace / filename

    def artifact(self, filename: str) -> Path:
        return self.workspace / filename


_INPUT_FIELDS = ("catalog", "pairs", "sessions", "attributes", "schema")


def _field_kind(field) -> type:
    if field.name == "workspace" or field.name in _INPUT_FIELDS:
        return Path
    return type(field.default)


def load_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        handle = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open config file {path}: {exc}") from exc
    with handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"config line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def build_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig()
    by_key = {field.name.replace("_", "-"): field for field in fields(PipelineConfig)}
    if getattr(args, "config", None):
        for key, raw in load_config_file(args.config).items():
            field = by_key.get(key)
            if field is None:
                raise DataError(f"unknown config key {key!r}")
            kind = _field_kind(field)
            try:
                setattr(config, field.name, kind(raw))
            except ValueError as exc:
                raise DataError(f"config key {key!r}: {exc}") from exc
    for field in fields(PipelineConfig):
        value = getattr(args, field.name, None)
        if value is not None:
            setattr(config, field.name, value)
    return config


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, metavar="FILE",
                        help="flat key = value config file")
    for field in fields(PipelineConfig):
        flag = "--" + field.name.replace("_", "-")
        kind = _field_kind(field)
        parser.add_argument(flag, type=kind, default=None, metavar=field.name.upper(),
                            help=f"default: {field.default}")


def _summary_line(stage: str, text: str) -> None:
    print(f"{stage}: {text}")


def cmd_synth(config: PipelineConfig, args) -> None:
    summary = synth.generate_corpus(
        config.workspace,
        families=config.families,
        products_per_family=config.products_per_family,
        seed=config.seed,
        missing_attr_fraction=config.missing_attr_fraction,
        uncompared_fraction=config.uncompared_fraction,
        sessions=config.sessions_count,
        family_purchase_prob=config.family_purchase_prob,
    )
    manifest = Manifest.load(config.workspace)
    for name, path in (
        ("catalog.jsonl", summary.catalog_path),
        ("pairs.csv", summary.pairs_path),
        ("sessions.csv", summary.sessions_path),
        ("attributes.csv", summary.attributes_path),
        ("schema.csv", summary.schema_path),
    ):
        manifest.record(name, path)
    manifest.save()
    _summary_line(
        "synth",
        f"{summary.n_products} products in {summary.families} families, "
        f"{summary.n_pair_lines} pair lines, {summary.n_sessions} sessions, "
        f"{summary.n_attributed} attributed, {summary.n_compared} compared "
        f"-> {config.workspace}",
    )


def cmd_sample(config: PipelineConfig, args) -> None:
    pairs_path = config.input_path("pairs")
    manifest = Manifest.load(config.workspace)
    manifest.require("pairs.csv", pairs_path, "synth")
    pairs = load_pairs(pairs_path)
    components = connected_components(pairs)
    triples = sample_triples(
        components,
        neg_ratio=config.neg_ratio,
        seed=config.seed,
        positives_per_anchor=config.positives_per_anchor,
    )
    triples_path = config.artifact("triples.csv")
    save_triples(triples, triples_path)
    manifest.record("triples.csv", triples_path, {"pairs.csv": pairs_path})
    manifest.save()
    positives = sum(1 for t in triples if t.label == 1)
    _summary_line(
        "sample",
        f"{len(triples)} triples ({positives} positive / {len(triples) - positives} negative) "
        f"from {len(components)} components -> {triples_path}",
    )


def cmd_train(config: PipelineConfig, args) -> None:
    catalog_path = config.input_path("catalog")
    triples_path = config.artifact("triples.csv")
    pairs_path = config.input_path("pairs")
    manifest = Manifest.load(config.workspace)
    manifest.require("catalog.jsonl", catalog_path, "synth")
    manifest.require("triples.csv", triples_path, "sample", {"pairs.csv": pairs_path})
    products = load_catalog(catalog_path)
    vocab = build_vocabulary(products, config.min_count)
    encoded = encode_catalog(products, vocab, config.l_title, config.l_desc)
    triples = load_triples(triples_path)
    train_triples, val_triples = split_train_validation(triples, config.val_fraction, config.seed)
    model = init_model(vocab.size, config.embed_dim, config.hidden_dim, config.seed)
    optimizer = RmsPropState(config.learning_rate, config.decay_rho, config.rms_epsilon)
    train_config = TrainConfig(
        batch_size=config.batch_size,
        max_epochs=config.max_epochs,
        patience=config.patience,
        seed=config.seed,
        loss_kind=config.loss_kind,
    )
    model, history = train(model, train_triples, val_triples, encoded, train_config, optimizer)

    vocab_path = config.artifact("vocab.json")
    checkpoint_path = config.artifact("checkpoint.bin")
    history_path = config.artifact("history.csv")
    save_vocabulary(vocab, vocab_path)
    vocab_hash = vocabulary_fingerprint(vocab)
    save_checkpoint(model, vocab_hash, checkpoint_path)
    with open(history_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for stats in history:
            writer.writerow([stats.epoch, repr(stats.train_loss), repr(stats.val_loss)])
    manifest.record("vocab.json", vocab_path, {"catalog.jsonl": catalog_path})
    train_inputs = {"catalog.jsonl": catalog_path, "triples.csv": triples_path}
    manifest.record("checkpoint.bin", checkpoint_path, train_inputs)
    manifest.record("history.csv", history_path, train_inputs)
    manifest.save()
    best = min(history, key=lambda s: s.val_loss)
    _summary_line(
        "train",
        f"{len(history)} epochs, best val loss {best.val_loss:.6f} at epoch {best.epoch} "
        f"(vocab {vocab.size}) -> {checkpoint_path}",
    )


def cmd_embed(config: PipelineConfig, args) -> None:
    catalog_path = config.input_path("catalog")
    vocab_path = config.artifact("vocab.json")
    checkpoint_path = config.artifact("checkpoint.bin")
    manifest = Manifest.load(config.workspace)
    manifest.require("catalog.jsonl", catalog_path, "synth")
    manifest.require("vocab.json", vocab_path, "train", {"catalog.jsonl": catalog_path})
    manifest.require(
        "checkpoint.bin", checkpoint_path, "train",
        {"catalog.jsonl": catalog_path, "triples.csv": config.artifact("triples.csv")},
    )
    model, vocab_hash = load_checkpoint(checkpoint_path)
    vocab = load_vocabulary(vocab_path)
    if vocabulary_fingerprint(vocab) != vocab_hash:
        raise StaleArtifactError(
            f"vocabulary {vocab_path} does not match the checkpoint's vocabulary hash"
        )
    products = load_catalog(catalog_path)
    encoded = encode_catalog(products, vocab, config.l_title, config.l_desc)
    fingerprint = model_fingerprint(model, vocab_hash)
    store = generate_embeddings(
        export_encoder(model),
        list(encoded.values()),
        model_fingerprint=fingerprint,
        threads=config.threads,
    )
    store_path = config.artifact("embeddings.bin")
    save_store(store, store_path)
    manifest.record(
        "embeddings.bin", store_path,
        {"catalog.jsonl": catalog_path, "vocab.json": vocab_path, "checkpoint.bin": checkpoint_path},
    )
    if args.export_text:
        text_path = config.artifact("embeddings.txt")
        export_text(store, text_path)
        manifest.record("embeddings.txt", text_path, {"embeddings.bin": store_path})
    manifest.save()
    _summary_line("embed", f"{len(store)} embeddings of dim {store.dim} -> {store_path}")


def cmd_index(config: PipelineConfig, args) -> None:
    store_path = config.artifact("embeddings.bin")
    manifest = Manifest.load(config.workspace)
    manifest.require(
        "embeddings.bin", store_path, "embed",
        {
            "catalog.jsonl": config.input_path("catalog"),
            "vocab.json": config.artifact("vocab.json"),
            "checkpoint.bin": config.artifact("checkpoint.bin"),
        },
    )
    store = load_store(store_path)
    index = ann.build_index(
        store,
        m=config.m,
        ef_construction=config.ef_construction,
        seed=config.seed,
        source_fingerprint=file_sha256(store_path),
    )
    index_path = config.artifact("index.bin")
    ann.save_index(index, index_path)
    manifest.record("index.bin", index_path, {"embeddings.bin": store_path})
    manifest.save()
    _summary_line(
        "index",
        f"{len(index)} vectors, {index.max_level + 1} levels, m={index.m} -> {index_path}",
    )


def _load_search_stack(config: PipelineConfig, manifest: Manifest):
    store_path = config.artifact("embeddings.bin")
    index_path = config.artifact("index.bin")
    manifest.require(
        "embeddings.bin", store_path, "embed",
        {
            "catalog.jsonl": config.input_path("catalog"),
            "vocab.json": config.artifact("vocab.json"),
            "checkpoint.bin": config.artifact("checkpoint.bin"),
        },
    )
    manifest.require("index.bin", index_path, "index", {"embeddings.bin": store_path})
    store = load_store(store_path)
    index = ann.load_index(index_path, expected_store_fingerprint=file_sha256(store_path))
    return store, index


def cmd_recommend(config: PipelineConfig, args) -> None:
    manifest = Manifest.load(config.workspace)
    store, index = _load_search_stack(config, manifest)

    def recommend(anchor_id: str):
        return ann.top_n_recommendations(
            index, store, anchor_id,
            n=config.n, threshold=config.threshold,
            ef_search=config.ef_search, epsilon=config.search_epsilon,
        )

    if args.anchor is not None:
        for rec in recommend(args.anchor):
            print(f"{rec.anchor_id},{rec.neighbor_id},{rec.rank},{rec.similarity!r}")
        return
    recs_path = config.artifact("recommendations.csv")
    total = 0
    covered = 0
    with open(recs_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["anchor_id", "neighbor_id", "rank", "similarity"])
        for anchor_id in store.ids():
            recs = recommend(anchor_id)
            covered += bool(recs)
            for rec in recs:
                writer.writerow([rec.anchor_id, rec.neighbor_id, rec.rank, repr(rec.similarity)])
                total += 1
    manifest.record(
        "recommendations.csv", recs_path,
        {"embeddings.bin": config.artifact("embeddings.bin"), "index.bin": config.artifact("index.bin")},
    )
    manifest.save()
    _summary_line(
        "recommend",
        f"{total} recommendations for {covered}/{len(store)} anchors "
        f"(threshold {config.threshold}) -> {recs_path}",
    )


def _build_recommenders(config: PipelineConfig, store, index, catalog_ids):
    attributes = baselines.load_attributes(config.input_path("attributes"))
    schema = baselines.load_schema(config.input_path("schema"))
    vectors = baselines.build_attribute_vectors(catalog_ids, attributes, schema)
    counts = baselines.build_cocompare_counts(config.input_path("pairs"))

    def deep(anchor_id: str):
        if anchor_id not in store.entries:
            return []
        return ann.top_n_recommendations(
            index, store, anchor_id,
            n=config.n, threshold=config.threshold,
            ef_search=config.ef_search, epsilon=config.search_epsilon,
        )

    return {
        "attribute_based": lambda anchor: baselines.attribute_recommend(anchor, vectors, config.n),
        "frequently_compared": lambda anchor: baselines.frequently_compared_recommend(anchor, counts, config.n),
        "deep_learning": deep,
    }


def cmd_evaluate(config: PipelineConfig, args) -> None:
    manifest = Manifest.load(config.workspace)
    sessions_path = config.input_path("sessions")
    catalog_path = config.input_path("catalog")
    manifest.require("sessions.csv", sessions_path, "synth")
    manifest.require("catalog.jsonl", catalog_path, "synth")
    manifest.require("attributes.csv", config.input_path("attributes"), "synth")
    manifest.require("schema.csv", config.input_path("schema"), "synth")
    manifest.require("pairs.csv", config.input_path("pairs"), "synth")
    store, index = _load_search_stack(config, manifest)

    catalog_ids = [product.product_id for product in load_catalog(catalog_path)]
    sessions = evalkit.load_sessions(sessions_path)
    recommenders = _build_recommenders(config, store, index, catalog_ids)
    cache = evalkit.RecommendationCache(recommenders)

    raw_table = evalkit.evaluate(recommenders, sessions, cache=cache)
    baseline_set = {name: recommenders[name] for name in ("attribute_based", "frequently_compared")}
    covered_sessions = evalkit.filter_covered_sessions(sessions, baseline_set, cache=cache)
    tables = {"raw": raw_table}
    if covered_sessions:
        tables["filtered"] = evalkit.evaluate(recommenders, covered_sessions, cache=cache)

    coverage = {
        name: evalkit.anchor_coverage(recommenders[name], catalog_ids)
        for name in ALGORITHM_NAMES
    }
    lifts = {
        f"deep_learning_vs_{name}": evalkit.coverage_lift(coverage["deep_learning"], coverage[name])
        for name in ("attribute_based", "frequently_compared")
        if coverage[name] > 0
    }

    metrics_csv = config.artifact("metrics.csv")
    metrics_txt = config.artifact("metrics.txt")
    evalkit.write_metrics_csv(tables, coverage, metrics_csv, lifts)
    blocks = [
        evalkit.render_table(raw_table, f"Raw sessions ({raw_table.sessions_evaluated})", DISPLAY_NAMES)
    ]
    if "filtered" in tables:
        blocks.append(
            evalkit.render_table(
                tables["filtered"],
                f"Filtered sessions ({tables['filtered'].sessions_evaluated})",
                DISPLAY_NAMES,
            )
        )
    coverage_lines = ["Anchor coverage"]
    for name in ALGORITHM_NAMES:
        coverage_lines.append(f"{DISPLAY_NAMES[name]:<20} {coverage[name] * 100:.1f}%")
    for key, value in lifts.items():
        against = key.removeprefix("deep_learning_vs_")
        coverage_lines.append(
            f"lift vs {DISPLAY_NAMES[against]:<17} {value * 100:+.1f}%"
        )
    blocks.append("\n".join(coverage_lines))
    with open(metrics_txt, "w", encoding="utf-8") as handle:
        handle.write("\n\n".join(blocks) + "\n")

    eval_inputs = {
        "sessions.csv": sessions_path,
        "embeddings.bin": config.artifact("embeddings.bin"),
        "index.bin": config.artifact("index.bin"),
        "attributes.csv": config.input_path("attributes"),
        "schema.csv": config.input_path("schema"),
        "pairs.csv": config.input_path("pairs"),
        "catalog.jsonl": catalog_path,
    }
    manifest.record("metrics.csv", metrics_csv, eval_inputs)
    manifest.record("metrics.txt", metrics_txt, eval_inputs)
    manifest.save()
    _summary_line(
        "evaluate",
        f"{raw_table.sessions_evaluated} raw / {len(covered_sessions)} filtered sessions, "
        f"coverage deep {coverage['deep_learning']:.3f} attr {coverage['attribute_based']:.3f} "
        f"freq {coverage['frequently_compared']:.3f} -> {metrics_csv}",
    )


_COMMANDS = {
    "synth": cmd_synth,
    "sample": cmd_sample,
    "train": cmd_train,
    "embed": cmd_embed,
    "index": cmd_index,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_config_flags(common)
    parser = argparse.ArgumentParser(
        prog="altrec",
        description="Alternative-product recommendation pipeline",
    )
    parser.add_argument("--version", action="version", version=f"altrec {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate a synthetic catalog, pairs, sessions, and attributes",
        "sample": "build co-compare components and sample training triples",
        "train": "train the Siamese BiLSTM on the sampled triples",
        "embed": "generate embeddings for the whole catalog",
        "index": "build the approximate kNN index over the embeddings",
        "recommend": "write top-N recommendations (or print one anchor's)",
        "evaluate": "score all three recommenders against purchase sessions",
    }
    for name, help_text in helps.items():
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        if name == "recommend":
            sub.add_argument("--anchor", default=None, metavar="PRODUCT_ID",
                             help="print recommendations for one anchor instead of writing the file")
        if name == "embed":
            sub.add_argument("--export-text", action="store_true",
                             help="also write a debug text export of the embeddings")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = build_config(args)
        _COMMANDS[args.command](config, args)
    except NumericalError as exc:
        print(f"altrec {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AltrecError as exc:
        print(f"altrec {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
