"""Acceptance criteria, one test per criterion, at the stated tolerances.

Run `pytest tests/test_acceptance.py -v -s` to see one PASS/FAIL line per
criterion. Criteria 5 and 7 share one full training run on the default
synthetic corpus (4 families x 250 products, seed 7); criterion 9 runs
the whole CLI chain twice on a reduced corpus.
"""

import math
import random
import time
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import pytest

from altrec import ann
from altrec.baselines import (
    attribute_recommend,
    build_attribute_vectors,
    build_cocompare_counts,
    frequently_compared_recommend,
    load_attributes,
    load_schema,
)
from altrec.catalog import build_vocabulary, encode_catalog, load_catalog
from altrec.cli import main as cli_main
from altrec.compare_graph import (
    ComparePair,
    connected_components,
    load_pairs,
    sample_triples,
    split_train_validation,
)
from altrec.embedding_store import EmbeddingStore, export_encoder, generate_embeddings
from altrec.evalkit import (
    Session,
    anchor_coverage,
    coverage_lift,
    evaluate,
    filter_covered_sessions,
    precision_at_k,
    recall_at_k,
)
from altrec.neural import (
    BINARY_CROSS_ENTROPY,
    CONTRASTIVE,
    TrainConfig,
    batch_loss,
    compute_gradients,
    contrastive_loss,
    cosine_energy,
    encode_product,
    encode_products,
    init_model,
    negative_loss,
    positive_loss,
    train,
)
from altrec.synth import family_of, generate_corpus
from tests.conftest import random_encoded
from tests.test_gradients import (
    build_safe_batch,
    finite_difference_gradients,
    max_relative_error,
)


@contextmanager
def reported(criterion: int, description: str):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {criterion} FAIL: {description}")
        raise
    print(f"\nACCEPTANCE {criterion} PASS: {description}")


@dataclass
class Pipeline:
    workspace: object
    catalog_ids: list
    encoded: dict
    store: EmbeddingStore
    index: object
    history: list
    train_seconds: float
    products_per_family: int


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """The criterion-5 training run: default corpus and hyperparameters."""
    workspace = tmp_path_factory.mktemp("acceptance")
    summary = generate_corpus(workspace)  # 4 families x 250, seed 7, defaults
    products = load_catalog(summary.catalog_path)
    vocab = build_vocabulary(products)
    encoded = encode_catalog(products, vocab)
    components = connected_components(load_pairs(summary.pairs_path))
    triples = sample_triples(components, neg_ratio=3, seed=7)
    train_triples, val_triples = split_train_validation(triples, 0.1, seed=7)
    model = init_model(vocab.size, embed_dim=32, hidden_dim=32, seed=7)
    config = TrainConfig(batch_size=64, max_epochs=50, patience=3, seed=7)
    start = time.monotonic()
    model, history = train(model, train_triples, val_triples, encoded, config)
    train_seconds = time.monotonic() - start
    store = generate_embeddings(export_encoder(model), list(encoded.values()))
    index = ann.build_index(store, m=16, ef_construction=200, seed=7)
    return Pipeline(
        workspace=workspace,
        catalog_ids=[p.product_id for p in products],
        encoded=encoded,
        store=store,
        index=index,
        history=history,
        train_seconds=train_seconds,
        products_per_family=250,
    )


def test_criterion_1_gradient_correctness():
    with reported(1, "analytic gradients match central finite differences "
                     "(20 configs, both loss kinds, rel err < 1e-4, < 60 s)"):
        start = time.monotonic()
        rng = np.random.default_rng(101)
        worst = 0.0
        for trial in range(20):
            loss_kind = CONTRASTIVE if trial % 2 == 0 else BINARY_CROSS_ENTROPY
            vocab_size = int(rng.integers(8, 51))
            embed_dim = int(rng.integers(2, 9))
            hidden_dim = int(rng.integers(2, 9))
            n_pairs = int(rng.integers(1, 5))
            model = init_model(vocab_size, embed_dim, hidden_dim, seed=trial)
            batch = build_safe_batch(
                model, rng, n_pairs, vocab_size, l_title=3, l_desc=4
            )
            _, analytic = compute_gradients(batch, model, loss_kind)
            numeric = finite_difference_gradients(batch, model, loss_kind)
            worst = max(worst, max_relative_error(analytic, numeric))
        elapsed = time.monotonic() - start
        assert worst < 1e-4, f"max relative error {worst:.2e}"
        assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"


def test_criterion_2_loss_formula_conformance():
    with reported(2, "contrastive loss matches the canonical points, composes "
                     "per instance, and batch loss is the exact sum over instances"):
        assert contrastive_loss(1.0, 1) == 0.0
        assert contrastive_loss(0.25, 1) == 0.75
        assert contrastive_loss(0.5, 0) == 0.5
        assert contrastive_loss(-0.3, 0) == 0.0

        rng = np.random.default_rng(7)
        for _ in range(200):
            energy = float(rng.uniform(-1, 1))
            for label in (0, 1):
                composed = label * positive_loss(energy) + (1 - label) * negative_loss(energy)
                assert contrastive_loss(energy, label) == composed

        model = init_model(40, 8, 6, seed=3)
        products = [random_encoded(rng, f"p{i}") for i in range(128)]
        batch = [(products[2 * i], products[2 * i + 1], i % 2) for i in range(64)]
        instances = [
            contrastive_loss(
                cosine_energy(encode_product(a, model), encode_product(b, model)), y
            )
            for a, b, y in batch
        ]
        whole = batch_loss(batch, model)
        assert whole == math.fsum(instances)
        for _ in range(30):
            cut = int(rng.integers(1, 64))
            left = batch_loss(batch[:cut], model)
            right = batch_loss(batch[cut:], model)
            assert left == math.fsum(instances[:cut])
            assert right == math.fsum(instances[cut:])
            assert left + right == pytest.approx(whole, rel=1e-14, abs=0.0)


def test_criterion_3_siamese_symmetry():
    with reported(3, "energy is bit-exactly symmetric over 1000 random product pairs"):
        rng = np.random.default_rng(11)
        model = init_model(60, 12, 10, seed=5)
        products = [random_encoded(rng, f"p{i}", vocab_size=60) for i in range(2000)]
        vectors, _ = encode_products(model, products)
        for i in range(1000):
            u, v = vectors[2 * i], vectors[2 * i + 1]
            assert cosine_energy(u, v) == cosine_energy(v, u)


def _bfs_partition(pairs):
    adjacency = {}
    for pair in pairs:
        adjacency.setdefault(pair.product_id_1, set()).add(pair.product_id_2)
        adjacency.setdefault(pair.product_id_2, set()).add(pair.product_id_1)
    seen = set()
    parts = set()
    for start in sorted(adjacency):
        if start in seen:
            continue
        queue = deque([start])
        component = set()
        while queue:
            node = queue.popleft()
            if node in component:
                continue
            component.add(node)
            queue.extend(adjacency[node] - component)
        seen |= component
        parts.add(frozenset(component))
    return parts


def test_criterion_4_sampling_contract():
    with reported(4, "components match brute-force closure; labels sound; "
                     "negatives are exactly 3x positives (Fig-2 graph + 50 random)"):
        graphs = [[ComparePair("A", "B"), ComparePair("B", "C"),
                   ComparePair("D", "E"), ComparePair("E", "F")]]
        rng = random.Random(41)
        for _ in range(50):
            n_nodes = rng.randint(6, 500)
            n_edges = min(rng.randint(4, 700), n_nodes * (n_nodes - 1) // 2)
            nodes = [f"n{i:04d}" for i in range(n_nodes)]
            edges = set()
            while len(edges) < n_edges:
                a, b = rng.sample(nodes, 2)
                edges.add(ComparePair(a, b))
            graphs.append(sorted(edges, key=lambda p: (p.product_id_1, p.product_id_2)))

        for graph_no, pairs in enumerate(graphs):
            components = connected_components(pairs)
            assert {frozenset(c) for c in components.components} == _bfs_partition(pairs)
            if len(components) < 2:
                continue
            triples = sample_triples(components, neg_ratio=3, seed=graph_no)
            positives = [t for t in triples if t.label == 1]
            negatives = [t for t in triples if t.label == 0]
            assert len(negatives) == 3 * len(positives)
            for triple in triples:
                same = (components.membership[triple.anchor_id]
                        == components.membership[triple.other_id])
                assert (triple.label == 1) == same


def test_criterion_5_learning_separation(pipeline):
    with reported(5, "default training separates families (cosine gap >= 0.3) and "
                     "halves the epoch-1 validation loss in under 15 minutes"):
        assert pipeline.train_seconds < 900.0, f"training took {pipeline.train_seconds:.0f}s"
        epoch1 = pipeline.history[0].val_loss
        best = min(stats.val_loss for stats in pipeline.history)
        assert best < 0.5 * epoch1, f"val loss {best} vs epoch-1 {epoch1}"

        ids = pipeline.store.ids()
        matrix = np.array([pipeline.store.entries[pid] for pid in ids])
        matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
        families = np.array([family_of(pid, pipeline.products_per_family) for pid in ids])
        gram = matrix @ matrix.T
        same = families[:, None] == families[None, :]
        off_diagonal = ~np.eye(len(ids), dtype=bool)
        intra = float(gram[same & off_diagonal].mean())
        inter = float(gram[~same].mean())
        assert intra - inter >= 0.3, f"intra {intra:.3f} inter {inter:.3f}"


def test_criterion_6_ann_quality():
    with reported(6, "recall@10 >= 0.95 at the pinned knobs on 10k random unit "
                     "vectors, monotone in ef, exact at ef = store size, < 5 min"):
        start = time.monotonic()
        rng = np.random.default_rng(63)
        vectors = rng.standard_normal((10_000, 128))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        store = EmbeddingStore(
            dim=128,
            entries={f"v{i:05d}": vectors[i] for i in range(10_000)},
            model_fingerprint="",
        )
        index = ann.build_index(store, m=16, ef_construction=200, seed=63)
        queries = rng.standard_normal((100, 128))
        oracle = [ann.exact_knn(store, q, 10) for q in queries]

        recalls = {}
        for ef in (10, 50, 100):
            hits = 0
            for query, expected in zip(queries, oracle):
                found = {pid for pid, _ in ann.knn(index, query, 10, ef_search=ef)}
                hits += len(found & {pid for pid, _ in expected})
            recalls[ef] = hits / 1000
        assert recalls[100] >= 0.95, f"recall@10 = {recalls[100]:.3f}"
        assert recalls[10] <= recalls[50] <= recalls[100], recalls

        for query, expected in zip(queries[:20], oracle[:20]):
            assert ann.knn(index, query, 10, ef_search=len(store)) == expected

        elapsed = time.monotonic() - start
        assert elapsed < 300.0, f"ANN benchmark took {elapsed:.0f}s"


def test_criterion_7_coverage_mechanism(pipeline):
    with reported(7, "anchor coverage: attributes exactly 0.6, co-compare exactly 0.7, "
                     "embeddings >= 0.95 at threshold 0.8; lifts positive"):
        workspace = pipeline.workspace
        attributes = load_attributes(workspace / "attributes.csv")
        schema = load_schema(workspace / "schema.csv")
        vectors = build_attribute_vectors(pipeline.catalog_ids, attributes, schema)
        counts = build_cocompare_counts(workspace / "pairs.csv")

        def attribute_rec(anchor_id):
            return attribute_recommend(anchor_id, vectors, 10)

        def frequently_rec(anchor_id):
            return frequently_compared_recommend(anchor_id, counts, 10)

        def deep_rec(anchor_id):
            return ann.top_n_recommendations(
                pipeline.index, pipeline.store, anchor_id, n=10, threshold=0.8
            )

        coverage = {
            "attribute_based": anchor_coverage(attribute_rec, pipeline.catalog_ids),
            "frequently_compared": anchor_coverage(frequently_rec, pipeline.catalog_ids),
            "deep_learning": anchor_coverage(deep_rec, pipeline.catalog_ids),
        }
        assert coverage["attribute_based"] == 0.6, coverage
        assert coverage["frequently_compared"] == 0.7, coverage
        assert coverage["deep_learning"] >= 0.95, coverage
        assert coverage_lift(coverage["deep_learning"], coverage["attribute_based"]) > 0
        assert coverage_lift(coverage["deep_learning"], coverage["frequently_compared"]) > 0


def _fixture_recommenders():
    """Three small recommenders of the three algorithm kinds, all with
    hand-checkable rankings."""
    ids = [f"q{i:02d}" for i in range(1, 13)]

    attributes = {}
    for i, pid in enumerate(ids[:8], start=1):
        attributes[pid] = {"kind": "alpha" if i <= 4 else "beta", "size": str(i)}
    from altrec.baselines import AttributeSchema, AttributeSpec

    schema = AttributeSchema((
        AttributeSpec("kind", "categorical", values=("alpha", "beta")),
        AttributeSpec("size", "numerical", min_value=0.0, max_value=10.0),
    ))
    vectors = build_attribute_vectors(ids, attributes, schema)

    from altrec.baselines import CoCompareCounts

    counts = CoCompareCounts()
    counts.add("q01", "q02", 3)
    counts.add("q01", "q03", 1)
    counts.add("q02", "q03", 2)
    counts.add("q04", "q05", 1)
    counts.add("q09", "q10", 2)

    angles = [0, 5, 10, 15, 80, 85, 90, 95, 100, 170, 175, 180]
    entries = {
        pid: np.array([math.cos(math.radians(a)), math.sin(math.radians(a))])
        for pid, a in zip(ids, angles)
    }
    store = EmbeddingStore(dim=2, entries=entries, model_fingerprint="")
    index = ann.build_index(store, m=2, ef_construction=16, seed=0)

    return ids, {
        "attribute_based": lambda anchor: attribute_recommend(anchor, vectors, 10),
        "frequently_compared": lambda anchor: frequently_compared_recommend(anchor, counts, 10),
        "deep_learning": lambda anchor: (
            ann.top_n_recommendations(index, store, anchor, n=10, threshold=0.8)
            if anchor in entries else []
        ),
    }


_FIXTURE_SESSIONS = [
    ("s01", "q01", ("q02",)),
    ("s02", "q01", ("q03", "q07")),
    ("s03", "q02", ("q01", "q04")),
    ("s04", "q03", ("q02",)),
    ("s05", "q04", ("q05", "q06")),
    ("s06", "q05", ("q04",)),
    ("s07", "q06", ("q05", "q12")),
    ("s08", "q07", ("q08",)),
    ("s09", "q08", ("q07", "q09")),
    ("s10", "q09", ("q10",)),
    ("s11", "q10", ("q09", "q11")),
    ("s12", "q11", ("q12",)),
    ("s13", "q12", ("q11", "q10")),
    ("s14", "q02", ("q03",)),
    ("s15", "q03", ("q01", "q02", "q04")),
    ("s16", "q05", ("q06", "q07")),
    ("s17", "q06", ("q01",)),
    ("s18", "q09", ("q08", "q10")),
    ("s19", "q10", ("q12",)),
    ("s20", "q01", ("q04", "q02", "q03")),
]

# Spot-frozen cells computed with the independent script below (raw
# protocol over the 20-session fixture); precision@1 values additionally
# verified by walking the sessions by hand.
_FROZEN_RAW = {
    ("deep_learning", "precision", 1): 0.55,
    ("frequently_compared", "precision", 1): 0.5,
    ("attribute_based", "precision", 1): 0.35,
    ("deep_learning", "recall", 5): 0.7,
    ("attribute_based", "recall", 10): 0.65,
    ("frequently_compared", "recall", 10): 0.4416666666666667,
}


def _independent_metrics(sessions, rec_lists, ks):
    """Plain-loop reference computation of the declared metric definitions."""
    out = {}
    names = sorted(rec_lists)
    for name in names:
        for k in ks:
            precisions = []
            recalls = []
            for _, anchor, purchased in sessions:
                top = rec_lists[name].get(anchor, [])[:k]
                hits = sum(1 for pid in top if pid in purchased)
                precisions.append(hits / k)
                recalls.append(hits / len(purchased))
            out[(name, "precision", k)] = math.fsum(precisions) / len(sessions)
            out[(name, "recall", k)] = math.fsum(recalls) / len(sessions)
    return out


def test_criterion_8_evaluation_protocol_fidelity():
    with reported(8, "evaluate() reproduces the 20-session fixture exactly under "
                     "both protocols; precision*k = recall*|purchased| per session"):
        ids, recommenders = _fixture_recommenders()
        sessions = [
            Session(sid, anchor, frozenset(purchased))
            for sid, anchor, purchased in _FIXTURE_SESSIONS
        ]
        assert len(sessions) == 20

        rec_lists = {
            name: {anchor: [r.neighbor_id for r in _safe(rec, anchor)] for anchor in ids}
            for name, rec in recommenders.items()
        }

        ks = (1, 5, 10)
        raw = evaluate(recommenders, sessions, ks=ks)
        expected_raw = _independent_metrics(
            [(s.session_id, s.anchor_id, s.purchased_ids) for s in sessions], rec_lists, ks
        )
        for name in recommenders:
            for k in ks:
                assert raw.precision[name][k] == expected_raw[(name, "precision", k)]
                assert raw.recall[name][k] == expected_raw[(name, "recall", k)]
        for key, value in _FROZEN_RAW.items():
            name, metric, k = key
            table = raw.precision if metric == "precision" else raw.recall
            assert table[name][k] == value, key

        baselines_only = {name: recommenders[name]
                          for name in ("attribute_based", "frequently_compared")}
        covered = filter_covered_sessions(sessions, baselines_only)
        expected_covered = [
            s for s in sessions
            if rec_lists["attribute_based"][s.anchor_id]
            and rec_lists["frequently_compared"][s.anchor_id]
        ]
        assert covered == expected_covered
        assert 0 < len(covered) < len(sessions)
        filtered = evaluate(recommenders, covered, ks=ks)
        expected_filtered = _independent_metrics(
            [(s.session_id, s.anchor_id, s.purchased_ids) for s in covered], rec_lists, ks
        )
        for name in recommenders:
            for k in ks:
                assert filtered.precision[name][k] == expected_filtered[(name, "precision", k)]
                assert filtered.recall[name][k] == expected_filtered[(name, "recall", k)]

        for session in sessions:
            for name in recommenders:
                recommended = rec_lists[name][session.anchor_id]
                for k in ks:
                    hits = sum(1 for pid in recommended[:k] if pid in session.purchased_ids)
                    assert precision_at_k(recommended, session.purchased_ids, k) == hits / k
                    assert recall_at_k(recommended, session.purchased_ids, k) == (
                        hits / len(session.purchased_ids)
                    )


def _safe(recommender, anchor):
    from altrec.errors import NoCoverageError

    try:
        return recommender(anchor)
    except NoCoverageError:
        return []


def test_criterion_9_end_to_end_determinism(tmp_path):
    with reported(9, "two CLI chain runs from the same synth seed produce "
                     "byte-identical stores, indexes, recommendations, and reports"):
        flags = [
            "--seed", "7", "--families", "3", "--products-per-family", "40",
            "--sessions-count", "80", "--embed-dim", "12", "--hidden-dim", "8",
            "--l-desc", "48", "--max-epochs", "8", "--threshold", "0.4",
            "--m", "8", "--ef-construction", "60", "--ef-search", "60",
        ]
        workspaces = []
        for run in range(2):
            workspace = tmp_path / f"run{run}"
            workspace.mkdir()
            for command in ("synth", "sample", "train", "embed", "index",
                            "recommend", "evaluate"):
                code = cli_main([command, "--workspace", str(workspace), *flags])
                assert code == 0, (run, command)
            workspaces.append(workspace)
        first, second = workspaces
        for name in ("embeddings.bin", "index.bin", "recommendations.csv",
                     "metrics.csv", "metrics.txt", "checkpoint.bin", "manifest.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name
