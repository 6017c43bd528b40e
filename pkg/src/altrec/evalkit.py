"""Offline evaluation: session-based precision/recall@K and anchor coverage.

A session pairs one viewed (anchor) product with the products actually
purchased in that session. Under the raw protocol every session counts
for every algorithm and an uncovered anchor contributes zeros; the
filtered protocol first keeps only sessions covered by every named
algorithm. Means are computed with exact summation so the reported
tables are reproducible to the last bit.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .ann import Recommendation
from .errors import DataError, NoCoverageError

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10)

Recommender = Callable[[str], list[Recommendation]]


@dataclass(frozen=True)
class Session:
    session_id: str
    anchor_id: str
    purchased_ids: frozenset[str]

    def __post_init__(self):
        if not self.purchased_ids:
            raise ValueError(f"session {self.session_id!r} has no purchases")


@dataclass
class MetricsTable:
    """Per (algorithm, K) precision/recall plus per-algorithm coverage."""

    algorithms: tuple[str, ...]
    ks: tuple[int, ...]
    precision: dict[str, dict[int, float]]
    recall: dict[str, dict[int, float]]
    coverage: dict[str, float] = field(default_factory=dict)
    sessions_evaluated: int = 0


def load_sessions(path) -> list[Session]:
    """Read line-delimited sessions: session_id, anchor_id, id|id|... ."""
    sessions: list[Session] = []
    try:
        handle = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open sessions file {path}: {exc}") from exc
    skipped = 0
    with handle:
        for lineno, row in enumerate(csv.reader(handle), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                logger.warning("sessions line %d: expected 3 columns; skipped", lineno)
                skipped += 1
                continue
            session_id, anchor_id, purchased_text = (cell.strip() for cell in row)
            purchased = frozenset(p for p in purchased_text.split("|") if p)
            if not session_id or not anchor_id or not purchased:
                if lineno == 1 and purchased_text and not purchased:
                    continue  # header
                logger.warning("sessions line %d: empty field; skipped", lineno)
                skipped += 1
                continue
            sessions.append(Session(session_id, anchor_id, purchased))
    if skipped:
        logger.warning("session load skipped %d malformed line(s)", skipped)
    return sessions


def save_sessions(sessions: list[Session], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        for session in sessions:
            writer.writerow(
                [session.session_id, session.anchor_id, "|".join(sorted(session.purchased_ids))]
            )


def precision_at_k(recommended, purchased: set[str], k: int) -> float:
    """|top-k hits| / k; short recommendation lists count misses."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = sum(1 for product_id in list(recommended)[:k] if product_id in purchased)
    return hits / k


def recall_at_k(recommended, purchased: set[str], k: int) -> float:
    """|top-k hits| / |purchased|."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not purchased:
        raise ValueError("purchased set must be non-empty")
    hits = sum(1 for product_id in list(recommended)[:k] if product_id in purchased)
    return hits / len(purchased)


def _recommended_ids(recommender: Recommender, anchor_id: str) -> list[str]:
    try:
        return [rec.neighbor_id for rec in recommender(anchor_id)]
    except NoCoverageError:
        return []


class RecommendationCache:
    """One recommender call per (algorithm, anchor)."""

    def __init__(self, recommenders: Mapping[str, Recommender]):
        self.recommenders = recommenders
        self._cache: dict[tuple[str, str], list[str]] = {}

    def ids(self, name: str, anchor_id: str) -> list[str]:
        key = (name, anchor_id)
        if key not in self._cache:
            self._cache[key] = _recommended_ids(self.recommenders[name], anchor_id)
        return self._cache[key]


def evaluate(
    recommenders: Mapping[str, Recommender],
    sessions: list[Session],
    ks=DEFAULT_KS,
    cache: RecommendationCache | None = None,
) -> MetricsTable:
    """Raw-protocol metrics: means over all sessions, zeros when uncovered."""
    if not sessions:
        raise DataError("no sessions to evaluate")
    if not recommenders:
        raise ValueError("no recommenders given")
    ks = tuple(ks)
    if cache is None:
        cache = RecommendationCache(recommenders)
    names = tuple(recommenders)
    precision_values = {name: {k: [] for k in ks} for name in names}
    recall_values = {name: {k: [] for k in ks} for name in names}
    for session in sessions:
        purchased = set(session.purchased_ids)
        for name in names:
            recommended = cache.ids(name, session.anchor_id)
            for k in ks:
                precision_values[name][k].append(precision_at_k(recommended, purchased, k))
                recall_values[name][k].append(recall_at_k(recommended, purchased, k))
    count = len(sessions)
    return MetricsTable(
        algorithms=names,
        ks=ks,
        precision={
            name: {k: math.fsum(vals) / count for k, vals in per_k.items()}
            for name, per_k in precision_values.items()
        },
        recall={
            name: {k: math.fsum(vals) / count for k, vals in per_k.items()}
            for name, per_k in recall_values.items()
        },
        sessions_evaluated=count,
    )


def filter_covered_sessions(
    sessions: list[Session],
    recommenders: Mapping[str, Recommender],
    cache: RecommendationCache | None = None,
) -> list[Session]:
    """Keep sessions whose anchor gets >= 1 recommendation from every
    named recommender. An empty recommender set keeps everything."""
    if not recommenders:
        return list(sessions)
    if cache is None:
        cache = RecommendationCache(recommenders)
    kept = []
    for session in sessions:
        if all(cache.ids(name, session.anchor_id) for name in recommenders):
            kept.append(session)
    return kept


def anchor_coverage(recommender: Recommender, catalog_ids) -> float:
    """Fraction of catalog products receiving >= 1 recommendation."""
    catalog_ids = list(catalog_ids)
    if not catalog_ids:
        raise DataError("catalog id list is empty")
    covered = sum(1 for product_id in catalog_ids if _recommended_ids(recommender, product_id))
    return covered / len(catalog_ids)


def coverage_lift(covered: float, baseline: float) -> float:
    """Relative lift (cov_a - cov_b) / cov_b."""
    if baseline == 0:
        raise ValueError("baseline coverage is zero")
    return (covered - baseline) / baseline


def render_table(table: MetricsTable, title: str, display_names: Mapping[str, str] | None = None) -> str:
    """Aligned plain-text rendering: algorithms as rows, precision then
    recall columns for each K, percentages with two decimals."""
    display_names = display_names or {}
    label_width = max(
        [len(display_names.get(name, name)) for name in table.algorithms] + [len(title)]
    )
    half = len(table.ks)
    header_1 = (
        " " * label_width
        + "  "
        + "Precision".center(9 * half - 1)
        + "  "
        + "Recall".center(9 * half - 1)
    )
    k_cells = "".join(f"{f'Top {k}':>9}" for k in table.ks)
    header_2 = " " * label_width + k_cells + k_cells
    lines = [title, header_1.rstrip(), header_2]
    for name in table.algorithms:
        label = display_names.get(name, name).ljust(label_width)
        cells = "".join(f"{table.precision[name][k] * 100:>8.2f}%" for k in table.ks)
        cells += "".join(f"{table.recall[name][k] * 100:>8.2f}%" for k in table.ks)
        lines.append(label + cells)
    return "\n".join(lines)


def metrics_rows(table: MetricsTable, protocol: str) -> list[list[str]]:
    """Tidy rows for the CSV report: protocol, algorithm, metric, k, value."""
    rows = []
    for name in table.algorithms:
        for k in table.ks:
            rows.append([protocol, name, "precision", str(k), repr(table.precision[name][k])])
        for k in table.ks:
            rows.append([protocol, name, "recall", str(k), repr(table.recall[name][k])])
    return rows


def write_metrics_csv(
    tables: Mapping[str, MetricsTable],
    coverage: Mapping[str, float],
    path,
    lifts: Mapping[str, float] | None = None,
) -> None:
    """Machine-readable report: metric rows per protocol, coverage, lifts."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["protocol", "algorithm", "metric", "k", "value"])
        for protocol, table in tables.items():
            writer.writerows(metrics_rows(table, protocol))
        for name, value in coverage.items():
            writer.writerow(["catalog", name, "coverage", "", repr(value)])
        for name, value in (lifts or {}).items():
            writer.writerow(["catalog", name, "coverage_lift", "", repr(value)])
