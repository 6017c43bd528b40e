"""The two comparison recommenders: attribute cosine and co-compare counts.

The attribute baseline one-hot encodes categorical attributes and min-max
normalizes numerical ones over a sidecar schema, then ranks by exact
cosine. The frequently-compared baseline ranks an anchor's co-compare
partners by raw count; products never compared get nothing, which is its
cold-start gap.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ann import Recommendation
from .compare_graph import iter_pair_lines
from .errors import DataError, NoCoverageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttributeSpec:
    """Schema entry for one attribute."""

    name: str
    kind: str  # "categorical" or "numerical"
    values: tuple[str, ...] = ()
    min_value: float = 0.0
    max_value: float = 0.0

    @property
    def width(self) -> int:
        return len(self.values) if self.kind == "categorical" else 1


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[AttributeSpec, ...]

    @property
    def dim(self) -> int:
        return sum(spec.width for spec in self.attributes)


@dataclass
class AttributeVector:
    product_id: str
    values: np.ndarray


def load_schema(path) -> AttributeSchema:
    """Read the schema file: name, kind, then value set or min/max.

    Categorical lines look like ``color,categorical,red|blue|green``;
    numerical lines like ``capacity,numerical,10,100``.
    """
    specs: list[AttributeSpec] = []
    try:
        handle = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open schema file {path}: {exc}") from exc
    with handle:
        for lineno, row in enumerate(csv.reader(handle), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            name = row[0].strip()
            kind = row[1].strip().lower() if len(row) > 1 else ""
            if kind == "categorical" and len(row) == 3:
                values = tuple(v for v in row[2].strip().split("|") if v)
                if not values:
                    raise DataError(f"schema line {lineno}: empty value set")
                specs.append(AttributeSpec(name, "categorical", values=values))
            elif kind == "numerical" and len(row) == 4:
                specs.append(
                    AttributeSpec(
                        name, "numerical",
                        min_value=float(row[2]), max_value=float(row[3]),
                    )
                )
            else:
                raise DataError(f"schema line {lineno}: unrecognized entry {row!r}")
    if not specs:
        raise DataError(f"schema file {path} defines no attributes")
    names = [spec.name for spec in specs]
    if len(set(names)) != len(names):
        raise DataError(f"schema file {path} repeats an attribute name")
    return AttributeSchema(tuple(specs))


def load_attributes(path) -> dict[str, dict[str, str]]:
    """Read the attribute file: product_id, attribute_name, attribute_value."""
    attributes: dict[str, dict[str, str]] = {}
    try:
        handle = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open attribute file {path}: {exc}") from exc
    skipped = 0
    with handle:
        for lineno, row in enumerate(csv.reader(handle), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                logger.warning("attributes line %d: expected 3 columns; skipped", lineno)
                skipped += 1
                continue
            product_id, name, value = (cell.strip() for cell in row)
            if not product_id or not name:
                logger.warning("attributes line %d: empty field; skipped", lineno)
                skipped += 1
                continue
            attributes.setdefault(product_id, {})[name] = value
    if skipped:
        logger.warning("attribute load skipped %d malformed line(s)", skipped)
    return attributes


def build_attribute_vectors(
    product_ids,
    attributes: dict[str, dict[str, str]],
    schema: AttributeSchema,
) -> list[AttributeVector]:
    """Encode each product's attributes into the shared schema space.

    Products with no schema attribute at all (or whose encoded vector is
    all zero, which carries no cosine signal) are excluded; they are the
    baseline's coverage gaps. Unknown categorical values and unparsable
    numbers encode as zeros for their slot and are counted as warnings.
    """
    vectors: list[AttributeVector] = []
    excluded = 0
    warnings = 0
    for product_id in product_ids:
        product_attrs = attributes.get(product_id)
        if not product_attrs or not any(spec.name in product_attrs for spec in schema.attributes):
            excluded += 1
            continue
        values = np.zeros(schema.dim)
        offset = 0
        for spec in schema.attributes:
            raw = product_attrs.get(spec.name)
            if spec.kind == "categorical":
                if raw is not None:
                    try:
                        values[offset + spec.values.index(raw)] = 1.0
                    except ValueError:
                        warnings += 1
                        logger.warning(
                            "product %s: unknown %s value %r", product_id, spec.name, raw
                        )
                offset += len(spec.values)
            else:
                if raw is not None:
                    try:
                        number = float(raw)
                    except ValueError:
                        warnings += 1
                        logger.warning(
                            "product %s: bad numerical %s value %r", product_id, spec.name, raw
                        )
                    else:
                        span = spec.max_value - spec.min_value
                        if span > 0:
                            scaled = (number - spec.min_value) / span
                            values[offset] = min(max(scaled, 0.0), 1.0)
                offset += 1
        if not np.any(values):
            excluded += 1
            continue
        vectors.append(AttributeVector(product_id, values))
    if excluded:
        logger.info("attribute coverage gap: %d product(s) without usable attributes", excluded)
    return vectors


def attribute_recommend(
    anchor_id: str,
    vectors: list[AttributeVector],
    n: int = 10,
) -> list[Recommendation]:
    """Exact cosine top-n over attribute vectors, anchor excluded."""
    if n < 1:
        raise ValueError("n must be >= 1")
    anchor_vec = None
    for vector in vectors:
        if vector.product_id == anchor_id:
            anchor_vec = vector.values
            break
    if anchor_vec is None:
        raise NoCoverageError(f"anchor {anchor_id!r} has no attribute vector")
    anchor_norm = math.sqrt(float(np.dot(anchor_vec, anchor_vec)))
    scored: list[tuple[float, str]] = []
    for vector in vectors:
        if vector.product_id == anchor_id:
            continue
        norm = math.sqrt(float(np.dot(vector.values, vector.values)))
        sim = float(np.dot(anchor_vec, vector.values)) / (anchor_norm * norm)
        scored.append((min(1.0, max(-1.0, sim)), vector.product_id))
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [
        Recommendation(anchor_id, product_id, sim, rank)
        for rank, (sim, product_id) in enumerate(scored[:n], start=1)
    ]


@dataclass
class CoCompareCounts:
    """Symmetric unordered-pair multiset counts with per-product partners."""

    counts: dict[tuple[str, str], int] = field(default_factory=dict)
    partners: dict[str, dict[str, int]] = field(default_factory=dict)

    def count(self, id_a: str, id_b: str) -> int:
        key = (id_a, id_b) if id_a < id_b else (id_b, id_a)
        return self.counts.get(key, 0)

    def add(self, id_a: str, id_b: str, times: int = 1) -> None:
        key = (id_a, id_b) if id_a < id_b else (id_b, id_a)
        self.counts[key] = self.counts.get(key, 0) + times
        self.partners.setdefault(id_a, {})[id_b] = self.counts[key]
        self.partners.setdefault(id_b, {})[id_a] = self.counts[key]


def build_cocompare_counts(path) -> CoCompareCounts:
    """Aggregate the raw (non-deduplicated) pair stream into counts."""
    counts = CoCompareCounts()
    for id_a, id_b, flag in iter_pair_lines(path):
        if flag != 1:
            continue
        counts.add(id_a, id_b)
    return counts


def frequently_compared_recommend(
    anchor_id: str,
    counts: CoCompareCounts,
    n: int = 10,
) -> list[Recommendation]:
    """Partners ranked by co-comparison count, descending, ties by id.

    The similarity field carries the raw count, not a cosine; anchors
    with no partners get an empty list (the cold-start gap).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    partners = counts.partners.get(anchor_id)
    if not partners:
        return []
    ranked = sorted(partners.items(), key=lambda item: (-item[1], item[0]))[:n]
    return [
        Recommendation(anchor_id, product_id, float(count), rank)
        for rank, (product_id, count) in enumerate(ranked, start=1)
    ]
