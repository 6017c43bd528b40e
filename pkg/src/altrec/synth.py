"""Synthetic desk-scale corpus: catalog, co-compare pairs, sessions,
attributes, and the attribute schema.

Products are grouped into families with disjoint core noun pools (shared
function words, brands, and units provide realistic overlap), so family
membership is learnable from text alone. Product ids are assigned
family-contiguously: product P000123 with 250 products per family
belongs to family 123 // 250.

Per family, a configurable fraction of products never appears in any
co-compared pair (the cold-start population) and a fraction carries no
attributes (the attribute-coverage gap). The compared subset of each
family is wired into a single connected component via a shuffled chain
plus extra random edges, with line multiplicity so co-compare counts
vary.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path

DEFAULT_FAMILIES = 4
DEFAULT_PRODUCTS_PER_FAMILY = 250
DEFAULT_SEED = 7
DEFAULT_MISSING_ATTR_FRACTION = 0.4
DEFAULT_UNCOMPARED_FRACTION = 0.3
DEFAULT_SESSIONS = 500
DEFAULT_FAMILY_PURCHASE_PROB = 0.9

_STEMS = [
    "compressor", "drill", "mower", "fridge", "saw", "heater", "vacuum",
    "blender", "router", "welder", "sander", "grinder", "winch", "chipper",
    "lathe", "shredder",
]
_NOUN_SUFFIXES = ["", "pro", "max", "head", "core", "kit", "line", "plus", "flex", "tech"]
_FUNCTION_WORDS = [
    "the", "with", "for", "and", "of", "in", "premium", "heavy", "duty",
    "series", "model", "home", "quality", "new", "improved", "design",
    "easy", "value", "grade", "rated",
]
_BRANDS = ["acme", "apex", "nova", "zenith", "orbit", "vertex", "delta", "crown"]
_UNITS = ["gal", "psi", "watt", "volt", "inch", "amp"]
_COLORS = ["red", "blue", "green", "black", "silver", "white"]


@dataclass
class SynthSummary:
    catalog_path: Path
    pairs_path: Path
    sessions_path: Path
    attributes_path: Path
    schema_path: Path
    families: int
    products_per_family: int
    n_products: int
    n_pair_lines: int
    n_sessions: int
    n_attributed: int
    n_compared: int


def family_stem(family: int) -> str:
    return _STEMS[family] if family < len(_STEMS) else f"unit{family}"


def family_of(product_id: str, products_per_family: int) -> int:
    return int(product_id[1:]) // products_per_family


def _family_nouns(family: int) -> list[str]:
    stem = family_stem(family)
    return [stem + suffix for suffix in _NOUN_SUFFIXES]


def _title(rng: random.Random, nouns: list[str]) -> str:
    parts = [
        rng.choice(_BRANDS),
        str(rng.choice([15, 20, 25, 40, 60, 80, 120])),
        rng.choice(_UNITS),
        rng.choice(nouns),
        rng.choice(nouns),
    ]
    return " ".join(parts)


def _description(rng: random.Random, nouns: list[str]) -> str:
    length = rng.randint(25, 50)
    words = []
    for _ in range(length):
        roll = rng.random()
        if roll < 0.55:
            words.append(rng.choice(nouns))
        elif roll < 0.9:
            words.append(rng.choice(_FUNCTION_WORDS))
        else:
            words.append(str(rng.randint(1, 200)))
    return " ".join(words)


def generate_corpus(
    out_dir,
    families: int = DEFAULT_FAMILIES,
    products_per_family: int = DEFAULT_PRODUCTS_PER_FAMILY,
    seed: int = DEFAULT_SEED,
    missing_attr_fraction: float = DEFAULT_MISSING_ATTR_FRACTION,
    uncompared_fraction: float = DEFAULT_UNCOMPARED_FRACTION,
    sessions: int = DEFAULT_SESSIONS,
    family_purchase_prob: float = DEFAULT_FAMILY_PURCHASE_PROB,
) -> SynthSummary:
    """Write the five corpus files into out_dir; deterministic given seed."""
    if families < 2:
        raise ValueError("families must be >= 2")
    if products_per_family < 2:
        raise ValueError("products_per_family must be >= 2")
    if not 0.0 <= missing_attr_fraction < 1.0 or not 0.0 <= uncompared_fraction < 1.0:
        raise ValueError("fractions must be in [0, 1)")
    compared_per_family = products_per_family - round(products_per_family * uncompared_fraction)
    if compared_per_family < 2:
        raise ValueError("too few compared products per family; lower uncompared_fraction")
    attributed_per_family = products_per_family - round(products_per_family * missing_attr_fraction)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)

    ids = [f"P{i:06d}" for i in range(families * products_per_family)]
    members = [
        ids[f * products_per_family : (f + 1) * products_per_family] for f in range(families)
    ]
    noun_pools = [_family_nouns(f) for f in range(families)]

    catalog_path = out_dir / "catalog.jsonl"
    with open(catalog_path, "w", encoding="utf-8") as handle:
        for f in range(families):
            for product_id in members[f]:
                record = {
                    "product_id": product_id,
                    "title": _title(rng, noun_pools[f]),
                    "description": _description(rng, noun_pools[f]),
                }
                handle.write(json.dumps(record, sort_keys=True) + "\n")

    pairs_path = out_dir / "pairs.csv"
    n_pair_lines = 0
    with open(pairs_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["product_id_1", "product_id_2", "co_compared"])
        for f in range(families):
            compared = rng.sample(members[f], compared_per_family)
            edges = list(zip(compared, compared[1:]))  # chain keeps one component
            for _ in range(compared_per_family // 2):
                a, b = rng.sample(compared, 2)
                edges.append((a, b))
            for a, b in edges:
                for _ in range(rng.randint(1, 3)):
                    writer.writerow([a, b, 1])
                    n_pair_lines += 1
                if rng.random() < 0.05:
                    writer.writerow([a, b, 0])  # viewed together, not co-compared
                    n_pair_lines += 1

    sessions_path = out_dir / "sessions.csv"
    with open(sessions_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        for s in range(sessions):
            anchor = rng.choice(ids)
            anchor_family = family_of(anchor, products_per_family)
            purchased = set()
            for _ in range(rng.randint(1, 3)):
                if rng.random() < family_purchase_prob:
                    pool = members[anchor_family]
                else:
                    other = rng.randrange(families - 1)
                    if other >= anchor_family:
                        other += 1
                    pool = members[other]
                candidate = rng.choice(pool)
                if candidate != anchor:
                    purchased.add(candidate)
            if not purchased:
                fallback = members[anchor_family]
                candidate = rng.choice([p for p in fallback if p != anchor])
                purchased.add(candidate)
            writer.writerow([f"S{s:05d}", anchor, "|".join(sorted(purchased))])

    schema_path = out_dir / "schema.csv"
    with open(schema_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["category", "categorical", "|".join(family_stem(f) for f in range(families))])
        writer.writerow(["color", "categorical", "|".join(_COLORS)])
        writer.writerow(["capacity", "numerical", "10", "100"])
        writer.writerow(["weight", "numerical", "1", "50"])

    attributes_path = out_dir / "attributes.csv"
    n_attributed = 0
    with open(attributes_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        for f in range(families):
            for product_id in sorted(rng.sample(members[f], attributed_per_family)):
                writer.writerow([product_id, "category", family_stem(f)])
                writer.writerow([product_id, "color", rng.choice(_COLORS)])
                writer.writerow([product_id, "capacity", f"{rng.uniform(10, 100):.1f}"])
                writer.writerow([product_id, "weight", f"{rng.uniform(1, 50):.1f}"])
                n_attributed += 1

    return SynthSummary(
        catalog_path=catalog_path,
        pairs_path=pairs_path,
        sessions_path=sessions_path,
        attributes_path=attributes_path,
        schema_path=schema_path,
        families=families,
        products_per_family=products_per_family,
        n_products=len(ids),
        n_pair_lines=n_pair_lines,
        n_sessions=sessions,
        n_attributed=n_attributed,
        n_compared=compared_per_family * families,
    )
