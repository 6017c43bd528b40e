"""Co-compare graph: connected components and training-triple sampling.

Products that customers placed side by side in a comparison tool form an
undirected graph; its connected components are the positive-sampling
pools. Positives pair an anchor with another member of its component,
negatives pair it with a member of a different component, at a configured
negative ratio (default 1:3).
"""

from __future__ import annotations

import csv
import logging
import random
from dataclasses import dataclass

from .errors import DataError, NoNegativePoolError

logger = logging.getLogger(__name__)

DEFAULT_NEG_RATIO = 3
DEFAULT_POSITIVES_PER_ANCHOR = 1


@dataclass(frozen=True)
class ComparePair:
    """An unordered co-compared pair; ids are stored in sorted order."""

    product_id_1: str
    product_id_2: str

    def __post_init__(self):
        if self.product_id_1 == self.product_id_2:
            raise ValueError(f"self-pair {self.product_id_1!r}")
        if self.product_id_1 > self.product_id_2:
            first, second = self.product_id_2, self.product_id_1
            object.__setattr__(self, "product_id_1", first)
            object.__setattr__(self, "product_id_2", second)


@dataclass(frozen=True)
class ComponentSet:
    """Disjoint components of the co-compare graph.

    ``components`` are tuples of sorted product ids, ordered by their
    smallest member; ``membership`` maps every product to its component
    index.
    """

    components: tuple[tuple[str, ...], ...]
    membership: dict[str, int]

    def __len__(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class TrainingTriple:
    anchor_id: str
    other_id: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.anchor_id == self.other_id:
            raise ValueError(f"anchor and other are both {self.anchor_id!r}")


class UnionFind:
    """Disjoint sets over integer elements with path compression."""

    def __init__(self, size: int):
        self.parent = list(range(size))
        self.rank = [0] * size

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def iter_pair_lines(path):
    """Yield (id1, id2, flag) from a comma-separated pairs file.

    The three-column format is id1, id2, flag; a header line is permitted
    and skipped. Malformed lines are skipped with a warning; self-pairs
    are dropped with a warning. No deduplication happens here, so callers
    that need multiplicity see every surviving line.
    """
    try:
        handle = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open pairs file {path}: {exc}") from exc
    skipped = 0
    with handle:
        reader = csv.reader(handle)
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                logger.warning("pairs line %d: expected 3 columns, got %d; skipped", lineno, len(row))
                skipped += 1
                continue
            id1, id2, flag_text = (cell.strip() for cell in row)
            try:
                flag = int(flag_text)
            except ValueError:
                if lineno == 1:
                    continue  # header
                logger.warning("pairs line %d: bad flag %r; skipped", lineno, flag_text)
                skipped += 1
                continue
            if not id1 or not id2:
                logger.warning("pairs line %d: empty product id; skipped", lineno)
                skipped += 1
                continue
            if id1 == id2:
                logger.warning("pairs line %d: self-pair %r dropped", lineno, id1)
                continue
            yield id1, id2, flag
    if skipped:
        logger.warning("pairs load skipped %d malformed line(s)", skipped)


def load_pairs(path) -> list[ComparePair]:
    """Load co-compared pairs with flag 1, deduplicating unordered pairs."""
    seen: set[tuple[str, str]] = set()
    pairs: list[ComparePair] = []
    for id1, id2, flag in iter_pair_lines(path):
        if flag != 1:
            continue
        key = (id1, id2) if id1 < id2 else (id2, id1)
        if key in seen:
            continue
        seen.add(key)
        pairs.append(ComparePair(*key))
    return pairs


def connected_components(pairs: list[ComparePair]) -> ComponentSet:
    """Partition products into the connected components of the pair graph."""
    ids = sorted({pid for pair in pairs for pid in (pair.product_id_1, pair.product_id_2)})
    index = {pid: i for i, pid in enumerate(ids)}
    uf = UnionFind(len(ids))
    for pair in pairs:
        uf.union(index[pair.product_id_1], index[pair.product_id_2])
    groups: dict[int, list[str]] = {}
    for pid, i in index.items():
        groups.setdefault(uf.find(i), []).append(pid)
    components = sorted((tuple(sorted(group)) for group in groups.values()),
                        key=lambda comp: comp[0])
    membership = {pid: ci for ci, comp in enumerate(components) for pid in comp}
    return ComponentSet(components=tuple(components), membership=membership)


def sample_triples(
    components: ComponentSet,
    neg_ratio: int = DEFAULT_NEG_RATIO,
    seed: int = 0,
    positives_per_anchor: int = DEFAULT_POSITIVES_PER_ANCHOR,
) -> list[TrainingTriple]:
    """Sample labeled triples: positives within, negatives across components.

    For each product, each positive partner is drawn uniformly from the
    rest of its component; each negative is drawn by first picking a
    different component uniformly, then a product uniformly within it.
    Output is grouped by anchor with positives before negatives, and is
    deterministic given the seed. Exactly neg_ratio negatives are emitted
    per positive.
    """
    if neg_ratio < 1:
        raise ValueError("neg_ratio must be >= 1")
    if positives_per_anchor < 1:
        raise ValueError("positives_per_anchor must be >= 1")
    if len(components) < 2:
        raise NoNegativePoolError(
            f"negative sampling needs >= 2 components, got {len(components)}"
        )
    rng = random.Random(seed)
    comps = components.components
    triples: list[TrainingTriple] = []
    for ci, comp in enumerate(comps):
        for pi, anchor in enumerate(comp):
            positives = []
            negatives = []
            for _ in range(positives_per_anchor):
                qi = rng.randrange(len(comp) - 1)
                if qi >= pi:
                    qi += 1
                positives.append(TrainingTriple(anchor, comp[qi], 1))
                for _ in range(neg_ratio):
                    cj = rng.randrange(len(comps) - 1)
                    if cj >= ci:
                        cj += 1
                    other_comp = comps[cj]
                    negatives.append(
                        TrainingTriple(anchor, other_comp[rng.randrange(len(other_comp))], 0)
                    )
            triples.extend(positives)
            triples.extend(negatives)
    return triples


def split_train_validation(
    triples: list[TrainingTriple],
    val_fraction: float,
    seed: int = 0,
) -> tuple[list[TrainingTriple], list[TrainingTriple]]:
    """Deterministic stratified split preserving the class ratio.

    Each class contributes round(n * val_fraction) triples to validation,
    clamped so both splits keep at least one triple per class.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    positives = [t for t in triples if t.label == 1]
    negatives = [t for t in triples if t.label == 0]
    if len(positives) < 2 or len(negatives) < 2:
        raise DataError(
            "need at least 2 triples per class to split "
            f"(got {len(positives)} positive, {len(negatives)} negative)"
        )
    rng = random.Random(seed)
    train: list[TrainingTriple] = []
    validation: list[TrainingTriple] = []
    for group in (positives, negatives):
        shuffled = list(group)
        rng.shuffle(shuffled)
        n_val = min(max(round(len(group) * val_fraction), 1), len(group) - 1)
        validation.extend(shuffled[:n_val])
        train.extend(shuffled[n_val:])
    rng.shuffle(train)
    rng.shuffle(validation)
    return train, validation


def save_triples(triples: list[TrainingTriple], path) -> None:
    """Persist triples as comma-separated (anchor_id, other_id, label)."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["anchor_id", "other_id", "label"])
        for triple in triples:
            writer.writerow([triple.anchor_id, triple.other_id, triple.label])


def load_triples(path) -> list[TrainingTriple]:
    triples: list[TrainingTriple] = []
    try:
        handle = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open triples file {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"triples line {lineno}: expected 3 columns")
            anchor, other, label_text = (cell.strip() for cell in row)
            try:
                label = int(label_text)
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise DataError(f"triples line {lineno}: bad label {label_text!r}") from None
            triples.append(TrainingTriple(anchor, other, label))
    return triples
