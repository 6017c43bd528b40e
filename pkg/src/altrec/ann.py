"""Approximate cosine kNN over an embedding store, plus an exact oracle.

The index is a layered navigable-small-world proximity graph: every
vector lives at the base layer, exponentially fewer at each layer above,
and queries greedily descend from the top entry point before running a
best-first search with an ``ef``-sized candidate list at the base.

Distance is 1 - cosine similarity; vectors are L2-normalized once at
insertion so the inner loop is a dot product. All candidate ordering is
over (distance, node) tuples and level assignment is seeded, so builds
and queries are fully deterministic. Final similarities (and the exact
oracle) are computed with einsum row dots, which are bit-stable across
row subsets; with ef_search equal to the store size and a connected base
layer, the approximate search therefore returns exactly the oracle's
ranking.

Queries use a small exploration slack (epsilon) on top of the classic
greedy stop rule: expansion continues while candidates sit within
(1 + epsilon) of the worst kept result. On clustered embeddings the
bound stays tight and costs almost nothing; on weakly navigable data it
trades extra distance computations for recall.
"""

from __future__ import annotations

import heapq
import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from .embedding_store import EmbeddingStore
from .errors import DataError, StaleArtifactError, ZeroNormError

logger = logging.getLogger(__name__)

_INDEX_MAGIC = b"ALTHNSW1"
_INDEX_VERSION = 1

DEFAULT_M = 16
DEFAULT_EF_CONSTRUCTION = 200
DEFAULT_EF_SEARCH = 100
DEFAULT_SEARCH_EPSILON = 0.1
DEFAULT_TOP_N = 10
DEFAULT_THRESHOLD = 0.8


@dataclass(frozen=True)
class Recommendation:
    """One ranked neighbor for an anchor product.

    ``similarity`` is cosine similarity in [-1, 1] for embedding-based
    recommenders; the frequently-compared baseline reuses the field for
    its raw co-comparison count.
    """

    anchor_id: str
    neighbor_id: str
    similarity: float
    rank: int


def _normalize_vector(vector) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    norm = math.sqrt(float(np.dot(vector, vector)))
    if norm == 0.0:
        raise ZeroNormError("zero-norm query vector")
    return vector / norm


def _normalize_rows(matrix: np.ndarray, ids: list[str]) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormError(f"zero-norm vector for product {ids[zero[0]]!r}")
    return matrix / norms[:, None]


def _store_matrix(store: EmbeddingStore) -> tuple[list[str], np.ndarray]:
    ids = store.ids()
    matrix = np.empty((len(ids), store.dim))
    for row, product_id in enumerate(ids):
        vector = store.entries[product_id]
        if vector.shape != (store.dim,):
            raise DataError(
                f"vector for {product_id!r} has dim {vector.shape[0]}, store dim is {store.dim}"
            )
        matrix[row] = vector
    return ids, _normalize_rows(matrix, ids)


def _row_similarities(matrix: np.ndarray, rows, query: np.ndarray) -> np.ndarray:
    # einsum keeps per-row bits independent of which rows are scored
    return np.clip(np.einsum("ij,j->i", matrix[rows], query), -1.0, 1.0)


class AnnIndex:
    """Layered proximity graph over normalized embeddings."""

    def __init__(
        self,
        ids: list[str],
        matrix: np.ndarray,
        m: int,
        ef_construction: int,
        seed: int,
        source_fingerprint: str = "",
    ):
        self.ids = ids
        self.matrix = matrix
        self.m = m
        self.m0 = 2 * m
        self.ef_construction = ef_construction
        self.seed = seed
        self.source_fingerprint = source_fingerprint
        self.levels: list[int] = []
        self.neighbors: list[list[list[int]]] = []  # [node][layer] -> node list
        self.entry_point = -1
        self.max_level = -1

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def _distances(self, query: np.ndarray, nodes: list[int]) -> np.ndarray:
        return 1.0 - self.matrix[nodes] @ query

    def _search_layer(
        self,
        query: np.ndarray,
        entry_points: list[int],
        layer: int,
        ef: int,
        visited: np.ndarray,
        epsilon: float = 0.0,
    ) -> list[tuple[float, int]]:
        """Best-first search; returns up to ef (distance, node) ascending.

        ``epsilon`` widens the exploration radius: expansion continues
        while the closest pending candidate is within (1 + epsilon) of
        the worst kept result. Zero gives the classic greedy stop; a
        small positive value buys recall on weakly navigable data at the
        cost of extra distance computations, and leaves the returned set
        unchanged in the limit ef = index size.
        """
        visited[entry_points] = True
        dists = self._distances(query, entry_points)
        candidates = [(float(d), n) for d, n in zip(dists, entry_points)]
        heapq.heapify(candidates)
        results = [(-d, n) for d, n in candidates]
        heapq.heapify(results)
        radius_scale = 1.0 + epsilon
        while candidates:
            dist, node = heapq.heappop(candidates)
            if len(results) >= ef and dist > radius_scale * -results[0][0]:
                break
            links = np.asarray(self.neighbors[node][layer], dtype=np.intp)
            if links.size == 0:
                continue
            fresh = links[~visited[links]]
            if fresh.size == 0:
                continue
            visited[fresh] = True
            bound = radius_scale * -results[0][0]
            for neighbor_dist, neighbor in zip(self._distances(query, fresh), fresh.tolist()):
                neighbor_dist = float(neighbor_dist)
                if len(results) < ef:
                    heapq.heappush(candidates, (neighbor_dist, neighbor))
                    heapq.heappush(results, (-neighbor_dist, neighbor))
                elif neighbor_dist < -results[0][0]:
                    heapq.heappush(candidates, (neighbor_dist, neighbor))
                    heapq.heapreplace(results, (-neighbor_dist, neighbor))
                elif neighbor_dist <= bound:
                    heapq.heappush(candidates, (neighbor_dist, neighbor))
        return sorted((-neg, n) for neg, n in results)

    def _select_neighbors(self, candidates: list[tuple[float, int]], m: int) -> list[int]:
        """Diversity-aware selection: keep candidates closer to the query
        than to anything already selected; refill from the pruned pool."""
        ordered = sorted(candidates)
        if len(ordered) <= m:
            return [node for _, node in ordered]
        nodes = [node for _, node in ordered]
        sub = self.matrix[nodes]
        pairwise = 1.0 - sub @ sub.T
        min_to_selected = np.full(len(nodes), np.inf)
        selected: list[int] = []
        pruned: list[int] = []
        for ci, (dist, _) in enumerate(ordered):
            if len(selected) == m:
                break
            if selected and dist >= min_to_selected[ci]:
                pruned.append(ci)
                continue
            selected.append(ci)
            np.minimum(min_to_selected, pairwise[:, ci], out=min_to_selected)
        for ci in pruned:
            if len(selected) == m:
                break
            selected.append(ci)
        return [nodes[ci] for ci in selected]

    def _insert(self, node: int) -> None:
        level = self.levels[node]
        query = self.matrix[node]
        if self.entry_point < 0:
            self.entry_point = node
            self.max_level = level
            return
        visited = np.zeros(len(self.ids), dtype=bool)
        entry = [self.entry_point]
        for layer in range(self.max_level, level, -1):
            visited[:] = False
            entry = [self._search_layer(query, entry, layer, 1, visited)[0][1]]
        for layer in range(min(level, self.max_level), -1, -1):
            visited[:] = False
            candidates = self._search_layer(query, entry, layer, self.ef_construction, visited)
            # the new node links to at most m neighbors; lists may then grow
            # up to the layer cap (2m at the base) from incoming links
            cap = self.m0 if layer == 0 else self.m
            chosen = self._select_neighbors(candidates, self.m)
            self.neighbors[node][layer] = list(chosen)
            for neighbor in chosen:
                links = self.neighbors[neighbor][layer]
                links.append(node)
                if len(links) > cap:
                    link_dists = 1.0 - self.matrix[links] @ self.matrix[neighbor]
                    self.neighbors[neighbor][layer] = self._select_neighbors(
                        [(float(d), n) for d, n in zip(link_dists, links)], cap
                    )
            entry = [n for _, n in candidates]
        if level > self.max_level:
            self.entry_point = node
            self.max_level = level

    def _base_layer_reachable(self) -> np.ndarray:
        reached = np.zeros(len(self.ids), dtype=bool)
        stack = [self.entry_point]
        reached[self.entry_point] = True
        while stack:
            node = stack.pop()
            for neighbor in self.neighbors[node][0]:
                if not reached[neighbor]:
                    reached[neighbor] = True
                    stack.append(neighbor)
        return reached

    def _repair_connectivity(self) -> int:
        """Bridge any base-layer island to its nearest reachable node."""
        bridges = 0
        reached = self._base_layer_reachable()
        while not reached.all():
            orphan = int(np.flatnonzero(~reached)[0])
            reachable_nodes = np.flatnonzero(reached)
            sims = self.matrix[reachable_nodes] @ self.matrix[orphan]
            target = int(reachable_nodes[int(np.argmax(sims))])
            # the forward edge may already exist; the reverse one cannot,
            # or the orphan would have been reached
            if target not in self.neighbors[orphan][0]:
                self.neighbors[orphan][0].append(target)
            links = self.neighbors[target][0]
            links.append(orphan)
            if len(links) > self.m0:
                link_dists = 1.0 - self.matrix[links] @ self.matrix[target]
                kept = self._select_neighbors(
                    [(float(d), n) for d, n in zip(link_dists, links) if n != orphan],
                    self.m0 - 1,
                )
                self.neighbors[target][0] = kept + [orphan]
            bridges += 1
            reached = self._base_layer_reachable()
        return bridges


def build_index(
    store: EmbeddingStore,
    m: int = DEFAULT_M,
    ef_construction: int = DEFAULT_EF_CONSTRUCTION,
    seed: int = 0,
    source_fingerprint: str = "",
) -> AnnIndex:
    """Build the graph over every store entry, inserting in sorted-id order.

    Levels come from a seeded generator, so identical (store, parameters,
    seed) produce an identical index. The base layer is checked for
    connectivity and repaired with bridge edges if needed.
    """
    if len(store) == 0:
        raise DataError("cannot index an empty store")
    if m < 2:
        raise ValueError("m must be >= 2")
    ids, matrix = _store_matrix(store)
    index = AnnIndex(ids, matrix, m, ef_construction, seed, source_fingerprint)
    rng = np.random.default_rng(seed)
    ml = 1.0 / math.log(m)
    index.levels = [int(-math.log(1.0 - rng.random()) * ml) for _ in ids]
    index.neighbors = [[[] for _ in range(level + 1)] for level in index.levels]
    for node in range(len(ids)):
        index._insert(node)
    bridges = index._repair_connectivity()
    if bridges:
        logger.info("connectivity repair added %d bridge edge(s)", bridges)
    return index


def knn(
    index: AnnIndex,
    query,
    k: int,
    ef_search: int = DEFAULT_EF_SEARCH,
    epsilon: float = DEFAULT_SEARCH_EPSILON,
) -> list[tuple[str, float]]:
    """Approximate top-k by cosine similarity, descending, ties by id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if ef_search < k:
        raise ValueError("ef_search must be >= k")
    normalized = _normalize_vector(query)
    if normalized.shape[0] != index.dim:
        raise DataError(f"query dim {normalized.shape[0]} != index dim {index.dim}")
    visited = np.zeros(len(index), dtype=bool)
    entry = [index.entry_point]
    for layer in range(index.max_level, 0, -1):
        visited[:] = False
        entry = [index._search_layer(normalized, entry, layer, 1, visited)[0][1]]
    visited[:] = False
    found = index._search_layer(normalized, entry, 0, ef_search, visited, epsilon)
    nodes = [node for _, node in found]
    sims = _row_similarities(index.matrix, nodes, normalized)
    ranked = sorted(zip(nodes, sims), key=lambda item: (-item[1], item[0]))[:k]
    return [(index.ids[node], float(sim)) for node, sim in ranked]


def exact_knn(store: EmbeddingStore, query, k: int) -> list[tuple[str, float]]:
    """Exhaustive top-k oracle with the same scoring and tie-breaking."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ids, matrix = _store_matrix(store)
    normalized = _normalize_vector(query)
    if normalized.shape[0] != store.dim:
        raise DataError(f"query dim {normalized.shape[0]} != store dim {store.dim}")
    sims = _row_similarities(matrix, slice(None), normalized)
    order = np.argsort(-sims, kind="stable")[:k]
    return [(ids[int(row)], float(sims[row])) for row in order]


def top_n_recommendations(
    index: AnnIndex,
    store: EmbeddingStore,
    anchor_id: str,
    n: int = DEFAULT_TOP_N,
    threshold: float = DEFAULT_THRESHOLD,
    ef_search: int = DEFAULT_EF_SEARCH,
    epsilon: float = DEFAULT_SEARCH_EPSILON,
) -> list[Recommendation]:
    """Top-n alternatives for an anchor, keeping similarity >= threshold.

    Fetches n+1 neighbors so the anchor's own presence in the result
    never costs a slot, then filters and ranks. May be empty.
    """
    if anchor_id not in store.entries:
        raise DataError(f"unknown anchor {anchor_id!r}")
    k = n + 1
    found = knn(index, store.entries[anchor_id], k, max(ef_search, k), epsilon)
    recommendations = []
    for product_id, similarity in found:
        if product_id == anchor_id or similarity < threshold:
            continue
        recommendations.append(
            Recommendation(anchor_id, product_id, similarity, len(recommendations) + 1)
        )
        if len(recommendations) == n:
            break
    return recommendations


def save_index(index: AnnIndex, path) -> None:
    """Persist the graph, parameters, and source-store fingerprint."""
    fingerprint = bytes.fromhex(index.source_fingerprint) if index.source_fingerprint else b"\x00" * 32
    chunks = [
        _INDEX_MAGIC,
        struct.pack(
            "<IIQIIqii",
            _INDEX_VERSION,
            index.dim,
            len(index.ids),
            index.m,
            index.ef_construction,
            index.seed,
            index.entry_point,
            index.max_level,
        ),
        fingerprint,
    ]
    for product_id in index.ids:
        encoded = product_id.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
    chunks.append(np.array(index.levels, dtype="<u4").tobytes())
    chunks.append(np.ascontiguousarray(index.matrix, dtype="<f8").tobytes())
    for node_links in index.neighbors:
        chunks.append(struct.pack("<B", len(node_links)))
        for layer_links in node_links:
            chunks.append(struct.pack("<I", len(layer_links)))
            chunks.append(np.array(layer_links, dtype="<u4").tobytes())
    with open(path, "wb") as handle:
        handle.write(b"".join(chunks))


def load_index(path, expected_store_fingerprint: str | None = None) -> AnnIndex:
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as exc:
        raise DataError(f"cannot open index {path}: {exc}") from exc
    view = memoryview(blob)
    offset = 0

    def take(count: int) -> memoryview:
        nonlocal offset
        if offset + count > len(view):
            raise DataError(f"index {path} is truncated")
        chunk = view[offset : offset + count]
        offset += count
        return chunk

    if bytes(take(8)) != _INDEX_MAGIC:
        raise DataError(f"{path} is not an ANN index")
    version, dim, count, m, ef_construction, seed, entry_point, max_level = struct.unpack(
        "<IIQIIqii", take(40)
    )
    if version != _INDEX_VERSION:
        raise DataError(f"unsupported index version {version}")
    fingerprint = bytes(take(32)).hex()
    ids = []
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2))
        ids.append(bytes(take(id_len)).decode("utf-8"))
    levels = np.frombuffer(take(4 * count), dtype="<u4").astype(int).tolist()
    matrix = np.frombuffer(take(8 * count * dim), dtype="<f8").reshape(count, dim).copy()
    neighbors: list[list[list[int]]] = []
    for _ in range(count):
        (n_layers,) = struct.unpack("<B", take(1))
        node_links = []
        for _ in range(n_layers):
            (n_links,) = struct.unpack("<I", take(4))
            node_links.append(np.frombuffer(take(4 * n_links), dtype="<u4").astype(int).tolist())
        neighbors.append(node_links)
    if offset != len(view):
        raise DataError(f"index {path} has trailing bytes")
    index = AnnIndex(ids, matrix, m, ef_construction, seed, fingerprint)
    index.levels = levels
    index.neighbors = neighbors
    index.entry_point = entry_point
    index.max_level = max_level
    if expected_store_fingerprint is not None and fingerprint != expected_store_fingerprint:
        raise StaleArtifactError(
            f"index {path} was built from a different store "
            f"(fingerprint {fingerprint[:12]}..., expected {expected_store_fingerprint[:12]}...)"
        )
    return index
