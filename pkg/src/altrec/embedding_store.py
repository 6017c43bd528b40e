"""Export the single-branch encoder and persist catalog embeddings.

The store file is binary: a header (magic, version, dim, count, model
fingerprint) followed by records sorted by product_id, each holding the
id and the raw float64 vector. Vectors are persisted unnormalized;
normalization is the similarity layer's business.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .catalog import EncodedProduct
from .errors import DataError, DuplicateIdError, NumericalError, StaleArtifactError, ZeroNormError
from .neural.encoder import encode_product, encode_products
from .neural.model import SiameseModel

logger = logging.getLogger(__name__)

_STORE_MAGIC = b"ALTEMB01"
_STORE_VERSION = 1

DEFAULT_BATCH_SIZE = 256


@dataclass
class EmbeddingStore:
    """product_id -> vector map with the fingerprint of the producing model."""

    dim: int
    entries: dict[str, np.ndarray]
    model_fingerprint: str

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return sorted(self.entries)


class Encoder:
    """Single-branch projection over a trained model's shared weights.

    Holds a reference to the model; nothing is copied, so exporting is
    free and the encoder tracks any further parameter updates.
    """

    def __init__(self, model: SiameseModel):
        self._model = model

    @property
    def output_dim(self) -> int:
        return self._model.output_dim

    def __call__(self, product: EncodedProduct) -> np.ndarray:
        return encode_product(product, self._model)

    def encode_many(self, products) -> np.ndarray:
        vectors, _ = encode_products(self._model, products)
        return vectors


def export_encoder(model: SiameseModel) -> Encoder:
    """Drop the pair branch and the similarity layer; keep the projection."""
    return Encoder(model)


def generate_embeddings(
    encoder: Encoder,
    products: list[EncodedProduct],
    model_fingerprint: str = "",
    batch_size: int = DEFAULT_BATCH_SIZE,
    progress_every: int = 1000,
    threads: int = 1,
) -> EmbeddingStore:
    """Encode every product; deterministic, id-sorted output assembly.

    With threads > 1 the catalog is sharded across workers; each product
    is independent so the assembled store is identical either way.
    """
    if not products:
        raise DataError("no products to embed")
    ordered = sorted(products, key=lambda p: p.product_id)
    for first, second in zip(ordered, ordered[1:]):
        if first.product_id == second.product_id:
            raise DuplicateIdError(f"duplicate product_id {first.product_id!r}")

    batches = [ordered[i : i + batch_size] for i in range(0, len(ordered), batch_size)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            encoded_batches = list(pool.map(encoder.encode_many, batches))
    else:
        encoded_batches = []
        done = 0
        next_report = progress_every
        for batch in batches:
            encoded_batches.append(encoder.encode_many(batch))
            done += len(batch)
            if done >= next_report:
                logger.info("embedded %d/%d products", done, len(ordered))
                next_report += progress_every

    entries: dict[str, np.ndarray] = {}
    for batch, vectors in zip(batches, encoded_batches):
        for product, vector in zip(batch, vectors):
            if not np.all(np.isfinite(vector)):
                raise NumericalError(f"non-finite embedding for product {product.product_id!r}")
            if not np.any(vector):
                raise ZeroNormError(f"zero-norm embedding for product {product.product_id!r}")
            entries[product.product_id] = vector
    return EmbeddingStore(dim=encoder.output_dim, entries=entries, model_fingerprint=model_fingerprint)


def serialize_store(store: EmbeddingStore) -> bytes:
    """Canonical store bytes; save_store writes exactly these."""
    fingerprint = bytes.fromhex(store.model_fingerprint) if store.model_fingerprint else b"\x00" * 32
    if len(fingerprint) != 32:
        raise ValueError("model_fingerprint must be a hex SHA-256")
    chunks = [
        _STORE_MAGIC,
        struct.pack("<IIQ", _STORE_VERSION, store.dim, len(store.entries)),
        fingerprint,
    ]
    for product_id in sorted(store.entries):
        vector = store.entries[product_id]
        if vector.shape != (store.dim,):
            raise ValueError(f"vector for {product_id!r} has shape {vector.shape}")
        encoded_id = product_id.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded_id)))
        chunks.append(encoded_id)
        chunks.append(np.ascontiguousarray(vector, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_store(store: EmbeddingStore, path) -> None:
    with open(path, "wb") as handle:
        handle.write(serialize_store(store))


def load_store(path, expected_fingerprint: str | None = None) -> EmbeddingStore:
    """Read a store file; optionally verify the producing model's fingerprint."""
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as exc:
        raise DataError(f"cannot open embedding store {path}: {exc}") from exc
    view = memoryview(blob)
    offset = 0

    def take(count: int) -> memoryview:
        nonlocal offset
        if offset + count > len(view):
            raise DataError(f"embedding store {path} is truncated")
        chunk = view[offset : offset + count]
        offset += count
        return chunk

    if bytes(take(8)) != _STORE_MAGIC:
        raise DataError(f"{path} is not an embedding store")
    version, dim, count = struct.unpack("<IIQ", take(16))
    if version != _STORE_VERSION:
        raise DataError(f"unsupported store version {version}")
    fingerprint = bytes(take(32)).hex()
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2))
        product_id = bytes(take(id_len)).decode("utf-8")
        vector = np.frombuffer(take(8 * dim), dtype="<f8").copy()
        if not np.all(np.isfinite(vector)) or not np.any(vector):
            raise DataError(f"store {path}: invalid vector for {product_id!r}")
        if product_id in entries:
            raise DuplicateIdError(f"store {path}: duplicate product_id {product_id!r}")
        entries[product_id] = vector
    if offset != len(view):
        raise DataError(f"embedding store {path} has trailing bytes")
    store = EmbeddingStore(dim=dim, entries=entries, model_fingerprint=fingerprint)
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise StaleArtifactError(
            f"embedding store {path} was produced by a different model "
            f"(fingerprint {fingerprint[:12]}..., expected {expected_fingerprint[:12]}...)"
        )
    return store


def store_fingerprint(store: EmbeddingStore) -> str:
    """Hex SHA-256 of the canonical store bytes."""
    import hashlib

    return hashlib.sha256(serialize_store(store)).hexdigest()


def export_text(store: EmbeddingStore, path) -> None:
    """Debug export: one line per product, 17 significant digits per value."""
    with open(path, "w", encoding="utf-8") as handle:
        for product_id in sorted(store.entries):
            values = ",".join(f"{x:.17g}" for x in store.entries[product_id])
            handle.write(f"{product_id},{values}\n")
