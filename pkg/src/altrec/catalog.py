"""Product catalog ingestion, tokenization, and fixed-length integer encoding.

The catalog file is line-delimited JSON, one object per line with string
fields ``product_id``, ``title``, and ``description``. Extra fields are
ignored, so attribute data may ride along in the same file.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass

from .errors import DataError, DuplicateIdError

logger = logging.getLogger(__name__)

PAD_INDEX = 0
OOV_INDEX = 1

DEFAULT_TITLE_LEN = 16
DEFAULT_DESC_LEN = 96
DEFAULT_MIN_COUNT = 2

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class Product:
    """One raw catalog entry."""

    product_id: str
    title: str
    description: str


@dataclass(frozen=True)
class Vocabulary:
    """Token-to-index mapping with indices 0 and 1 reserved for PAD and OOV.

    ``token_to_index`` holds only real tokens (indices start at 2); every
    stored token appeared at least ``min_count`` times in the corpus the
    vocabulary was built from.
    """

    token_to_index: dict[str, int]
    min_count: int

    @property
    def size(self) -> int:
        return len(self.token_to_index) + 2

    def index_of(self, token: str) -> int:
        return self.token_to_index.get(token, OOV_INDEX)


@dataclass(frozen=True)
class EncodedProduct:
    """A product as two fixed-length index sequences plus true lengths.

    Positions at or beyond the recorded length are PAD (0). Sequences are
    stored as tuples so encoded products are hashable and immutable.
    """

    product_id: str
    title_seq: tuple[int, ...]
    title_len: int
    desc_seq: tuple[int, ...]
    desc_len: int


def tokenize(text: str) -> list[str]:
    """Lowercase and split on maximal runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def load_catalog(path) -> list[Product]:
    """Read a line-delimited JSON catalog file, preserving file order.

    Malformed lines (bad JSON, missing or empty required fields) are
    skipped with a logged warning carrying the line number. A repeated
    product_id aborts the load.
    """
    products: list[Product] = []
    seen: set[str] = set()
    skipped = 0
    try:
        handle = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open catalog file {path}: {exc}") from exc
    with handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                logger.warning("catalog line %d: invalid JSON (%s); skipped", lineno, exc)
                skipped += 1
                continue
            problem = _validate_record(record)
            if problem:
                logger.warning("catalog line %d: %s; skipped", lineno, problem)
                skipped += 1
                continue
            product_id = record["product_id"]
            if product_id in seen:
                raise DuplicateIdError(
                    f"catalog line {lineno}: duplicate product_id {product_id!r}"
                )
            seen.add(product_id)
            products.append(
                Product(product_id, record["title"], record["description"])
            )
    if skipped:
        logger.warning("catalog load skipped %d malformed line(s)", skipped)
    return products


def _validate_record(record) -> str | None:
    if not isinstance(record, dict):
        return "record is not an object"
    for field_name in ("product_id", "title", "description"):
        value = record.get(field_name)
        if not isinstance(value, str):
            return f"missing or non-string field {field_name!r}"
    if not record["product_id"]:
        return "empty product_id"
    if not record["title"]:
        return "empty title"
    return None


def build_vocabulary(products: list[Product], min_count: int = DEFAULT_MIN_COUNT) -> Vocabulary:
    """Count tokens over all titles and descriptions and keep frequent ones.

    Tokens with count >= min_count receive indices from 2 upward in
    descending count order, ties broken lexicographically. An empty corpus
    yields a vocabulary holding only the reserved PAD/OOV slots.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for product in products:
        counts.update(tokenize(product.title))
        counts.update(tokenize(product.description))
    kept = [(token, count) for token, count in counts.items() if count >= min_count]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return Vocabulary(
        token_to_index={token: index for index, (token, _) in enumerate(kept, start=2)},
        min_count=min_count,
    )


def vocabulary_fingerprint(vocab: Vocabulary) -> bytes:
    """SHA-256 digest of the vocabulary contents (32 bytes)."""
    payload = json.dumps(
        {"min_count": vocab.min_count, "tokens": sorted(vocab.token_to_index.items())},
        separators=(",", ":"),
    ).encode("utf-8")
    return hashlib.sha256(payload).digest()


def save_vocabulary(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(
            {"min_count": vocab.min_count, "token_to_index": vocab.token_to_index},
            handle,
            sort_keys=True,
            indent=None,
            separators=(",", ":"),
        )
        handle.write("\n")


def load_vocabulary(path) -> Vocabulary:
    try:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise DataError(f"cannot open vocabulary file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"vocabulary file {path} is not valid JSON: {exc}") from exc
    return Vocabulary(
        token_to_index={str(k): int(v) for k, v in payload["token_to_index"].items()},
        min_count=int(payload["min_count"]),
    )


def encode_product_text(
    product: Product,
    vocab: Vocabulary,
    l_title: int = DEFAULT_TITLE_LEN,
    l_desc: int = DEFAULT_DESC_LEN,
) -> EncodedProduct:
    """Tokenize, map through the vocabulary, truncate, and right-pad.

    Unknown tokens map to OOV. Either field tokenizing to nothing is an
    error: the downstream sequence encoders require at least one token.
    """
    if l_title < 1 or l_desc < 1:
        raise ValueError("sequence lengths must be >= 1")
    title_seq, title_len = _encode_field(product.title, vocab, l_title)
    if title_len == 0:
        raise DataError(f"product {product.product_id!r}: title has no tokens")
    desc_seq, desc_len = _encode_field(product.description, vocab, l_desc)
    if desc_len == 0:
        raise DataError(f"product {product.product_id!r}: description has no tokens")
    return EncodedProduct(product.product_id, title_seq, title_len, desc_seq, desc_len)


def _encode_field(text: str, vocab: Vocabulary, length: int) -> tuple[tuple[int, ...], int]:
    indices = [vocab.index_of(token) for token in tokenize(text)][:length]
    true_len = len(indices)
    indices.extend([PAD_INDEX] * (length - true_len))
    return tuple(indices), true_len


def encode_catalog(
    products: list[Product],
    vocab: Vocabulary,
    l_title: int = DEFAULT_TITLE_LEN,
    l_desc: int = DEFAULT_DESC_LEN,
) -> dict[str, EncodedProduct]:
    """Encode a whole catalog into a product_id -> EncodedProduct map."""
    encoded: dict[str, EncodedProduct] = {}
    for product in products:
        if product.product_id in encoded:
            raise DuplicateIdError(f"duplicate product_id {product.product_id!r}")
        encoded[product.product_id] = encode_product_text(product, vocab, l_title, l_desc)
    return encoded
