"""Model parameters, initialization, and checkpoint serialization.

The Siamese network has no per-branch parameters: both branches read the
same embedding table and the same pair of Bidirectional LSTM encoders
(one for titles, one for descriptions), so weight sharing is structural.
The product embedding is title-hidden (2h) concatenated with
description-hidden (2h), i.e. 4 * hidden_dim wide.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import DataError

# Gate slices within the stacked 4h dimension, in fixed order.
GATE_ORDER = ("input", "forget", "cell", "output")

_CHECKPOINT_MAGIC = b"ALTSIAM1"
_CHECKPOINT_VERSION = 1


@dataclass
class LstmParams:
    """One LSTM direction: stacked gate weights in GATE_ORDER."""

    w_input: np.ndarray  # (4h, embed_dim)
    w_recurrent: np.ndarray  # (4h, h)
    bias: np.ndarray  # (4h,)

    @property
    def hidden_dim(self) -> int:
        return self.w_recurrent.shape[1]


@dataclass
class BiLstmLayer:
    """Independent forward and backward LSTM parameter sets."""

    forward: LstmParams
    backward: LstmParams
    hidden_dim: int


@dataclass
class SiameseModel:
    embedding: np.ndarray  # (vocab_size, embed_dim)
    title_encoder: BiLstmLayer
    desc_encoder: BiLstmLayer
    embed_dim: int
    hidden_dim: int
    # Affine head feeding the sigmoid of the cross-entropy loss variant;
    # untouched by the contrastive loss.
    bce_scale: np.ndarray  # shape (1,)
    bce_bias: np.ndarray  # shape (1,)

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def output_dim(self) -> int:
        return 4 * self.hidden_dim

    def parameters(self) -> dict[str, np.ndarray]:
        """All trainable arrays in a fixed, documented order."""
        params: dict[str, np.ndarray] = {"embedding": self.embedding}
        for field_name, layer in (("title", self.title_encoder), ("desc", self.desc_encoder)):
            for direction_name, direction in (("forward", layer.forward), ("backward", layer.backward)):
                prefix = f"{field_name}.{direction_name}"
                params[f"{prefix}.w_input"] = direction.w_input
                params[f"{prefix}.w_recurrent"] = direction.w_recurrent
                params[f"{prefix}.bias"] = direction.bias
        params["bce_scale"] = self.bce_scale
        params["bce_bias"] = self.bce_bias
        return params

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: array.copy() for name, array in self.parameters().items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, array in self.parameters().items():
            array[...] = snapshot[name]


def zero_gradients(model: SiameseModel) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(array) for name, array in model.parameters().items()}


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    scale = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-scale, scale, size=shape)


def _init_direction(rng: np.random.Generator, embed_dim: int, hidden_dim: int) -> LstmParams:
    bias = np.zeros(4 * hidden_dim)
    bias[hidden_dim : 2 * hidden_dim] = 1.0  # forget gate opens at init
    return LstmParams(
        w_input=_glorot(rng, (4 * hidden_dim, embed_dim)),
        w_recurrent=_glorot(rng, (4 * hidden_dim, hidden_dim)),
        bias=bias,
    )


def init_model(vocab_size: int, embed_dim: int, hidden_dim: int, seed: int) -> SiameseModel:
    """Deterministically initialize all parameters.

    Matrices are Glorot-uniform; the PAD embedding row is zeroed and stays
    zero because its gradient is masked throughout training.
    """
    if min(vocab_size, embed_dim, hidden_dim) < 1:
        raise ValueError("vocab_size, embed_dim, hidden_dim must all be >= 1")
    rng = np.random.default_rng(seed)
    embedding = _glorot(rng, (vocab_size, embed_dim))
    embedding[0, :] = 0.0
    title_encoder = BiLstmLayer(
        forward=_init_direction(rng, embed_dim, hidden_dim),
        backward=_init_direction(rng, embed_dim, hidden_dim),
        hidden_dim=hidden_dim,
    )
    desc_encoder = BiLstmLayer(
        forward=_init_direction(rng, embed_dim, hidden_dim),
        backward=_init_direction(rng, embed_dim, hidden_dim),
        hidden_dim=hidden_dim,
    )
    return SiameseModel(
        embedding=embedding,
        title_encoder=title_encoder,
        desc_encoder=desc_encoder,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        bce_scale=np.ones(1),
        bce_bias=np.zeros(1),
    )


def serialize_model(model: SiameseModel, vocab_hash: bytes) -> bytes:
    """Canonical checkpoint bytes: header, vocab hash, then every tensor.

    Tensors are written in parameters() order as little-endian float64,
    each preceded by its name and shape, so save -> load -> save is
    byte-identical.
    """
    if len(vocab_hash) != 32:
        raise ValueError("vocab_hash must be a 32-byte digest")
    chunks = [
        _CHECKPOINT_MAGIC,
        struct.pack("<IIII", _CHECKPOINT_VERSION, model.vocab_size, model.embed_dim, model.hidden_dim),
        vocab_hash,
    ]
    params = model.parameters()
    chunks.append(struct.pack("<I", len(params)))
    for name, array in params.items():
        encoded_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(chunks)


def model_fingerprint(model: SiameseModel, vocab_hash: bytes) -> str:
    """Hex SHA-256 of the canonical checkpoint bytes."""
    return hashlib.sha256(serialize_model(model, vocab_hash)).hexdigest()


def save_checkpoint(model: SiameseModel, vocab_hash: bytes, path) -> None:
    with open(path, "wb") as handle:
        handle.write(serialize_model(model, vocab_hash))


def load_checkpoint(path) -> tuple[SiameseModel, bytes]:
    """Read a checkpoint; returns the model and the stored vocabulary hash."""
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as exc:
        raise DataError(f"cannot open checkpoint {path}: {exc}") from exc
    view = memoryview(blob)
    offset = 0

    def take(count: int) -> memoryview:
        nonlocal offset
        if offset + count > len(view):
            raise DataError(f"checkpoint {path} is truncated")
        chunk = view[offset : offset + count]
        offset += count
        return chunk

    if bytes(take(8)) != _CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a model checkpoint")
    version, vocab_size, embed_dim, hidden_dim = struct.unpack("<IIII", take(16))
    if version != _CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    vocab_hash = bytes(take(32))
    (n_params,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).copy()
        tensors[name] = data
    if offset != len(view):
        raise DataError(f"checkpoint {path} has trailing bytes")

    def direction(prefix: str) -> LstmParams:
        try:
            return LstmParams(
                w_input=tensors[f"{prefix}.w_input"],
                w_recurrent=tensors[f"{prefix}.w_recurrent"],
                bias=tensors[f"{prefix}.bias"],
            )
        except KeyError as exc:
            raise DataError(f"checkpoint {path} is missing tensor {exc}") from exc

    try:
        model = SiameseModel(
            embedding=tensors["embedding"],
            title_encoder=BiLstmLayer(direction("title.forward"), direction("title.backward"), hidden_dim),
            desc_encoder=BiLstmLayer(direction("desc.forward"), direction("desc.backward"), hidden_dim),
            embed_dim=embed_dim,
            hidden_dim=hidden_dim,
            bce_scale=tensors["bce_scale"],
            bce_bias=tensors["bce_bias"],
        )
    except KeyError as exc:
        raise DataError(f"checkpoint {path} is missing tensor {exc}") from exc
    if model.vocab_size != vocab_size or model.embedding.shape[1] != embed_dim:
        raise DataError(f"checkpoint {path} header disagrees with tensor shapes")
    return model, vocab_hash
