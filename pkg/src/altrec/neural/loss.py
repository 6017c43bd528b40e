"""Cosine energy between branch embeddings and the pairwise losses.

Two loss kinds sit behind one switch: the contrastive loss (pull positive
pairs toward energy 1, push positive-energy negatives toward 0) and a
binary cross-entropy variant that feeds the energy through a learned
affine transform and a sigmoid. Batch losses are sums over instances;
gradients are exact, with subgradient 0 at the contrastive kinks.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericalError, ZeroNormError
from .encoder import encode_products, encode_products_backward
from .model import SiameseModel, zero_gradients

CONTRASTIVE = "contrastive"
BINARY_CROSS_ENTROPY = "binary_cross_entropy"
LOSS_KINDS = (CONTRASTIVE, BINARY_CROSS_ENTROPY)

_PROB_FLOOR = 1e-12


def cosine_energy(u, v) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    norm_sq_u = float(np.dot(u, u))
    norm_sq_v = float(np.dot(v, v))
    if norm_sq_u == 0.0 or norm_sq_v == 0.0:
        raise ZeroNormError("cosine energy is undefined for a zero-norm vector")
    energy = float(np.dot(u, v)) / math.sqrt(norm_sq_u * norm_sq_v)
    return min(1.0, max(-1.0, energy))


def positive_loss(energy: float) -> float:
    """Loss term for a positive pair: |1 - E|."""
    return abs(1.0 - energy)


def negative_loss(energy: float) -> float:
    """Loss term for a negative pair: |E| when E > 0, else 0."""
    return abs(energy) if energy > 0.0 else 0.0


def contrastive_loss(energy: float, label: int) -> float:
    """Instance loss: label * positive term + (1 - label) * negative term."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    return positive_loss(energy) if label == 1 else negative_loss(energy)


def _sigmoid_scalar(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    expz = math.exp(z)
    return expz / (1.0 + expz)


def _bce_instance(energy: float, label: int, scale: float, bias: float) -> float:
    p = _sigmoid_scalar(scale * energy + bias)
    p = min(max(p, _PROB_FLOOR), 1.0 - _PROB_FLOOR)
    return -(label * math.log(p) + (1 - label) * math.log(1.0 - p))


def _check_loss_kind(loss_kind: str) -> None:
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {loss_kind!r}")


def _split_batch(batch):
    if not batch:
        raise ValueError("batch must be non-empty")
    anchors, others, labels = [], [], []
    for anchor, other, label in batch:
        if label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {label!r}")
        anchors.append(anchor)
        others.append(other)
        labels.append(label)
    return anchors, others, labels


def _instance_losses(energies, labels, model: SiameseModel, loss_kind: str) -> list[float]:
    if loss_kind == CONTRASTIVE:
        return [contrastive_loss(e, y) for e, y in zip(energies, labels)]
    scale = float(model.bce_scale[0])
    bias = float(model.bce_bias[0])
    return [_bce_instance(e, y, scale, bias) for e, y in zip(energies, labels)]


def batch_loss(batch, model: SiameseModel, loss_kind: str = CONTRASTIVE) -> float:
    """Sum of instance losses over (anchor, other, label) triples.

    Instance energies go through the same scalar path as cosine_energy on
    single encodings, and the sum is exact (math.fsum), so the batch loss
    equals the exact sum of the individually computed instance losses.
    """
    _check_loss_kind(loss_kind)
    anchors, others, labels = _split_batch(batch)
    vectors, _ = encode_products(model, anchors + others)
    n = len(anchors)
    energies = [cosine_energy(vectors[i], vectors[n + i]) for i in range(n)]
    return math.fsum(_instance_losses(energies, labels, model, loss_kind))


def compute_gradients(
    batch,
    model: SiameseModel,
    loss_kind: str = CONTRASTIVE,
) -> tuple[float, dict[str, np.ndarray]]:
    """Exact gradients of batch_loss for every parameter.

    Returns (loss, gradients). At the contrastive kinks (E = 1 for
    positives, E = 0 for negatives) the flat-side subgradient 0 is used.
    The PAD embedding row's gradient is forced to zero.
    """
    _check_loss_kind(loss_kind)
    anchors, others, labels = _split_batch(batch)
    vectors, caches = encode_products(model, anchors + others, keep_cache=True)
    n = len(anchors)
    u = vectors[:n]
    v = vectors[n:]
    energies = [cosine_energy(u[i], v[i]) for i in range(n)]
    losses = _instance_losses(energies, labels, model, loss_kind)

    label_arr = np.array(labels, dtype=np.float64)
    energy_arr = np.array(energies)
    grads = zero_gradients(model)
    if loss_kind == CONTRASTIVE:
        d_energy = np.where(
            label_arr == 1.0,
            np.where(energy_arr < 1.0, -1.0, 0.0),
            np.where(energy_arr > 0.0, 1.0, 0.0),
        )
    else:
        scale = float(model.bce_scale[0])
        bias = float(model.bce_bias[0])
        z = scale * energy_arr + bias
        with np.errstate(over="ignore"):
            p = 1.0 / (1.0 + np.exp(-z))
        residual = p - label_arr
        d_energy = residual * scale
        grads["bce_scale"][0] = float(np.dot(residual, energy_arr))
        grads["bce_bias"][0] = float(residual.sum())

    norm_sq_u = np.einsum("ij,ij->i", u, u)
    norm_sq_v = np.einsum("ij,ij->i", v, v)
    inner = np.einsum("ij,ij->i", u, v)
    denom = np.sqrt(norm_sq_u * norm_sq_v)
    d_u = d_energy[:, None] * (v / denom[:, None] - (inner / (norm_sq_u * denom))[:, None] * u)
    d_v = d_energy[:, None] * (u / denom[:, None] - (inner / (norm_sq_v * denom))[:, None] * v)
    d_vectors = np.concatenate([d_u, d_v], axis=0)
    encode_products_backward(d_vectors, caches, model, grads)

    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    return math.fsum(losses), grads
