"""Masked Bidirectional LSTM encoding with exact backpropagation.

Sequences are processed in padded batches, but padding positions are
masked by true length: they contribute nothing to the output or to any
gradient, so garbage beyond a sequence's length is unobservable.

Every matrix product runs on a fixed number of rows (_CHUNK): BLAS can
produce last-ulp differences between otherwise identical rows when the
operand shapes change, and padding each batch to a constant shape makes a
product's encoding bit-independent of its batchmates. The loss-additivity
and encoder-export contracts rely on that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..catalog import PAD_INDEX, EncodedProduct
from .model import BiLstmLayer, LstmParams, SiameseModel

_CHUNK = 128


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp may overflow for very negative inputs; the result saturates to 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _reverse_valid(seqs: np.ndarray, lens: np.ndarray) -> np.ndarray:
    """Reverse each row's first ``len`` entries; PAD everything after."""
    positions = lens[:, None] - 1 - np.arange(seqs.shape[1])[None, :]
    valid = positions >= 0
    gathered = np.take_along_axis(seqs, np.where(valid, positions, 0), axis=1)
    return np.where(valid, gathered, PAD_INDEX)


@dataclass
class _DirectionCache:
    h_prev: np.ndarray  # (B,T,h) hidden state entering each step
    c_prev: np.ndarray
    gate_i: np.ndarray
    gate_f: np.ndarray
    gate_g: np.ndarray
    gate_o: np.ndarray
    tanh_c: np.ndarray  # tanh of the unmasked candidate cell state


def _run_direction(
    x: np.ndarray,
    mask: np.ndarray,
    params: LstmParams,
    keep_cache: bool,
) -> tuple[np.ndarray, _DirectionCache | None]:
    """One LSTM direction over (B,T,e) inputs; returns the final hidden state.

    The state of a row freezes once its mask runs out, so the value after
    the last step is the hidden state after the last unmasked token.
    """
    batch, steps, embed_dim = x.shape
    hidden = params.hidden_dim
    zx = x.reshape(batch * steps, embed_dim) @ params.w_input.T
    zx += params.bias
    zx = zx.reshape(batch, steps, 4 * hidden)
    wr_t = np.ascontiguousarray(params.w_recurrent.T)

    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    cache = None
    if keep_cache:
        cache = _DirectionCache(*(np.empty((batch, steps, hidden)) for _ in range(7)))
    for t in range(steps):
        z = zx[:, t, :] + h @ wr_t
        gate_i = _sigmoid(z[:, :hidden])
        gate_f = _sigmoid(z[:, hidden : 2 * hidden])
        gate_g = np.tanh(z[:, 2 * hidden : 3 * hidden])
        gate_o = _sigmoid(z[:, 3 * hidden :])
        c_new = gate_f * c + gate_i * gate_g
        tanh_c = np.tanh(c_new)
        if keep_cache:
            cache.h_prev[:, t] = h
            cache.c_prev[:, t] = c
            cache.gate_i[:, t] = gate_i
            cache.gate_f[:, t] = gate_f
            cache.gate_g[:, t] = gate_g
            cache.gate_o[:, t] = gate_o
            cache.tanh_c[:, t] = tanh_c
        m = mask[:, t : t + 1]
        not_m = 1.0 - m
        h = m * (gate_o * tanh_c) + not_m * h
        c = m * c_new + not_m * c
    return h, cache


def _run_direction_backward(
    d_h_final: np.ndarray,
    x: np.ndarray,
    mask: np.ndarray,
    cache: _DirectionCache,
    params: LstmParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Backpropagate through one direction; returns (d_x, dW_in, dW_rec, d_bias)."""
    batch, steps, embed_dim = x.shape
    hidden = params.hidden_dim
    dh = d_h_final.copy()
    dc = np.zeros_like(dh)
    dz_all = np.zeros((batch, steps, 4 * hidden))
    d_w_recurrent = np.zeros_like(params.w_recurrent)
    for t in range(steps - 1, -1, -1):
        m = mask[:, t : t + 1]
        not_m = 1.0 - m
        gate_i = cache.gate_i[:, t]
        gate_f = cache.gate_f[:, t]
        gate_g = cache.gate_g[:, t]
        gate_o = cache.gate_o[:, t]
        tanh_c = cache.tanh_c[:, t]
        dh_new = dh * m
        dc_new = dh_new * gate_o * (1.0 - tanh_c * tanh_c) + dc * m
        d_o = dh_new * tanh_c
        d_f = dc_new * cache.c_prev[:, t]
        d_i = dc_new * gate_g
        d_g = dc_new * gate_i
        dz = dz_all[:, t]
        dz[:, :hidden] = d_i * gate_i * (1.0 - gate_i)
        dz[:, hidden : 2 * hidden] = d_f * gate_f * (1.0 - gate_f)
        dz[:, 2 * hidden : 3 * hidden] = d_g * (1.0 - gate_g * gate_g)
        dz[:, 3 * hidden :] = d_o * gate_o * (1.0 - gate_o)
        d_w_recurrent += dz.T @ cache.h_prev[:, t]
        dh = not_m * dh + dz @ params.w_recurrent
        dc = not_m * dc + dc_new * gate_f
    flat_dz = dz_all.reshape(batch * steps, 4 * hidden)
    d_w_input = flat_dz.T @ x.reshape(batch * steps, embed_dim)
    d_bias = flat_dz.sum(axis=0)
    d_x = (flat_dz @ params.w_input).reshape(batch, steps, embed_dim)
    return d_x, d_w_input, d_w_recurrent, d_bias


@dataclass
class _FieldCache:
    seqs: np.ndarray
    rev_seqs: np.ndarray
    mask: np.ndarray
    x_fwd: np.ndarray
    x_bwd: np.ndarray
    fwd: _DirectionCache | None
    bwd: _DirectionCache | None


def _encode_field(
    seqs: np.ndarray,
    lens: np.ndarray,
    embedding: np.ndarray,
    layer: BiLstmLayer,
    keep_cache: bool,
) -> tuple[np.ndarray, _FieldCache]:
    mask = (np.arange(seqs.shape[1])[None, :] < lens[:, None]).astype(np.float64)
    x_fwd = embedding[seqs]
    rev_seqs = _reverse_valid(seqs, lens)
    x_bwd = embedding[rev_seqs]
    h_fwd, cache_fwd = _run_direction(x_fwd, mask, layer.forward, keep_cache)
    h_bwd, cache_bwd = _run_direction(x_bwd, mask, layer.backward, keep_cache)
    out = np.concatenate([h_fwd, h_bwd], axis=1)
    return out, _FieldCache(seqs, rev_seqs, mask, x_fwd, x_bwd, cache_fwd, cache_bwd)


def _backprop_field(
    d_out: np.ndarray,
    field_cache: _FieldCache,
    layer: BiLstmLayer,
    prefix: str,
    grads: dict[str, np.ndarray],
) -> None:
    hidden = layer.hidden_dim
    embed_dim = field_cache.x_fwd.shape[2]
    for direction_name, params, d_h, x, seqs, cache in (
        ("forward", layer.forward, d_out[:, :hidden], field_cache.x_fwd, field_cache.seqs, field_cache.fwd),
        ("backward", layer.backward, d_out[:, hidden:], field_cache.x_bwd, field_cache.rev_seqs, field_cache.bwd),
    ):
        d_x, d_w_input, d_w_recurrent, d_bias = _run_direction_backward(
            d_h, x, field_cache.mask, cache, params
        )
        grads[f"{prefix}.{direction_name}.w_input"] += d_w_input
        grads[f"{prefix}.{direction_name}.w_recurrent"] += d_w_recurrent
        grads[f"{prefix}.{direction_name}.bias"] += d_bias
        np.add.at(grads["embedding"], seqs.ravel(), d_x.reshape(-1, embed_dim))


@dataclass
class _ChunkCache:
    rows: int  # real products in this chunk (the rest is padding)
    title: _FieldCache
    desc: _FieldCache


def _sequence_arrays(products) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    title_seqs = np.array([p.title_seq for p in products], dtype=np.intp)
    title_lens = np.array([p.title_len for p in products], dtype=np.intp)
    desc_seqs = np.array([p.desc_seq for p in products], dtype=np.intp)
    desc_lens = np.array([p.desc_len for p in products], dtype=np.intp)
    return title_seqs, title_lens, desc_seqs, desc_lens


def _pad_rows(array: np.ndarray, rows: int) -> np.ndarray:
    if array.shape[0] == rows:
        return array
    padded = np.zeros((rows,) + array.shape[1:], dtype=array.dtype)
    padded[: array.shape[0]] = array
    return padded


def encode_products(
    model: SiameseModel,
    products,
    keep_cache: bool = False,
) -> tuple[np.ndarray, list[_ChunkCache]]:
    """Encode EncodedProducts into (n, 4*hidden_dim) vectors.

    Each vector is concat(title forward-final, title backward-final,
    description forward-final, description backward-final).
    """
    products = list(products)
    if not products:
        raise ValueError("no products to encode")
    for p in products:
        if p.title_len < 1 or p.desc_len < 1:
            raise ValueError(f"product {p.product_id!r} has an empty field sequence")
    title_seqs, title_lens, desc_seqs, desc_lens = _sequence_arrays(products)
    out = np.empty((len(products), model.output_dim))
    caches: list[_ChunkCache] = []
    for start in range(0, len(products), _CHUNK):
        stop = min(start + _CHUNK, len(products))
        rows = stop - start
        t_out, t_cache = _encode_field(
            _pad_rows(title_seqs[start:stop], _CHUNK),
            _pad_rows(title_lens[start:stop], _CHUNK),
            model.embedding,
            model.title_encoder,
            keep_cache,
        )
        d_out_field, d_cache = _encode_field(
            _pad_rows(desc_seqs[start:stop], _CHUNK),
            _pad_rows(desc_lens[start:stop], _CHUNK),
            model.embedding,
            model.desc_encoder,
            keep_cache,
        )
        out[start:stop] = np.concatenate([t_out[:rows], d_out_field[:rows]], axis=1)
        if keep_cache:
            caches.append(_ChunkCache(rows, t_cache, d_cache))
    return out, caches


def encode_products_backward(
    d_vectors: np.ndarray,
    caches: list[_ChunkCache],
    model: SiameseModel,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate gradients of the encoder parameters into ``grads``.

    ``d_vectors`` is the loss gradient with respect to the encoded
    vectors, in the same order encode_products received the products.
    The PAD embedding row's gradient is forced to zero.
    """
    two_h = 2 * model.hidden_dim
    start = 0
    for chunk in caches:
        d_chunk = _pad_rows(d_vectors[start : start + chunk.rows], _CHUNK)
        _backprop_field(d_chunk[:, :two_h], chunk.title, model.title_encoder, "title", grads)
        _backprop_field(d_chunk[:, two_h:], chunk.desc, model.desc_encoder, "desc", grads)
        start += chunk.rows
    grads["embedding"][PAD_INDEX, :] = 0.0


def encode_product(product: EncodedProduct, model: SiameseModel) -> np.ndarray:
    """Encode one product into its 4*hidden_dim vector."""
    vectors, _ = encode_products(model, [product])
    return vectors[0]


def bilstm_encode(
    indices,
    length: int,
    embedding: np.ndarray,
    layer: BiLstmLayer,
) -> np.ndarray:
    """Encode one index sequence into concat(forward-final, backward-final).

    Only positions below ``length`` are observable; the forward pass runs
    over positions 0..length-1 and the backward pass over length-1..0.
    """
    seq = np.asarray(indices, dtype=np.intp)
    if seq.ndim != 1:
        raise ValueError("indices must be a flat sequence")
    if not 1 <= length <= seq.shape[0]:
        raise ValueError(f"length must be in [1, {seq.shape[0]}], got {length}")
    seqs = _pad_rows(seq[None, :], _CHUNK)
    lens = _pad_rows(np.array([length], dtype=np.intp), _CHUNK)
    out, _ = _encode_field(seqs, lens, embedding, layer, keep_cache=False)
    return out[0]
