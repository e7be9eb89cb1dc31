"""Network building blocks: linear / MLP layers, DeepSet encoders, and
multi-head attention with key type embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import StructuralError
from .params import ParamStore
from .tensor import (
    Tensor,
    add,
    concat,
    constant,
    gather_rows,
    matmul,
    relu,
    reshape,
    scale,
    segment_sum,
    softmax,
    transpose,
)

TYPE_EGO = 0
TYPE_OTHER = 1
TYPE_STATIC = 2
N_KEY_TYPES = 3


class Linear:
    def __init__(self, store: ParamStore, name: str, din: int, dout: int):
        self.w = store.param(f"{name}.w", (din, dout), fan_in=din)
        self.b = store.param(f"{name}.b", (dout,), fan_in=din)
        self.din, self.dout = din, dout

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.din:
            raise StructuralError(f"linear expects width {self.din}, got {x.shape}")
        return add(matmul(x, self.w), self.b)


class MLP:
    """Affine layers with ReLU between them; optional output activation."""

    def __init__(self, store: ParamStore, name: str, sizes, out_activation=None):
        if len(sizes) < 2:
            raise StructuralError("mlp needs at least input and output widths")
        self.layers = [
            Linear(store, f"{name}.{i}", sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)
        ]
        self.out_activation = out_activation

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = relu(layer(x))
        x = self.layers[-1](x)
        if self.out_activation is not None:
            x = self.out_activation(x)
        return x


def mlp_forward(mlp: MLP, x: Tensor) -> Tensor:
    return mlp(x)


class DeepSetEncoder:
    """Permutation-invariant set encoder: rho(sum_over_points(phi(point)))."""

    def __init__(self, store: ParamStore, name: str, din: int, hidden: int, dout: int):
        self.phi = MLP(store, f"{name}.phi", [din, hidden, hidden], out_activation=relu)
        self.rho = MLP(store, f"{name}.rho", [hidden, hidden, dout])
        self.din, self.dout = din, dout

    def encode_batch(self, points: Tensor, segment_ids, num_elements: int) -> Tensor:
        """Encode many elements at once: points (P, din) with per-row element ids."""
        if points.shape[0] == 0:
            raise StructuralError("cannot encode an empty point set")
        h = self.phi(points)
        pooled = segment_sum(h, segment_ids, num_elements)
        return self.rho(pooled)

    def __call__(self, element_points) -> Tensor:
        pts = element_points if isinstance(element_points, Tensor) else constant(element_points)
        if pts.shape[0] == 0:
            raise StructuralError("cannot encode an empty element")
        return self.encode_batch(pts, np.zeros(pts.shape[0], dtype=np.int64), 1)


def deepset_encode(encoder: DeepSetEncoder, element_points) -> Tensor:
    """Feature vector (1, dout) for one element's point matrix (P, din)."""
    return encoder(element_points)


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int = 160
    n_heads: int = 4

    def __post_init__(self):
        if self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise StructuralError(
                f"{self.n_heads} heads do not divide d_model {self.d_model}"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def attention(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention over the trailing two axes.

    q: (..., M, dk), k: (..., N, dk), v: (..., N, dv). `key_mask`, when
    given, is 1 for valid keys and 0 for padding; masked keys get zero
    attention weight.
    """
    if q.shape[-1] != k.shape[-1]:
        raise StructuralError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise StructuralError(f"key/value count mismatch: {k.shape} vs {v.shape}")
    dk = q.shape[-1]
    axes = list(range(len(k.shape)))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    scores = scale(matmul(q, transpose(k, axes)), 1.0 / math.sqrt(dk))
    if key_mask is not None:
        bias = np.where(np.asarray(key_mask) > 0, 0.0, -1e30)
        scores = add(scores, constant(bias))
    return matmul(softmax(scores, axis=-1), v)


class MultiHeadAttention:
    """Several attention heads over shared inputs, with a learned type
    embedding added to each key before projection."""

    def __init__(self, store: ParamStore, name: str, cfg: AttentionConfig):
        d = cfg.d_model
        self.cfg = cfg
        self.wq = Linear(store, f"{name}.wq", d, d)
        self.wk = Linear(store, f"{name}.wk", d, d)
        self.wv = Linear(store, f"{name}.wv", d, d)
        self.wo = Linear(store, f"{name}.wo", d, d)
        self.type_emb = store.param(f"{name}.type_emb", (N_KEY_TYPES, d), fan_in=d)

    def _split_heads(self, x: Tensor) -> Tensor:
        h, dh = self.cfg.n_heads, self.cfg.head_dim
        if len(x.shape) == 2:
            m = x.shape[0]
            return transpose(reshape(x, (m, h, dh)), (1, 0, 2))
        b, m = x.shape[0], x.shape[1]
        return transpose(reshape(x, (b, m, h, dh)), (0, 2, 1, 3))

    def _join_heads(self, x: Tensor) -> Tensor:
        d = self.cfg.d_model
        if len(x.shape) == 3:
            return reshape(transpose(x, (1, 0, 2)), (x.shape[1], d))
        return reshape(transpose(x, (0, 2, 1, 3)), (x.shape[0], x.shape[2], d))

    def __call__(
        self,
        q_in: Tensor,
        k_in: Tensor,
        v_in: Tensor,
        key_type_ids: np.ndarray,
        key_mask: np.ndarray | None = None,
    ) -> Tensor:
        if q_in.shape[-1] != self.cfg.d_model:
            raise StructuralError(f"expected d_model {self.cfg.d_model}, got {q_in.shape}")
        k_in = add(k_in, gather_rows(self.type_emb, np.asarray(key_type_ids, dtype=np.int64)))
        q = self._split_heads(self.wq(q_in))
        k = self._split_heads(self.wk(k_in))
        v = self._split_heads(self.wv(v_in))
        if key_mask is not None:
            key_mask = np.asarray(key_mask)
            if key_mask.ndim == 1:  # (N,) -> broadcast over heads and queries
                key_mask = key_mask[None, None, :]
            elif key_mask.ndim == 2:  # (B, K) -> (B, 1, 1, K)
                key_mask = key_mask[:, None, None, :]
            else:
                raise StructuralError(f"key mask must be 1-d or 2-d, got {key_mask.shape}")
        out = attention(q, k, v, key_mask)
        return self.wo(self._join_heads(out))


def multi_head_attention(
    mha: MultiHeadAttention,
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    key_type_ids: np.ndarray,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    return mha(q_in, k_in, v_in, key_type_ids, key_mask)
