"""Graph memory: a latent vector refined by single-query cross-attention over nodes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import glorot
from .tensor import ContractError, Tensor


@dataclass
class MemoryParams:
    """Projections of one memory layer.

    Shapes: ``wq`` d_M x d, ``wk``/``wv`` d_H x d, ``mlp_w1`` d x d,
    ``mlp_w2`` d x d_M (so the residual add stays in R^{d_M}).
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    k_iters: int = 1

    def __post_init__(self):
        d_m, d = self.wq.shape
        d_h = self.wk.shape[0]
        expected = {
            "wk": (d_h, d), "wv": (d_h, d), "mlp_w1": (d, d),
            "mlp_b1": (d,), "mlp_w2": (d, d_m), "mlp_b2": (d_m,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ContractError(f"memory {name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.k_iters < 1:
            raise ContractError("k_iters must be >= 1")

    @property
    def attn_dim(self) -> int:
        return self.wq.shape[1]

    def named(self) -> dict[str, Tensor]:
        return {k: getattr(self, k) for k in ("wq", "wk", "wv", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")}


def init_memory(d_m: int, seed: int | np.random.Generator = 0, d: int | None = None,
                d_h: int | None = None, k_iters: int = 1) -> MemoryParams:
    """Glorot-uniform projections; biases start at zero."""
    if d_m < 1:
        raise ContractError("d_M must be >= 1")
    d = d or d_m
    d_h = d_h or d_m
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    P = T.parameter
    return MemoryParams(
        wq=P(glorot(rng, d_m, d)),
        wk=P(glorot(rng, d_h, d)),
        wv=P(glorot(rng, d_h, d)),
        mlp_w1=P(glorot(rng, d, d)),
        mlp_b1=P(np.zeros(d)),
        mlp_w2=P(glorot(rng, d, d_m)),
        mlp_b2=P(np.zeros(d_m)),
        k_iters=k_iters,
    )


def init_latent(d_m: int, rng: np.random.Generator) -> Tensor:
    """Random initial memory M^0, shape (1, d_M)."""
    return T.parameter(glorot(rng, 1, d_m, shape=(1, d_m)))


def attention_weights(m: Tensor, H: Tensor, params: MemoryParams) -> Tensor:
    scores = (m @ params.wq) @ (H @ params.wk).T
    return T.softmax(T.scale(scores, 1.0 / math.sqrt(params.attn_dim)), axis=1)


def gnm_layer(m_prev: Tensor, H_prev: Tensor, params: MemoryParams) -> Tensor:
    """Refine the (1, d_M) memory by attending over the rows of ``H_prev``.

    Each of the ``k_iters`` inner iterations attends, passes the read-out
    through the two-layer ReLU MLP, and adds the iteration's input back.
    """
    if H_prev.shape[0] == 0:
        raise ContractError("memory attention needs at least one node")
    if m_prev.ndim == 1:
        m_prev = T.reshape(m_prev, (1, -1))
    V = H_prev @ params.wv
    K = H_prev @ params.wk
    inv_sqrt = 1.0 / math.sqrt(params.attn_dim)
    m = m_prev
    for _ in range(params.k_iters):
        att = T.softmax(T.scale((m @ params.wq) @ K.T, inv_sqrt), axis=1)
        read = att @ V
        hidden = T.relu(read @ params.mlp_w1 + params.mlp_b1)
        m = m + (hidden @ params.mlp_w2 + params.mlp_b2)
    return m
