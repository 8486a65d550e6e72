"""Global node saliency from the memory vector, and its fusion with local weights."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import glorot, masked_softmax_rows
from .graph import Graph
from .tensor import ContractError, Tensor


@dataclass
class SaliencyParams:
    wq_s: Tensor  # d_M x d
    wk_s: Tensor  # d_H x d

    def __post_init__(self):
        if self.wq_s.shape[1] != self.wk_s.shape[1]:
            raise ContractError("saliency projections must share the latent dimension")

    @classmethod
    def init(cls, d_m: int, d_h: int, d: int, rng: np.random.Generator) -> SaliencyParams:
        return cls(T.parameter(glorot(rng, d_m, d)), T.parameter(glorot(rng, d_h, d)))

    def named(self) -> dict[str, Tensor]:
        return {"wq_s": self.wq_s, "wk_s": self.wk_s}


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "weighted_sum"
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.mode not in ("weighted_sum", "scaling"):
            raise ContractError(f"unknown fusion mode {self.mode!r}")
        if self.mode == "scaling" and not self.gamma > 0:
            raise ContractError("scaling fusion requires gamma > 0")


def saliency_logits(m: Tensor, H: Tensor, params: SaliencyParams) -> Tensor:
    """Scaled dot products between the projected memory and projected nodes, shape (1, N)."""
    if m.ndim == 1:
        m = T.reshape(m, (1, -1))
    d = params.wq_s.shape[1]
    return T.scale((m @ params.wq_s) @ (H @ params.wk_s).T, 1.0 / math.sqrt(d))


def compute_saliency(m: Tensor, H: Tensor, params: SaliencyParams) -> Tensor:
    """Saliency distribution over the N nodes, shape (1, N)."""
    if H.shape[0] == 0:
        raise ContractError("saliency needs at least one node")
    return T.softmax(saliency_logits(m, H, params), axis=1)


def _as_row(s: Tensor, n: int) -> Tensor:
    if s.size != n:
        raise ContractError(f"saliency has {s.size} entries for {n} nodes")
    return s if s.shape == (1, n) else T.reshape(s, (1, n))


def fuse_weighted_sum(a: Tensor, s: Tensor, g: Graph, beta: float) -> Tensor:
    """w_i(j) = softmax over j in {i} ∪ N(i) of a_i(j) + beta * s(j)."""
    s = _as_row(s, g.num_nodes)
    return masked_softmax_rows(a + T.scale(s, beta), g)


def fuse_scaling(a: Tensor, s: Tensor, g: Graph, gamma: float) -> Tensor:
    """w_i(j) = softmax over j in {i} ∪ N(i) of (1 + s(j))^gamma * a_i(j)."""
    if not gamma > 0:
        raise ContractError("gamma must be > 0")
    s = _as_row(s, g.num_nodes)
    return masked_softmax_rows(a * T.power(s + 1.0, gamma), g)


def fuse(a: Tensor, s: Tensor, g: Graph, cfg: FusionConfig) -> Tensor:
    if cfg.mode == "weighted_sum":
        return fuse_weighted_sum(a, s, g, cfg.beta)
    return fuse_scaling(a, s, g, cfg.gamma)
