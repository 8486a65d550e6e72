"""Neighborhood-aggregation layers (GCN, GraphSAGE, GIN, GAT) with injectable weights.

Local and fused aggregation weights are dense ``N x N`` tensors whose row ``i``
is supported on the closed neighborhood ``{i} ∪ N(i)`` (``Graph.closed_mask``);
everything outside that support is exactly zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import Graph, renormalized_adjacency
from .tensor import ContractError, Tensor

GAT_SLOPE = 0.2


class BackboneKind(str, enum.Enum):
    GCN = "gcn"
    SAGE = "sage"
    GIN = "gin"
    GAT = "gat"

    @classmethod
    def parse(cls, value: str | BackboneKind) -> BackboneKind:
        if isinstance(value, cls):
            return value
        aliases = {"graphsage": "sage"}
        value = aliases.get(value.lower(), value.lower())
        return cls(value)


_REQUIRED = {
    BackboneKind.GCN: ("theta",),
    BackboneKind.SAGE: ("theta",),
    BackboneKind.GIN: ("mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "eps"),
    BackboneKind.GAT: ("att_w", "att_src", "att_dst"),
}


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


@dataclass
class BackboneLayer:
    """One aggregation layer; ``params`` holds exactly the tensors its kind needs.

    GAT's attention vector ``a`` is stored split in two halves, ``att_src``
    scoring ``W h_i`` and ``att_dst`` scoring ``W h_j``.
    """

    kind: BackboneKind
    params: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = BackboneKind.parse(self.kind)
        if set(self.params) != set(_REQUIRED[self.kind]):
            raise ContractError(f"{self.kind.value} layer needs params {_REQUIRED[self.kind]}, "
                                f"got {sorted(self.params)}")

    @classmethod
    def init(cls, kind: BackboneKind | str, dim: int, rng: np.random.Generator) -> BackboneLayer:
        kind = BackboneKind.parse(kind)
        P = T.parameter
        if kind in (BackboneKind.GCN, BackboneKind.SAGE):
            params = {"theta": P(glorot(rng, dim, dim))}
        elif kind is BackboneKind.GIN:
            params = {
                "mlp_w1": P(glorot(rng, dim, dim)),
                "mlp_b1": P(np.zeros(dim)),
                "mlp_w2": P(glorot(rng, dim, dim)),
                "mlp_b2": P(np.zeros(dim)),
                "eps": P(np.zeros(1)),
            }
        else:
            params = {
                "att_w": P(glorot(rng, dim, dim)),
                "att_src": P(glorot(rng, 2 * dim, 1, shape=(dim, 1))),
                "att_dst": P(glorot(rng, 2 * dim, 1, shape=(dim, 1))),
            }
        return cls(kind, params)

    def __getitem__(self, key: str) -> Tensor:
        return self.params[key]


def masked_softmax_rows(scores: Tensor, g: Graph) -> Tensor:
    """Row-wise softmax over each closed neighborhood."""
    return T.softmax(scores, axis=1, mask=g.closed_mask)


def gat_scores(layer: BackboneLayer, H: Tensor) -> Tensor:
    """LeakyReLU(a^T [W h_i || W h_j]) for every pair (i, j), dense."""
    z = H @ layer["att_w"]
    src = z @ layer["att_src"]
    dst = z @ layer["att_dst"]
    return T.leaky_relu(src + dst.T, GAT_SLOPE)


def local_weights(layer: BackboneLayer, g: Graph, H: Tensor) -> Tensor:
    """Native aggregation weights of the layer, supported on closed neighborhoods."""
    if H.shape[0] != g.num_nodes:
        raise ContractError(f"H has {H.shape[0]} rows for a {g.num_nodes}-node graph")
    mask = g.closed_mask.astype(np.float64)
    kind = layer.kind
    if kind is BackboneKind.GCN:
        return renormalized_adjacency(g)
    if kind is BackboneKind.SAGE:
        return T.Tensor(mask)
    if kind is BackboneKind.GIN:
        eye = np.eye(g.num_nodes)
        return T.Tensor(mask) + T.Tensor(eye) * layer["eps"]
    return masked_softmax_rows(gat_scores(layer, H), g)


def check_support(w: Tensor, g: Graph) -> None:
    n = g.num_nodes
    if w.shape != (n, n):
        raise ContractError(f"weights have shape {w.shape}, expected {(n, n)}")
    if np.any(w.data[~g.closed_mask] != 0):
        raise ContractError("weights are nonzero outside the closed neighborhoods")


def layer_forward(layer: BackboneLayer, g: Graph, H: Tensor, w: Tensor) -> Tensor:
    """Refine node features with aggregation weights ``w`` (local or fused)."""
    check_support(w, g)
    kind = layer.kind
    if kind is BackboneKind.GCN:
        return T.relu(w @ (H @ layer["theta"]))
    if kind is BackboneKind.SAGE:
        # MEAN over the closed neighborhood, taken after weighting
        size = g.closed_mask.sum(axis=1, keepdims=True).astype(np.float64)
        agg = (w @ H) * T.Tensor(1.0 / size)
        return T.relu(agg @ layer["theta"])
    if kind is BackboneKind.GIN:
        agg = w @ H
        hidden = T.relu(agg @ layer["mlp_w1"] + layer["mlp_b1"])
        return hidden @ layer["mlp_w2"] + layer["mlp_b2"]
    return T.relu(w @ (H @ layer["att_w"]))
