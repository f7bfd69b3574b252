"""Spatial message passing: GCN with symmetric normalisation, and GINE."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, as_tensor
from .errors import DataError, DimensionError
from .graph import PaddedAdjacency, Snapshot
from .nn import Dropout, Linear, Module


def normalized_adjacency(A) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the row sums of ``A + I``."""
    A = A.matrix if isinstance(A, PaddedAdjacency) else np.asarray(A, dtype=float)
    A_hat = A + np.eye(A.shape[0])
    deg = A_hat.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.abs(deg)), 0.0)
    return inv_sqrt[:, None] * A_hat * inv_sqrt[None, :]


class GCNLayer(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dropout: float = 0.5, name: str = "gcn"):
        self.linear = Linear(d_in, d_out, rng, name=name)
        self.dropout = Dropout(dropout, rng)

    @property
    def weight(self):
        return self.linear.weight

    @property
    def bias(self):
        return self.linear.bias

    def forward(self, X, A_norm) -> Tensor:
        """``tanh(A_norm X W + b)`` followed by dropout; ``A_norm`` is pre-normalised."""
        X = as_tensor(X)
        A_norm = np.asarray(A_norm)
        if A_norm.shape != (X.shape[0], X.shape[0]):
            raise DimensionError(f"adjacency {A_norm.shape} does not match {X.shape[0]} nodes")
        h = ad.tanh(ad.matmul(Tensor(A_norm), self.linear(X)))
        return self.dropout(h)


def gcn_forward(layer: GCNLayer, X, adjacency) -> Tensor:
    return layer(X, normalized_adjacency(adjacency))


def message_edges(s: Snapshot, directed: bool):
    """(source, target, weight) arrays; undirected edges carry messages both ways."""
    if directed:
        return s.src, s.dst, s.weight
    loops = s.src == s.dst
    src = np.concatenate([s.src, s.dst[~loops]])
    dst = np.concatenate([s.dst, s.src[~loops]])
    w = np.concatenate([s.weight, s.weight[~loops]])
    return src, dst, w


class GINELayer(Module):
    """``phi((1 + eps) x_i + sum_{j -> i} relu(x_j + proj(e_ji)))``.

    ``phi`` is a two-layer perceptron with a ReLU in between.
    """

    def __init__(self, d: int, rng: np.random.Generator, d_edge: int = 1, hidden: int | None = None, name: str = "gine"):
        hidden = hidden or d
        self.d = d
        self.d_edge = d_edge
        self.eps = Parameter(np.zeros(()), f"{name}.eps")
        self.edge_proj = Linear(d_edge, d, rng, name=f"{name}.edge_proj")
        self.phi_in = Linear(d, hidden, rng, name=f"{name}.phi_in")
        self.phi_out = Linear(hidden, d, rng, name=f"{name}.phi_out")

    def phi(self, h: Tensor) -> Tensor:
        return self.phi_out(ad.relu(self.phi_in(h)))

    def forward(self, X, src, dst, edge_attr) -> Tensor:
        X = as_tensor(X)
        src = np.asarray(src, dtype=np.intp)
        dst = np.asarray(dst, dtype=np.intp)
        if edge_attr is None:
            raise DataError("GINE needs an attribute vector for every edge")
        attr = np.asarray(edge_attr, dtype=float)
        if attr.ndim == 1:
            attr = attr[:, None]
        if attr.shape != (len(src), self.d_edge) or len(dst) != len(src):
            raise DataError(f"edge attributes {attr.shape} do not cover {len(src)} edges of width {self.d_edge}")
        if X.shape[-1] != self.d:
            raise DimensionError(f"GINE expects width {self.d}, got {X.shape}")
        h = X * (self.eps + 1.0)
        if len(src):
            messages = ad.relu(X[src] + self.edge_proj(Tensor(attr)))
            h = h + ad.scatter_add(messages, dst, X.shape[0])
        return self.phi(h)


def gine_forward(layer: GINELayer, X, edges, edge_attr) -> Tensor:
    src, dst = edges
    return layer(X, src, dst, edge_attr)
