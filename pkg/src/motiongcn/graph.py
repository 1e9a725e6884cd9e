"""Temporal motion graph: node typing, windowed directed edges, edge weights.

Nodes are the pair indices 2..L. Row/column ``n`` of every adjacency matrix
corresponds to node ``n + 2``; entry (i, j) carries the message i -> j.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DomainError, InputError, ShapeError
from .numerics import Tensor


@dataclass(frozen=True)
class GraphTopology:
    length: int
    global_index: int
    window: int
    edges: tuple[tuple[int, int], ...]

    @property
    def nodes(self) -> list[int]:
        return list(range(2, self.length + 1))

    @property
    def num_nodes(self) -> int:
        return self.length - 1

    def out_edges(self, i: int) -> set[tuple[int, int]]:
        return {e for e in self.edges if e[0] == i}

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros((self.num_nodes, self.num_nodes))
        for i, j in self.edges:
            m[i - 2, j - 2] = 1.0
        return m

    def source_scale(self, lam_local: float, lam_global: float) -> np.ndarray:
        """Per-entry reweighting factor: lam_global on rows leaving the global node."""
        scale = self.mask * lam_local
        g = self.global_index - 2
        scale[g] = self.mask[g] * lam_global
        return scale

    def distance(self) -> np.ndarray:
        idx = np.arange(2, self.length + 1)
        return np.abs(idx[:, None] - idx[None, :]).astype(np.float64)


def build_topology(length: int, apex_index: int, window: int) -> GraphTopology:
    """Directed edge set over nodes 2..L with the apex node as the global node."""
    return _build_topology(int(length), int(apex_index), int(window))


@lru_cache(maxsize=1024)
def _build_topology(length: int, apex_index: int, window: int) -> GraphTopology:
    if length < 3:
        raise InputError(f"graph needs L >= 3, got {length}")
    if not 2 <= apex_index <= length:
        raise InputError(f"apex_index {apex_index} outside [2, {length}]")
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    g = apex_index
    edges: set[tuple[int, int]] = set()
    for i in range(2, length + 1):
        if i == g:
            continue
        for j in range(max(2, i - window), min(length, i + window) + 1):
            edges.add((i, j))
        edges.add((i, g))
    for j in range(2, length + 1):
        edges.add((g, j))
    return GraphTopology(length, g, window, tuple(sorted(edges)))


def angular_similarity(a, b) -> Tensor:
    """1 - arccos(cos(a, b)) / pi with the cosine clamped away from +-1."""
    a, b = nx.as_tensor(a), nx.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"angular_similarity: shapes {a.shape} and {b.shape} differ")
    na, nb = nx.l2_norm(a), nx.l2_norm(b)
    if na.item() == 0 or nb.item() == 0:
        raise DomainError("angular_similarity: zero-norm vector")
    cos = (a * b).sum() / (na * nb)
    return nx.arccos_clamped(cos) * (-1.0 / np.pi) + 1.0


def decayed_weight(similarity, i: int, j: int, tau: float):
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    return similarity * float(np.exp(-abs(i - j) / tau))


@dataclass
class AdjacencyStack:
    """Initial adjacency plus the per-layer matrices the gcn module appends."""

    initial: Tensor
    mask: np.ndarray
    layers: list[Tensor] = field(default_factory=list)


def _check_lambdas(lam_local: float, lam_global: float, tau: float) -> None:
    if not lam_local < lam_global:
        raise ConfigError(
            f"lambda_local ({lam_local}) must be smaller than lambda_global ({lam_global})"
        )
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")


def edge_constants(topology: GraphTopology, tau: float, lam_local: float, lam_global: float) -> np.ndarray:
    """mask * temporal decay * node-type reweighting, all features aside."""
    return _edge_constants(topology, float(tau), float(lam_local), float(lam_global))


@lru_cache(maxsize=1024)
def _edge_constants(topology, tau, lam_local, lam_global) -> np.ndarray:
    _check_lambdas(lam_local, lam_global, tau)
    out = topology.source_scale(lam_local, lam_global) * np.exp(-topology.distance() / tau)
    out.setflags(write=False)
    return out


def similarity_matrix(features: Tensor) -> Tensor:
    """Pairwise angular similarity of the rows of (..., N, d) features."""
    norms = nx.l2_norm(features)
    if np.any(norms.data == 0):
        raise DomainError("node feature with zero norm")
    unit = features / nx.reshape(norms, norms.shape + (1,))
    cos = unit @ nx.transpose(unit)
    return nx.arccos_clamped(cos) * (-1.0 / np.pi) + 1.0


def assemble_adjacency(
    node_features,
    topology,
    tau: float = 10.0,
    lam_local: float = 1.0,
    lam_global: float = 2.0,
) -> AdjacencyStack:
    """Initial weighted adjacency from node features.

    ``node_features`` is (N, d) with one topology, or (B, N, d) with a list
    of B topologies (clips in a batch may have different apex frames).
    """
    _check_lambdas(lam_local, lam_global, tau)
    feats = nx.as_tensor(node_features)
    topologies = topology if isinstance(topology, (list, tuple)) else [topology]
    consts = np.stack([edge_constants(t, tau, lam_local, lam_global) for t in topologies])
    masks = np.stack([t.mask for t in topologies])
    if feats.ndim == 2:
        consts, masks = consts[0], masks[0]
    if feats.shape[-2] != consts.shape[-1]:
        raise ShapeError(
            f"assemble_adjacency: {feats.shape[-2]} node features for {consts.shape[-1]} nodes"
        )
    weights = similarity_matrix(feats) * Tensor(consts)
    return AdjacencyStack(weights, masks)
