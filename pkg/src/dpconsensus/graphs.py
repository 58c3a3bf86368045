"""Undirected communication topologies and their Laplacian spectra."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PreconditionError
from .matops import sym_eigvals

# Eigenvalues below this are treated as zero when counting components.
ZERO_EIG_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Graph:
    """Unweighted undirected graph given by its 0/1 adjacency matrix."""

    adjacency: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError(f"adjacency must be square, got shape {a.shape}")
        if not np.array_equal(a, a.astype(bool).astype(a.dtype)):
            raise ConfigError("adjacency entries must be 0 or 1")
        if np.any(np.diag(a) != 0):
            raise ConfigError("adjacency diagonal must be zero (no self-loops)")
        if not np.array_equal(a, a.T):
            raise ConfigError("adjacency must be symmetric (undirected graph)")
        object.__setattr__(self, "adjacency", a.astype(np.int64))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True, eq=False)
class GraphSpectrum:
    """Ascending Laplacian eigenvalues and the derived connectivity data."""

    eigenvalues: np.ndarray          # ascending, length N
    fiedler: float                   # lambda_2
    lambda_max: float                # lambda_N
    nonzero: np.ndarray = field(repr=False)  # lambda_2..lambda_N

    @property
    def connected(self) -> bool:
        return self.fiedler > ZERO_EIG_TOL


def degrees(g: Graph) -> np.ndarray:
    """Row sums of the adjacency matrix."""
    return g.adjacency.sum(axis=1)


def laplacian(g: Graph) -> np.ndarray:
    """Laplacian L = D - A; integer-valued, rows sum to zero exactly."""
    return np.diag(degrees(g)) - g.adjacency


def spectrum(g: Graph) -> GraphSpectrum:
    """Ascending Laplacian eigenvalues with connectivity derived from lambda_2."""
    if g.n < 2:
        raise PreconditionError("spectrum requires at least 2 nodes")
    ev = sym_eigvals(laplacian(g).astype(float), "graph Laplacian")
    return GraphSpectrum(
        eigenvalues=ev,
        fiedler=float(ev[1]),
        lambda_max=float(ev[-1]),
        nonzero=ev[1:].copy(),
    )


def complete_graph(n: int) -> Graph:
    _check_n(n)
    return Graph(np.ones((n, n), dtype=np.int64) - np.eye(n, dtype=np.int64))


def ring_graph(n: int) -> Graph:
    return circulant_graph(n, (1,))


def circulant_graph(n: int, offsets) -> Graph:
    """Circulant graph: node i linked to i +/- s (mod n) for each offset s."""
    _check_n(n)
    offs = tuple(int(s) for s in offsets)
    if not offs:
        raise ConfigError("circulant graph needs at least one offset")
    for s in offs:
        if s < 1 or s > n // 2:
            raise ConfigError(f"circulant offset {s} out of range 1..{n // 2} for N={n}")
    if len(set(offs)) != len(offs):
        raise ConfigError(f"duplicate circulant offsets {offs}")
    a = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for s in offs:
            a[i, (i + s) % n] = 1
            a[i, (i - s) % n] = 1
    return Graph(a)


def star_graph(n: int) -> Graph:
    _check_n(n)
    a = np.zeros((n, n), dtype=np.int64)
    a[0, 1:] = 1
    a[1:, 0] = 1
    return Graph(a)


def graph_from_edges(n: int, edges) -> Graph:
    """Build a graph from 0-based (i, j) node-id pairs."""
    _check_n(n)
    a = np.zeros((n, n), dtype=np.int64)
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < n and 0 <= j < n):
            raise ConfigError(f"edge ({i}, {j}) out of range for N={n}")
        if i == j:
            raise ConfigError(f"self-loop ({i}, {i}) not allowed")
        a[i, j] = 1
        a[j, i] = 1
    return Graph(a)


def make_topology(kind: str, n: int, offsets=None, edges=None) -> Graph:
    """Deterministic construction of the named topology families."""
    if kind == "complete":
        return complete_graph(n)
    if kind == "ring":
        return ring_graph(n)
    if kind == "circulant":
        if offsets is None:
            raise ConfigError("circulant topology requires offsets")
        return circulant_graph(n, offsets)
    if kind == "star":
        return star_graph(n)
    if kind == "explicit":
        if edges is None:
            raise ConfigError("explicit topology requires an edge list")
        return graph_from_edges(n, edges)
    raise ConfigError(f"unknown topology kind {kind!r}")


def _check_n(n: int) -> None:
    if n < 2:
        raise ConfigError(f"graph needs N >= 2 nodes, got {n}")
