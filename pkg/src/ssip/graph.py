"""Areal adjacency graphs and CAR precision matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class AdjacencyGraph:
    """Symmetric, loop-free neighbourhood structure over dense region indices.

    ``neighbors[i]`` is a sorted integer array. Every region must have at
    least one neighbour, since the CAR conditionals divide by the degree.
    """

    n_regions: int
    neighbors: tuple[np.ndarray, ...]
    labels: tuple[str, ...] | None = None
    degrees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_regions < 1:
            raise GraphError("graph needs at least one region")
        if len(self.neighbors) != self.n_regions:
            raise GraphError("neighbour list length does not match n_regions")
        nbrs = tuple(np.asarray(sorted(set(int(k) for k in nb)), dtype=np.intp)
                     for nb in self.neighbors)
        for i, nb in enumerate(nbrs):
            if nb.size == 0:
                raise GraphError(f"region {i} is isolated")
            if nb[0] < 0 or nb[-1] >= self.n_regions:
                raise GraphError(f"region {i} has an out-of-range neighbour")
            if i in set(nb.tolist()):
                raise GraphError(f"region {i} has a self-loop")
            for k in nb:
                if i not in set(nbrs[k].tolist()):
                    raise GraphError(f"asymmetric adjacency between {i} and {k}")
        if self.labels is not None and len(self.labels) != self.n_regions:
            raise GraphError("label table length does not match n_regions")
        object.__setattr__(self, "neighbors", nbrs)
        degrees = np.array([nb.size for nb in nbrs], dtype=np.intp)
        degrees.setflags(write=False)
        object.__setattr__(self, "degrees", degrees)

    @property
    def n_edges(self) -> int:
        return int(self.degrees.sum()) // 2

    def edges(self) -> np.ndarray:
        """Undirected edges as an (n_edges, 2) array with i < k."""
        out = [(i, int(k)) for i, nb in enumerate(self.neighbors) for k in nb if i < k]
        return np.array(out, dtype=np.intp).reshape(-1, 2)

    def adjacency(self) -> sparse.csr_matrix:
        e = self.edges()
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        data = np.ones(rows.size)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n_regions,) * 2)

    def n_components(self) -> int:
        return int(sparse.csgraph.connected_components(self.adjacency(), directed=False)[0])

    def is_connected(self) -> bool:
        return self.n_components() == 1


def build_grid_graph(rows: int, cols: int) -> AdjacencyGraph:
    """Rook (4-neighbour) adjacency on a rows x cols lattice, row-major indices."""
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise GraphError("grid needs rows*cols >= 2")
    neighbors = []
    for r in range(rows):
        for c in range(cols):
            nb = []
            if r > 0:
                nb.append((r - 1) * cols + c)
            if c > 0:
                nb.append(r * cols + c - 1)
            if c < cols - 1:
                nb.append(r * cols + c + 1)
            if r < rows - 1:
                nb.append((r + 1) * cols + c)
            neighbors.append(nb)
    return AdjacencyGraph(rows * cols, tuple(neighbors))


def from_edge_list(n: int, edges, labels=None) -> AdjacencyGraph:
    """Build a graph from undirected (i, k) pairs; both orientations may be given."""
    if n < 1:
        raise GraphError("n must be positive")
    seen: set[tuple[int, int]] = set()
    neighbors: list[list[int]] = [[] for _ in range(n)]
    for i, k in edges:
        i, k = int(i), int(k)
        if not (0 <= i < n and 0 <= k < n):
            raise GraphError(f"edge ({i}, {k}) out of range for n={n}")
        if i == k:
            raise GraphError(f"self-loop at region {i}")
        key = (min(i, k), max(i, k))
        if key in seen:
            continue
        seen.add(key)
        neighbors[i].append(k)
        neighbors[k].append(i)
    return AdjacencyGraph(n, tuple(neighbors), labels=None if labels is None else tuple(labels))


def read_edge_list(path) -> AdjacencyGraph:
    """Parse an edge-list file: one ``i k`` pair per line, ``#`` comments.

    An optional ``# n_regions: N`` header fixes the region count; otherwise
    it is one more than the largest index seen.
    """
    edges = []
    n = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line, _, comment = raw.partition("#")
        comment = comment.strip()
        if comment.lower().startswith("n_regions:"):
            n = int(comment.split(":", 1)[1])
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise GraphError(f"{path}:{lineno}: expected two indices, got {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise GraphError(f"{path}:{lineno}: non-integer index") from exc
    if n is None:
        if not edges:
            raise GraphError(f"{path}: no edges")
        n = 1 + max(max(e) for e in edges)
    return from_edge_list(n, edges)


def write_edge_list(graph: AdjacencyGraph, path) -> None:
    lines = [f"# n_regions: {graph.n_regions}"]
    lines += [f"{i} {k}" for i, k in graph.edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def car_precision(graph: AdjacencyGraph, rho: float) -> sparse.csr_matrix:
    """Q = D - rho W. Positive definite for rho < 1; rank deficient at rho = 1."""
    if not 0.0 <= rho <= 1.0:
        raise GraphError(f"rho must lie in [0, 1], got {rho}")
    D = sparse.diags(graph.degrees.astype(float))
    return (D - rho * graph.adjacency()).tocsr()


def neighbor_sum(values, graph: AdjacencyGraph, i: int) -> float:
    values = np.asarray(values)
    if values.shape[0] != graph.n_regions:
        raise GraphError("field length does not match n_regions")
    return float(values[graph.neighbors[i]].sum())


def neighbor_sums(values, graph: AdjacencyGraph) -> np.ndarray:
    """Neighbour sums for every region (rows of ``values``), i.e. W @ values."""
    return graph.adjacency() @ np.asarray(values, dtype=float)


def normalized_adjacency_eigenvalues(graph: AdjacencyGraph) -> np.ndarray:
    """Eigenvalues of D^-1/2 W D^-1/2; log|D - rho W| = sum log n_i + sum log(1 - rho lam)."""
    d = 1.0 / np.sqrt(graph.degrees.astype(float))
    A = graph.adjacency().toarray()
    return np.linalg.eigvalsh(d[:, None] * A * d[None, :])


def car_logdet(graph: AdjacencyGraph, rho: float, eigenvalues=None) -> float:
    lam = normalized_adjacency_eigenvalues(graph) if eigenvalues is None else eigenvalues
    return float(np.log(graph.degrees).sum() + np.log1p(-rho * lam).sum())
