"""Primal connectome handling and dual (line-graph) construction.

A connectome is a plain square float64 array: symmetric, zero diagonal,
nonnegative. The dual of a graph has one node per primal edge; two dual nodes
are adjacent iff their primal edges share an endpoint. For the complete graph
on n nodes the dual has n(n-1)/2 nodes, is 2(n-2)-regular, and is stored as an
edge list only — the m x m adjacency is never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError, ValidationError

SYMMETRY_TOL = 1e-12


def validate_connectome(weights: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Check square shape, symmetry, zero diagonal and nonnegativity."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValidationError(f"{name}: expected a square matrix, got shape {w.shape}")
    asym = np.abs(w - w.T)
    if asym.size and asym.max() > SYMMETRY_TOL:
        i, j = np.unravel_index(int(np.argmax(asym)), w.shape)
        raise ValidationError(
            f"{name}: asymmetric at ({i}, {j}): {w[i, j]!r} vs {w[j, i]!r}"
        )
    diag = np.abs(np.diag(w))
    if diag.size and diag.max() != 0.0:
        i = int(np.argmax(diag))
        raise ValidationError(f"{name}: nonzero diagonal at ({i}, {i}): {w[i, i]!r}")
    if w.size and w.min() < 0.0:
        i, j = np.unravel_index(int(np.argmin(w)), w.shape)
        raise ValidationError(f"{name}: negative weight at ({i}, {j}): {w[i, j]!r}")
    return w


def upper_tri_vectorize(weights: np.ndarray) -> np.ndarray:
    """Row-major upper triangle (i < j) of a valid connectome."""
    w = validate_connectome(weights)
    iu = np.triu_indices(w.shape[0], k=1)
    return w[iu].copy()


def devectorize(vector: np.ndarray, n: int) -> np.ndarray:
    """Inverse of upper_tri_vectorize: symmetric zero-diagonal matrix."""
    v = np.asarray(vector, dtype=np.float64).ravel()
    expected = n * (n - 1) // 2
    if v.size != expected:
        raise ShapeError(f"vector length {v.size} != n(n-1)/2 = {expected} for n={n}")
    out = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    out[iu] = v
    out.T[iu] = v
    return out


def dual_index(i: int, j: int, n: int) -> int:
    """Position of pair (i, j), i < j, in the row-major pair enumeration."""
    if not 0 <= i < j < n:
        raise DomainError(f"need 0 <= i < j < n, got i={i}, j={j}, n={n}")
    return i * n - i * (i + 1) // 2 + (j - i - 1)


def upper_flat_indices(n: int) -> np.ndarray:
    """Flat (C-order) positions of the upper triangle in an n x n matrix."""
    iu, ju = np.triu_indices(n, k=1)
    return iu * n + ju


@dataclass(frozen=True)
class DualTopology:
    """Unweighted dual adjacency as an edge list plus pair<->index bijections.

    ``rows[k] < cols[k]`` index dual nodes; each undirected dual edge appears
    once. Immutable after construction and safe to share across samples.
    """

    n_primal: int
    m: int
    rows: np.ndarray
    cols: np.ndarray
    pairs: np.ndarray  # shape (m, 2): dual node r -> primal edge (i, j)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_dual_edges(self) -> int:
        return int(self.rows.size)

    def index_of(self, i: int, j: int) -> int:
        if "index" not in self._cache:
            self._cache["index"] = {
                (int(a), int(b)): r for r, (a, b) in enumerate(self.pairs)
            }
        i, j = (i, j) if i < j else (j, i)
        try:
            return self._cache["index"][(i, j)]
        except KeyError:
            raise DomainError(f"({i}, {j}) is not a dual node") from None

    def edge_of(self, r: int):
        if not 0 <= r < self.m:
            raise DomainError(f"dual node {r} out of range [0, {self.m})")
        return int(self.pairs[r, 0]), int(self.pairs[r, 1])

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=np.int64)
        np.add.at(deg, self.rows, 1)
        np.add.at(deg, self.cols, 1)
        return deg

    def directed_arcs(self):
        """Both orientations of every dual edge, built lazily and cached."""
        if "src" not in self._cache:
            self._cache["src"] = np.concatenate([self.rows, self.cols])
            self._cache["dst"] = np.concatenate([self.cols, self.rows])
        return self._cache["src"], self._cache["dst"]


class _CompleteDualIndex:
    """Vectorized pair -> dual-node index for the complete graph."""

    def __init__(self, n: int):
        self.n = n

    def __call__(self, i, j):
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        lo = np.minimum(i, j)
        hi = np.maximum(i, j)
        return lo * self.n - lo * (lo + 1) // 2 + (hi - lo - 1)


def build_dual_complete(n: int) -> DualTopology:
    """Dual of K_n via per-vertex incidence pairing, O(n^3) time and memory.

    Two distinct edges of a simple graph share at most one endpoint, so
    enumerating, for every vertex v, all pairs of edges incident to v lists
    each dual edge exactly once.
    """
    if n < 2:
        raise DomainError(f"complete-graph dual needs n >= 2, got n={n}")
    m = n * (n - 1) // 2
    pair_index = _CompleteDualIndex(n)
    iu, ju = np.triu_indices(n, k=1)
    pairs = np.stack([iu, ju], axis=1).astype(np.int32)

    total = n * (n - 1) * (n - 2) // 2
    rows = np.empty(total, dtype=np.int32)
    cols = np.empty(total, dtype=np.int32)
    if n > 2:
        pi, pj = np.triu_indices(n - 1, k=1)  # pairs among n-1 incident edges
        chunk = pi.size
        pos = 0
        for v in range(n):
            others = np.concatenate([np.arange(v), np.arange(v + 1, n)])
            incident = pair_index(np.full(n - 1, v), others).astype(np.int32)
            a, b = incident[pi], incident[pj]
            # normalize orientation chunk-wise to keep peak memory ~ the output
            rows[pos : pos + chunk] = np.minimum(a, b)
            cols[pos : pos + chunk] = np.maximum(a, b)
            pos += chunk
    return DualTopology(n_primal=n, m=m, rows=rows, cols=cols, pairs=pairs)


def _validate_simple_edges(edges, directed: bool):
    seen = set()
    cleaned = []
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            raise ValidationError(f"self-loop ({i}, {i}) is not allowed")
        if i < 0 or j < 0:
            raise ValidationError(f"negative node index in edge ({i}, {j})")
        key = (i, j) if directed else (min(i, j), max(i, j))
        if key in seen:
            raise ValidationError(f"duplicate edge ({i}, {j})")
        seen.add(key)
        cleaned.append(key)
    return cleaned


def _pair_dual_edges(edge_list):
    """Dual edges between edge indices sharing an endpoint (each pair once)."""
    incident = {}
    for idx, (a, b) in enumerate(edge_list):
        incident.setdefault(a, []).append(idx)
        incident.setdefault(b, []).append(idx)
    links = set()
    for ids in incident.values():
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                r, c = ids[x], ids[y]
                links.add((r, c) if r < c else (c, r))
    return sorted(links)


def build_dual_undirected(edges) -> DualTopology:
    """Dual of an arbitrary simple undirected graph given as (i, j) pairs.

    Dual node r corresponds to the r-th edge of the input after normalizing
    each pair to i < j (input order preserved).
    """
    edge_list = _validate_simple_edges(edges, directed=False)
    m = len(edge_list)
    n = max((j for _, j in edge_list), default=-1) + 1
    links = _pair_dual_edges(edge_list)
    rows = np.array([r for r, _ in links], dtype=np.int32)
    cols = np.array([c for _, c in links], dtype=np.int32)
    pairs = (
        np.array(edge_list, dtype=np.int32)
        if edge_list
        else np.zeros((0, 2), dtype=np.int32)
    )
    return DualTopology(n_primal=n, m=m, rows=rows, cols=cols, pairs=pairs)


def build_dual_directed(arcs) -> DualTopology:
    """Dual of a simple digraph: one dual node per arc, adjacency by shared
    endpoint. A complete digraph on n nodes yields n(n-1) dual nodes."""
    arc_list = _validate_simple_edges(arcs, directed=True)
    m = len(arc_list)
    n = max((max(i, j) for i, j in arc_list), default=-1) + 1
    links = _pair_dual_edges(arc_list)
    rows = np.array([r for r, _ in links], dtype=np.int32)
    cols = np.array([c for _, c in links], dtype=np.int32)
    pairs = (
        np.array(arc_list, dtype=np.int32)
        if arc_list
        else np.zeros((0, 2), dtype=np.int32)
    )
    return DualTopology(n_primal=n, m=m, rows=rows, cols=cols, pairs=pairs)


def line_graph_bruteforce(primal_edges):
    """O(m^2) endpoint-sharing test; reference oracle for the dual builders.

    Returns the dual edge list as sorted pairs of edge indices.
    """
    edge_list = _validate_simple_edges(primal_edges, directed=False)
    out = []
    for x in range(len(edge_list)):
        a, b = edge_list[x]
        for y in range(x + 1, len(edge_list)):
            c, d = edge_list[y]
            if a == c or a == d or b == c or b == d:
                out.append((x, y))
    return sorted(out)


def dual_edge_set(topo: DualTopology):
    """Dual edges as a set of (r, c) index pairs, r < c."""
    return {(int(r), int(c)) for r, c in zip(topo.rows, topo.cols)}
