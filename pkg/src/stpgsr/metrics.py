"""Weighted-graph topology measures and the per-sample evaluation report.

Conventions (standard connectome-toolbox choices, fixed here so reports are
reproducible): path-based measures map weight w to length 1/w and treat w = 0
as an absent edge; weights below ``WEIGHT_EPS`` are treated as absent;
clustering uses the Onnela geometric-mean form; community detection is seeded
greedy modularity maximization with aggregation passes; the small-world null
model shuffles the (sorted) edge-weight multiset uniformly over all node-pair
slots, preserving the weight distribution and support count.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from .errors import ConvergenceError, DomainError
from .graphs import devectorize, upper_tri_vectorize, validate_connectome

WEIGHT_EPS = 1e-12
SURROGATE_COUNT = 10

METRIC_NAMES = (
    "degree",
    "betweenness",
    "closeness",
    "eigenvector",
    "clustering",
    "participation",
    "small_worldness",
    "edge_mae",
)

_VECTOR_METRICS = ("degree", "betweenness", "closeness", "eigenvector", "clustering", "participation")


def _support(w: np.ndarray) -> np.ndarray:
    return w > WEIGHT_EPS


def degree_centrality(weights: np.ndarray) -> np.ndarray:
    """Node strength normalized by n-1."""
    w = validate_connectome(weights)
    n = w.shape[0]
    if n < 2:
        raise DomainError("degree centrality needs at least 2 nodes")
    return w.sum(axis=1) / (n - 1)


def _adjacency_lists(w: np.ndarray):
    support = _support(w)
    adj = []
    for i in range(w.shape[0]):
        nbrs = np.nonzero(support[i])[0]
        adj.append((nbrs, 1.0 / w[i, nbrs]))
    return adj


def _dijkstra(adj, source: int, n: int, with_paths: bool = False):
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    sigma = np.zeros(n)
    sigma[source] = 1.0
    preds = [[] for _ in range(n)] if with_paths else None
    done = np.zeros(n, dtype=bool)
    order = []
    heap = [(0.0, source)]
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        order.append(v)
        nbrs, lengths = adj[v]
        for u, length in zip(nbrs, lengths):
            nd = d + length
            if nd < dist[u]:
                dist[u] = nd
                heapq.heappush(heap, (nd, int(u)))
                if with_paths:
                    sigma[u] = sigma[v]
                    preds[u] = [v]
            elif with_paths and nd == dist[u] and not done[u]:
                sigma[u] += sigma[v]
                preds[u].append(v)
    return dist, sigma, preds, order


def shortest_path_matrix(weights: np.ndarray) -> np.ndarray:
    """All-pairs distances with edge length 1/weight; +inf when unreachable."""
    w = validate_connectome(weights)
    n = w.shape[0]
    adj = _adjacency_lists(w)
    out = np.empty((n, n))
    for i in range(n):
        out[i], _, _, _ = _dijkstra(adj, i, n)
    return out


def betweenness_centrality(weights: np.ndarray) -> np.ndarray:
    """Brandes accumulation over weighted shortest-path DAGs, normalized by
    (n-1)(n-2)/2; equal-length ties split by path counts."""
    w = validate_connectome(weights)
    n = w.shape[0]
    if n < 3:
        raise DomainError("betweenness needs at least 3 nodes")
    adj = _adjacency_lists(w)
    bc = np.zeros(n)
    for s in range(n):
        _, sigma, preds, order = _dijkstra(adj, s, n, with_paths=True)
        delta = np.zeros(n)
        for v in reversed(order):
            for p in preds[v]:
                delta[p] += sigma[p] / sigma[v] * (1.0 + delta[v])
            if v != s:
                bc[v] += delta[v]
    # each unordered pair is visited from both endpoints
    return bc / ((n - 1) * (n - 2))


def closeness_centrality(weights: np.ndarray) -> np.ndarray:
    """Component-scaled harmonic convention: r_i^2 / ((n-1) * sum of distances)
    with r_i the number of reachable nodes; (n-1)/sum on connected graphs."""
    w = validate_connectome(weights)
    n = w.shape[0]
    dist = shortest_path_matrix(w)
    out = np.zeros(n)
    for i in range(n):
        finite = np.isfinite(dist[i])
        finite[i] = False
        r = int(finite.sum())
        total = dist[i, finite].sum()
        if r > 0 and total > 0:
            out[i] = (r * r) / (total * (n - 1))
    return out


def eigenvector_centrality(weights: np.ndarray, tol: float = 1e-10, max_iter: int = 1000) -> np.ndarray:
    """Dominant eigenvector by shifted power iteration, L2-normalized and
    nonnegatively oriented.

    The shift (max row strength) makes the dominant eigenvalue strictly
    largest in magnitude even on bipartite graphs without changing the
    eigenvector.
    """
    w = validate_connectome(weights)
    n = w.shape[0]
    if not np.any(w > 0):
        raise DomainError("eigenvector centrality of an all-zero matrix")
    shift = float(w.sum(axis=1).max())
    v = np.full(n, 1.0 / math.sqrt(n))
    for _ in range(max_iter):
        y = w @ v + shift * v
        norm = np.linalg.norm(y)
        if norm == 0:
            raise DomainError("power iteration collapsed to zero")
        y /= norm
        if np.abs(y - v).max() < tol:
            return y
        v = y
    raise ConvergenceError(
        f"eigenvector centrality did not converge in {max_iter} iterations",
        iterate=v,
    )


def clustering_coefficient(weights: np.ndarray) -> np.ndarray:
    """Onnela weighted clustering: geometric-mean triangle intensity over
    k(k-1) neighbor pairs, with weights rescaled by the global max."""
    w = validate_connectome(weights)
    n = w.shape[0]
    wmax = w.max()
    if wmax <= 0:
        return np.zeros(n)
    cube = np.cbrt(w / wmax)
    cyc = np.diag(cube @ cube @ cube)
    k = _support(w).sum(axis=1).astype(float)
    out = np.zeros(n)
    mask = k >= 2
    out[mask] = cyc[mask] / (k[mask] * (k[mask] - 1.0))
    return out


# ---------------------------------------------------------------------------
# community structure


def modularity(weights: np.ndarray, labels: np.ndarray) -> float:
    """Weighted Newman modularity at resolution 1."""
    w = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(labels)
    m2 = w.sum()
    if m2 <= 0:
        return 0.0
    strength = w.sum(axis=1)
    q = 0.0
    for c in np.unique(labels):
        members = labels == c
        q += w[np.ix_(members, members)].sum() / m2
        q -= (strength[members].sum() / m2) ** 2
    return q


def _move_nodes(b: np.ndarray, order: np.ndarray):
    """One local-moving phase; returns labels and whether anything moved."""
    n = b.shape[0]
    m2 = b.sum()
    if m2 <= 0:
        return np.arange(n), False
    strength = b.sum(axis=1)
    labels = np.arange(n)
    com_strength = strength.copy()
    improved = False
    moved = True
    while moved:
        moved = False
        for i in order:
            current = labels[i]
            # weights from i into each neighboring community (self excluded)
            link = {}
            row = b[i]
            for j in np.nonzero(row)[0]:
                if j != i:
                    link[labels[j]] = link.get(labels[j], 0.0) + row[j]
            com_strength[current] -= strength[i]
            stay_score = link.get(current, 0.0) - strength[i] * com_strength[current] / m2
            best_c, best_score = current, stay_score
            for c, k in link.items():
                if c == current:
                    continue
                score = k - strength[i] * com_strength[c] / m2
                if score > best_score + 1e-12:
                    best_c, best_score = c, score
            com_strength[best_c] += strength[i]
            if best_c != current:
                labels[i] = best_c
                moved = True
                improved = True
    return labels, improved


def _canonical_order(strength: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Seeded shuffle, then stable sort by descending strength, so the visit
    order tracks the graph rather than node labels."""
    perm = rng.permutation(strength.size)
    return perm[np.argsort(-strength[perm], kind="stable")]


def detect_communities(weights: np.ndarray, seed: int = 0) -> np.ndarray:
    """Seeded greedy modularity maximization with aggregation passes.

    Returns one community id per node, relabeled by first occurrence.
    """
    w = validate_connectome(weights)
    n = w.shape[0]
    rng = np.random.default_rng(seed)
    assignment = np.arange(n)
    level = np.where(_support(w), w, 0.0)
    while True:
        order = _canonical_order(level.sum(axis=1), rng)
        labels, improved = _move_nodes(level, order)
        if not improved:
            break
        _, compact = np.unique(labels, return_inverse=True)
        assignment = compact[assignment]
        k = compact.max() + 1
        member = np.zeros((k, level.shape[0]))
        member[compact, np.arange(level.shape[0])] = 1.0
        level = member @ level @ member.T
        if k == level.shape[0] and k == 1:
            break
    _, first = np.unique(assignment, return_index=True)
    relabel = {assignment[i]: rank for rank, i in enumerate(sorted(first))}
    return np.array([relabel[c] for c in assignment])


def participation_coefficient(weights: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """1 minus the sum of squared per-community strength fractions."""
    w = validate_connectome(weights)
    labels = np.asarray(labels)
    if labels.shape != (w.shape[0],):
        raise DomainError("one community id per node required")
    strength = w.sum(axis=1)
    out = np.zeros(w.shape[0])
    nz = strength > 0
    acc = np.zeros(w.shape[0])
    for c in np.unique(labels):
        kappa = w[:, labels == c].sum(axis=1)
        acc[nz] += (kappa[nz] / strength[nz]) ** 2
    out[nz] = 1.0 - acc[nz]
    return out


# ---------------------------------------------------------------------------
# small-worldness


def _is_connected(support: np.ndarray) -> bool:
    n = support.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        v = stack.pop()
        for u in np.nonzero(support[v])[0]:
            if not seen[u]:
                seen[u] = True
                stack.append(int(u))
    return bool(seen.all())


def characteristic_path_length(weights: np.ndarray) -> float:
    """Mean shortest-path distance over finite off-diagonal pairs."""
    dist = shortest_path_matrix(weights)
    n = dist.shape[0]
    off = ~np.eye(n, dtype=bool)
    finite = np.isfinite(dist) & off
    if not finite.any():
        raise DomainError("no finite pairwise distances")
    return float(dist[finite].mean())


def small_worldness(weights: np.ndarray, seed: int = 0) -> float:
    """(C/C_rand) / (L/L_rand) against seeded weight-shuffle surrogates."""
    w = validate_connectome(weights)
    n = w.shape[0]
    w = np.where(_support(w), w, 0.0)
    if n < 3:
        raise DomainError("small-worldness needs at least 3 nodes")
    if not _is_connected(w > 0):
        raise DomainError("graph is disconnected after weight thresholding")

    c_obs = float(clustering_coefficient(w).mean())
    l_obs = characteristic_path_length(w)

    slots = np.sort(upper_tri_vectorize(w))  # sorted: invariant to node order
    rng = np.random.default_rng(seed)
    c_rand = np.empty(SURROGATE_COUNT)
    l_rand = np.empty(SURROGATE_COUNT)
    for r in range(SURROGATE_COUNT):
        surrogate = devectorize(slots[rng.permutation(slots.size)], n)
        c_rand[r] = clustering_coefficient(surrogate).mean()
        l_rand[r] = characteristic_path_length(surrogate)
    c_ref = float(c_rand.mean())
    l_ref = float(l_rand.mean())
    if c_ref == 0.0 or l_ref == 0.0:
        raise DomainError("degenerate surrogate ensemble (zero C_rand or L_rand)")
    return (c_obs / c_ref) / (l_obs / l_ref)


# ---------------------------------------------------------------------------
# report assembly


def edge_mae(a_pred: np.ndarray, a_true: np.ndarray) -> float:
    """Mean absolute error over the upper triangle."""
    up = upper_tri_vectorize(a_pred)
    ut = upper_tri_vectorize(a_true)
    if up.shape != ut.shape:
        raise DomainError(f"size mismatch: {up.shape} vs {ut.shape}")
    return float(np.abs(up - ut).mean())


def metric_mae(v_pred: np.ndarray, v_true: np.ndarray) -> float:
    v_pred = np.asarray(v_pred, dtype=np.float64)
    v_true = np.asarray(v_true, dtype=np.float64)
    if v_pred.shape != v_true.shape:
        raise DomainError(f"size mismatch: {v_pred.shape} vs {v_true.shape}")
    return float(np.abs(v_pred - v_true).mean())


def _vector_metric(name: str, w: np.ndarray, seed: int) -> np.ndarray:
    if name == "degree":
        return degree_centrality(w)
    if name == "betweenness":
        return betweenness_centrality(w)
    if name == "closeness":
        return closeness_centrality(w)
    if name == "eigenvector":
        return eigenvector_centrality(w)
    if name == "clustering":
        return clustering_coefficient(w)
    if name == "participation":
        return participation_coefficient(w, detect_communities(w, seed))
    raise DomainError(f"unknown metric {name!r}")


def evaluate_sample(a_pred: np.ndarray, a_true: np.ndarray, seed: int = 0) -> dict:
    """All eight per-sample values; failures are recorded, never raised.

    Vector measures contribute their per-node MAE (the graph-level mean
    absolute difference is also reported separately), small-worldness the
    absolute scalar difference, plus the raw edge MAE.
    """
    pred = validate_connectome(a_pred, "prediction")
    true = validate_connectome(a_true, "ground truth")
    if pred.shape != true.shape:
        raise DomainError(f"size mismatch: {pred.shape} vs {true.shape}")

    metrics: dict[str, float | None] = {}
    errors: dict[str, str] = {}
    mean_diff: dict[str, float | None] = {}

    for name in _VECTOR_METRICS:
        try:
            vp = _vector_metric(name, pred, seed)
            vt = _vector_metric(name, true, seed)
            metrics[name] = metric_mae(vp, vt)
            mean_diff[name] = abs(float(vp.mean()) - float(vt.mean()))
        except (DomainError, ConvergenceError) as exc:
            metrics[name] = None
            mean_diff[name] = None
            errors[name] = str(exc)

    try:
        metrics["small_worldness"] = abs(
            small_worldness(pred, seed) - small_worldness(true, seed)
        )
    except (DomainError, ConvergenceError) as exc:
        metrics["small_worldness"] = None
        errors["small_worldness"] = str(exc)

    metrics["edge_mae"] = edge_mae(pred, true)

    out = {"metrics": metrics, "graph_mean_abs_diff": mean_diff}
    if errors:
        out["errors"] = errors
    return out


def aggregate_metrics(samples: list[dict]) -> dict:
    """Per-metric mean over samples, skipping failed (None) entries."""
    agg = {}
    for name in METRIC_NAMES:
        vals = [s["metrics"][name] for s in samples if s["metrics"].get(name) is not None]
        agg[name] = float(np.mean(vals)) if vals else None
    return agg
