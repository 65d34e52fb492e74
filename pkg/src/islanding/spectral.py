"""Spectral embeddings and the hierarchical / constrained spectral clusterings."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .cuts import Partition, normalized_laplacian
from .grid import merge_pendants

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000


class EigenError(RuntimeError):
    pass


class BisectionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EigenBasis:
    values: np.ndarray
    vectors: np.ndarray


def _fix_signs(V: np.ndarray) -> np.ndarray:
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * max(1.0, np.abs(col).max()))
        if nz.size and col[nz[0]] < 0:
            V[:, j] = -col
    return V


def smallest_eigenpairs(M, k: int, tol: float = 1e-8, dense_limit: int = DENSE_LIMIT) -> EigenBasis:
    """The ``k`` smallest eigenpairs of a symmetric matrix, ascending.

    Dense LAPACK tridiagonalisation up to ``dense_limit`` rows, ARPACK
    Lanczos in shift-invert mode beyond.  Each vector's first nonzero
    component is made positive.
    """
    n = M.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n <= dense_limit:
        dense = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
        dense = 0.5 * (dense + dense.T)
        vals, vecs = scipy.linalg.eigh(dense, subset_by_index=[0, k - 1])
    else:
        Ms = sp.csc_matrix(M)
        try:
            vals, vecs = spla.eigsh(Ms, k=k, sigma=-1e-3, which="LM", tol=tol * 1e-2, maxiter=50 * n)
        except spla.ArpackNoConvergence as exc:
            raise EigenError(f"Lanczos did not converge for k={k}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        vecs, _ = np.linalg.qr(vecs)
    vecs = _fix_signs(vecs)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    R = M @ vecs - vecs * vals
    res = np.linalg.norm(R, axis=0)
    if np.any(res > max(tol, 1e-10) * scale * 10):
        raise EigenError(f"eigen residual {res.max():.2e} exceeds tolerance")
    return EigenBasis(np.asarray(vals), np.asarray(vecs))


def sphere_embedding(vectors) -> np.ndarray:
    """Rows of the eigenvector matrix scaled to unit length.

    An all-zero row is mapped to the first basis direction.
    """
    U = vectors.vectors if isinstance(vectors, EigenBasis) else np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(U, axis=1)
    out = np.zeros_like(U)
    ok = norms > 1e-300
    out[ok] = U[ok] / norms[ok, None]
    out[~ok, 0] = 1.0
    return out


def edge_lengths(points: np.ndarray, adjacency) -> np.ndarray:
    """Cosine distance ``1 - <x_i, x_j>`` on every edge, ``inf`` elsewhere."""
    adj = adjacency.toarray() if sp.issparse(adjacency) else np.asarray(adjacency)
    adj = adj != 0
    np.fill_diagonal(adj, False)
    L = np.clip(1.0 - points @ points.T, 0.0, 2.0)
    return np.where(adj, L, np.inf)


def embedded_distances(points: np.ndarray, adjacency) -> np.ndarray:
    """All-pairs shortest path lengths over the cosine-weighted graph.

    Unreachable pairs come back as ``inf``.
    """
    G = csgraph.csgraph_from_dense(edge_lengths(points, adjacency), null_value=np.inf)
    D = csgraph.shortest_path(G, method="D", directed=False)
    np.fill_diagonal(D, 0.0)
    return D


@dataclass(frozen=True, eq=False)
class Embedding:
    points: np.ndarray
    lengths: np.ndarray
    dist: np.ndarray
    basis: EigenBasis


def embed(A, w, k: int, adjacency) -> Embedding:
    basis = smallest_eigenpairs(normalized_laplacian(A, w), k)
    pts = sphere_embedding(basis)
    lengths = edge_lengths(pts, adjacency)
    G = csgraph.csgraph_from_dense(lengths, null_value=np.inf)
    dist = csgraph.shortest_path(G, method="D", directed=False)
    np.fill_diagonal(dist, 0.0)
    return Embedding(pts, lengths, dist, basis)


def complete_linkage(dist: np.ndarray, n_clusters: int) -> np.ndarray:
    """Agglomerate with complete linkage until ``n_clusters`` remain.

    Among equal linkage distances the lexicographically smallest pair of
    clusters (identified by their smallest member) merges first.  Returns
    cluster labels ``0..n_clusters-1`` ordered by smallest member.
    """
    D = np.array(dist, dtype=float)
    n = D.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError("n_clusters out of range")
    np.fill_diagonal(D, np.inf)
    owner = np.arange(n)
    active = np.ones(n, dtype=bool)
    big = np.nextafter(np.inf, 0)
    # +inf entries (unreachable) must still merge eventually: map to largest finite
    D = np.where(np.isinf(D), big, D)
    np.fill_diagonal(D, np.inf)
    rowmin = D.min(axis=1)
    rowarg = D.argmin(axis=1)
    for _ in range(n - n_clusters):
        cand = np.where(active, rowmin, np.inf)
        i = int(np.argmin(cand))
        j = int(rowarg[i])
        a, b = min(i, j), max(i, j)
        D[a, :] = np.maximum(D[a, :], D[b, :])
        D[:, a] = D[a, :]
        D[a, a] = np.inf
        D[b, :] = np.inf
        D[:, b] = np.inf
        active[b] = False
        owner[owner == b] = a
        rowmin[b] = np.inf
        rowmin[a] = D[a].min()
        rowarg[a] = int(D[a].argmin())
        stale = active & ((rowarg == a) | (rowarg == b))
        stale[a] = False
        for r in np.flatnonzero(stale):
            rowmin[r] = D[r].min()
            rowarg[r] = int(D[r].argmin())
        tie = active & (D[:, a] == rowmin) & (a < rowarg)
        tie[a] = False
        rowarg[tie] = a
    reps = np.unique(owner)
    relabel = {int(r): k for k, r in enumerate(reps)}
    return np.array([relabel[int(o)] for o in owner], dtype=int)


def _graph_mask(A, adjacency) -> np.ndarray:
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    mask = A != 0
    if adjacency is not None:
        mask = mask | (np.asarray(adjacency) != 0)
    np.fill_diagonal(mask, False)
    return mask


def hsc_partition(A, w, k: int, adjacency=None, merge: bool = True, origin: str = "") -> Partition:
    """Hierarchical spectral clustering of the graph of ``A`` into ``k`` islands.

    Pipeline: fold pendant vertices (never below ``k`` super-nodes), embed
    the super-nodes on the unit sphere with the ``k`` smallest eigenvectors
    of ``L_sym(A|w)``, take shortest-path distances over the embedded
    graph, complete-linkage agglomeration to ``k`` clusters, unfold.
    """
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)
    w = np.asarray(w, dtype=float)
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"cannot split {n} vertices into {k} islands")
    if k == 1:
        return Partition.single(n, origin)
    mask = _graph_mask(A, adjacency)
    if merge:
        pm = merge_pendants(A, w, adjacency=mask, min_nodes=k)
        Am, wm, adj, node_of = pm.matrix, pm.volumes, pm.adjacency, pm.node_of
    else:
        Am, wm, adj, node_of = A, w, mask, np.arange(n)
    if Am.shape[0] == k:
        labels = np.arange(k)
    else:
        emb = embed(Am, wm, k, adj)
        labels = complete_linkage(emb.dist, k)
    return Partition.from_labels(labels[node_of], origin)


def csc_partition(P_abs, w, groups: Partition, adjacency=None, origin: str = "") -> Partition:
    """Constrained spectral clustering around fixed coherent generator groups.

    ``groups`` partitions the generator buses ``0..n_g-1``.  Every bus joins
    the group of its nearest generator in the embedded graph, ties going to
    the group listed first.
    """
    P_abs = np.asarray(P_abs, dtype=float)
    w = np.asarray(w, dtype=float)
    n = P_abs.shape[0]
    k = len(groups)
    if k == 0:
        raise ValueError("no generator groups")
    n_g = groups.n
    gen_label = np.full(n, -1)
    gen_label[:n_g] = groups.labels()
    if k == 1:
        return Partition.single(n, origin)
    mask = _graph_mask(P_abs, adjacency)
    pm = merge_pendants(P_abs, w, adjacency=mask, min_nodes=k, labels=gen_label)
    node_label = np.full(len(pm.groups), -1)
    for c, members in enumerate(pm.groups):
        labs = {int(gen_label[v]) for v in members if gen_label[v] >= 0}
        if labs:
            node_label[c] = min(labs)
    emb = embed(pm.matrix, pm.volumes, k, pm.adjacency)
    gen_nodes = np.flatnonzero(node_label >= 0)
    out = node_label.copy()
    for c in np.flatnonzero(node_label < 0):
        d = emb.dist[c, gen_nodes]
        if not np.isfinite(d).any():
            raise ValueError(f"bus {pm.groups[c][0]} cannot reach any generator in the embedded graph")
        best = d.min()
        tied = gen_nodes[d == best]
        out[c] = node_label[tied].min()
    return Partition.from_labels(out[pm.node_of], origin)


def recursive_bisection(
    base: Partition,
    bisector: Callable[[tuple[int, ...]], Partition],
    steps: int,
    w,
) -> Partition:
    """Split the largest-volume island ``steps`` times.

    ``bisector(island)`` returns a two-island :class:`Partition` of the
    island's local positions ``0..len(island)-1``.  Volume ties go to the
    island listed first.
    """
    w = np.asarray(w, dtype=float)
    islands = list(base.islands)
    for _ in range(steps):
        vols = [w[list(s)].sum() for s in islands]
        top = int(np.argmax(vols))
        s = islands[top]
        if len(s) < 2:
            raise BisectionError(f"largest island {s} is a singleton")
        halves = bisector(s)
        if len(halves) != 2:
            raise BisectionError("bisector must return two islands")
        idx = np.array(s)
        islands[top : top + 1] = [tuple(idx[list(h)].tolist()) for h in halves]
    return Partition(tuple(islands), base.origin)
