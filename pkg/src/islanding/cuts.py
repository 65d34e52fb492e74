"""Partitions, Laplacians and the cut-based islanding metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph

from .config import IslandingConfig, RegressionParams


@dataclass(frozen=True)
class Partition:
    """Disjoint cover of ``{0, ..., n-1}`` by nonempty islands.

    Islands are sorted tuples, ordered by their smallest member, so two
    partitions with the same blocks compare equal.  ``origin`` tags the
    producing strategy and does not take part in comparisons.
    """

    islands: tuple[tuple[int, ...], ...]
    origin: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        canon = tuple(sorted((tuple(sorted(int(i) for i in s)) for s in self.islands), key=lambda s: s[:1]))
        if any(len(s) == 0 for s in canon):
            raise ValueError("empty island")
        members = [i for s in canon for i in s]
        if len(members) != len(set(members)):
            raise ValueError("islands overlap")
        if members and sorted(members) != list(range(len(members))):
            raise ValueError("islands must cover 0..n-1 exactly")
        object.__setattr__(self, "islands", canon)

    @classmethod
    def from_labels(cls, labels: Sequence[int], origin: str = "") -> "Partition":
        labels = np.asarray(labels)
        if labels.size == 0:
            return cls((), origin)
        return cls(tuple(tuple(np.flatnonzero(labels == v).tolist()) for v in np.unique(labels)), origin)

    @classmethod
    def single(cls, n: int, origin: str = "") -> "Partition":
        return cls((tuple(range(n)),), origin)

    @classmethod
    def singletons(cls, n: int, origin: str = "") -> "Partition":
        return cls(tuple((i,) for i in range(n)), origin)

    def __len__(self) -> int:
        return len(self.islands)

    def __iter__(self):
        return iter(self.islands)

    @property
    def n(self) -> int:
        return sum(len(s) for s in self.islands)

    def labels(self) -> np.ndarray:
        out = np.empty(self.n, dtype=int)
        for k, s in enumerate(self.islands):
            out[list(s)] = k
        return out

    def indicator(self) -> np.ndarray:
        X = np.zeros((self.n, len(self)))
        X[np.arange(self.n), self.labels()] = 1.0
        return X

    def normalized_indicator(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        X = self.indicator()
        vol = X.T @ w
        return np.sqrt(w)[:, None] * X / np.sqrt(vol)[None, :]

    def with_origin(self, origin: str) -> "Partition":
        return Partition(self.islands, origin)

    def refines(self, other: "Partition") -> bool:
        lab = other.labels()
        return all(len({int(lab[i]) for i in s}) == 1 for s in self.islands)

    def volumes(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return np.array([w[list(s)].sum() for s in self.islands])

    def relabel(self, mapping: Sequence[int] | np.ndarray, n: int | None = None) -> "Partition":
        """Map island members through ``mapping`` (local -> global index)."""
        mapping = np.asarray(mapping)
        return Partition(tuple(tuple(int(mapping[i]) for i in s) for s in self.islands), self.origin)


# ---------------------------------------------------------------- Laplacians


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def laplacian(A) -> np.ndarray:
    """``diag(A 1) - A`` of a symmetric weight matrix; sparse in, sparse out."""
    if sp.issparse(A):
        if abs(A - A.T).max() > 1e-9 * max(1.0, abs(A).max()):
            raise ValueError("weight matrix must be symmetric")
        A = A.tocsr().astype(float)
        A = A - sp.diags(A.diagonal())
        return (sp.diags(np.asarray(A.sum(axis=1)).ravel()) - A).tocsr()
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("weight matrix must be square")
    if not np.allclose(A, A.T, rtol=1e-9, atol=1e-12):
        raise ValueError("weight matrix must be symmetric")
    A = A - np.diag(np.diag(A))
    return np.diag(A.sum(axis=1)) - A


def normalized_laplacian(A, w) -> np.ndarray:
    """``diag(w)^-1/2 L(A) diag(w)^-1/2``."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("volumes must be positive")
    d = 1.0 / np.sqrt(w)
    L = laplacian(A)
    if sp.issparse(L):
        D = sp.diags(d)
        return (D @ L @ D).tocsr()
    return d[:, None] * L * d[None, :]


# --------------------------------------------------------------------- cuts


def _members(target, n: int) -> np.ndarray:
    idx = np.fromiter((int(i) for i in target), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError("island member out of range")
    return idx


def cut(A, target) -> float:
    """Total weight leaving ``target`` (a bus set or a :class:`Partition`).

    For a partition the per-island cuts are summed, so every crossing edge
    of a symmetric matrix counts twice; this equals ``tr X^T L(A) X``.
    Only for symmetric ``A`` does that quadratic form identity hold; a
    signed flow matrix gives the net flow out of the set.
    """
    A = _dense(A)
    n = A.shape[0]
    if isinstance(target, Partition):
        if target.n != n:
            raise IndexError("partition size does not match matrix")
        lab = target.labels()
        cross = lab[:, None] != lab[None, :]
        return float(A[cross].sum())
    idx = _members(target, n)
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return float(A[np.ix_(mask, ~mask)].sum())


def ncut(A, w, partition: Partition) -> float:
    """Sum over islands of cut weight divided by island volume."""
    A = _dense(A)
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("volumes must be positive")
    total = 0.0
    for s in partition:
        if not s:
            raise ValueError("empty island")
        total += cut(A, s) / w[list(s)].sum()
    return total


def combined_matrix(Phi_full, P_abs, Delta=None, alpha_c: float = 1.0, alpha_d: float = 1.0, alpha_eci: float = 0.0) -> np.ndarray:
    """Weighted edge matrix ``alpha_C Phi + alpha_D |P| + alpha_ECI Delta``."""
    if min(alpha_c, alpha_d, alpha_eci) < 0:
        raise ValueError("weights must be nonnegative")
    if alpha_eci > 0 and Delta is None:
        raise ValueError("alpha_eci > 0 needs an electrical distance matrix")
    A = alpha_c * np.asarray(Phi_full, dtype=float) + alpha_d * np.asarray(P_abs, dtype=float)
    if alpha_eci > 0:
        A = A + alpha_eci * np.asarray(Delta, dtype=float)
    return A


def imbalance(injection: np.ndarray, island: Iterable[int]) -> float:
    """``p(s)``: load minus generation inside the island."""
    return float(np.asarray(injection)[list(island)].sum())


def excess_load(injection: np.ndarray, target) -> float:
    """``max[p(s), 0]`` for a set, summed over islands for a partition."""
    if isinstance(target, Partition):
        return float(sum(max(imbalance(injection, s), 0.0) for s in target))
    return max(imbalance(injection, target), 0.0)


# ------------------------------------------------------------ refinements


def connected_components_refine(partition: Partition, adjacency) -> Partition:
    """Split every island into the connected components it induces."""
    adj = _dense(adjacency) != 0
    pieces: list[tuple[int, ...]] = []
    for s in partition:
        idx = np.array(s)
        sub = sp.csr_matrix(adj[np.ix_(idx, idx)])
        ncomp, lab = csgraph.connected_components(sub, directed=False)
        for c in range(ncomp):
            pieces.append(tuple(idx[lab == c].tolist()))
    return Partition(tuple(pieces), partition.origin)


def meet(p1: Partition, p2: Partition) -> Partition:
    """All nonempty pairwise intersections of islands of the two partitions."""
    if p1.n != p2.n:
        raise ValueError("partitions cover different sets")
    l1, l2 = p1.labels(), p2.labels()
    key = l1 * (len(p2) + 1) + l2
    return Partition.from_labels(key, p1.origin or p2.origin)


def is_connected_island(adjacency, island: Sequence[int]) -> bool:
    idx = np.array(list(island))
    sub = sp.csr_matrix(_dense(adjacency)[np.ix_(idx, idx)] != 0)
    return csgraph.connected_components(sub, directed=False)[0] == 1


# ------------------------------------------------------------------ report


@dataclass(frozen=True)
class MetricReport:
    coherency_c: float
    disruption_d: float
    eci: float | None
    excess_load: float
    shed_mf: float
    shed: float  # the estimate that enters the cost
    cost_f: float

    def to_dict(self) -> dict:
        return {
            "C": self.coherency_c,
            "D": self.disruption_d,
            "ECI": self.eci,
            "S_EL": self.excess_load,
            "S_MF": self.shed_mf,
            "S": self.shed,
            "F": self.cost_f,
        }


def metric_report(
    grid,
    matrices,
    partition: Partition,
    config: IslandingConfig | None = None,
    shed_estimator: Callable[[tuple[int, ...]], float] | None = None,
) -> MetricReport:
    """Every islanding metric of ``partition`` and the weighted cost F.

    The shed term of F is the max-flow estimate, replaced by the
    regression-corrected estimate when the config carries nonzero
    regression coefficients, or by ``shed_estimator(island)`` (e.g. an
    externally computed AC value) when given.
    """
    from .shed import regressed_island_shed, shed_max_flow

    cfg = config or IslandingConfig(k=max(1, len(partition)))
    if partition.n != grid.n:
        raise IndexError("partition does not cover the grid")
    C = cut(matrices.Phi_full, partition)
    D = cut(matrices.P_abs, partition)
    eci = cut(matrices.Delta, partition) if matrices.Delta is not None else None
    s_el = excess_load(grid.injection, partition)
    s_mf = 0.0
    shed = 0.0
    for s in partition:
        mf = shed_max_flow(grid, s).shed
        s_mf += mf
        if shed_estimator is not None:
            shed += float(shed_estimator(s))
        elif not cfg.regress.is_identity:
            shed += regressed_island_shed(grid, s, matrices.volumes, cfg.regress)
        else:
            shed += mf
    F = cfg.alpha_c * C + cfg.alpha_d * D + shed
    if eci is not None:
        F += cfg.alpha_eci * eci
    return MetricReport(C, D, eci, s_el, s_mf, shed, F)


__all__ = [
    "Partition",
    "MetricReport",
    "RegressionParams",
    "laplacian",
    "normalized_laplacian",
    "cut",
    "ncut",
    "combined_matrix",
    "imbalance",
    "excess_load",
    "connected_components_refine",
    "meet",
    "metric_report",
]
