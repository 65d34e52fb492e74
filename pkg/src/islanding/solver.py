"""Aggregated grids, greedy coarsening and exact branch-and-bound islanding."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .config import RegressionParams
from .cuts import Partition, combined_matrix, is_connected_island
from .shed import generation_reserve, regressed_shed, shed_max_flow

log = logging.getLogger(__name__)


class DisconnectedIslandError(ValueError):
    pass


class InfeasibleError(RuntimeError):
    pass


def _contract(X: sp.csr_matrix, M: np.ndarray) -> np.ndarray:
    out = (X.T @ sp.csr_matrix(M) @ X).toarray()
    np.fill_diagonal(out, 0.0)
    return out


@dataclass(frozen=True, eq=False)
class AggregatedGrid:
    """Grid whose nodes are islands of a detailed partition.

    Every per-node quantity is the sum over member buses and every
    pairwise quantity the sum over member bus pairs.  ``weights`` is the
    contracted combined edge matrix, so cuts agree with the detailed grid.
    """

    members: tuple[tuple[int, ...], ...]
    max_output: np.ndarray
    output: np.ndarray
    demand: np.ndarray
    load: np.ndarray
    injection: np.ndarray
    volumes: np.ndarray
    flow: np.ndarray  # signed, antisymmetric
    abs_flow: np.ndarray
    limit: np.ndarray
    coupling: np.ndarray
    delta: np.ndarray | None
    weights: np.ndarray
    topology: np.ndarray  # True where at least one line joins the two nodes
    n_bus: int

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def adjacency(self) -> np.ndarray:
        return self.topology

    @property
    def node_of(self) -> np.ndarray:
        out = np.empty(self.n_bus, dtype=int)
        for k, s in enumerate(self.members):
            out[list(s)] = k
        return out

    def edges(self) -> list[tuple[int, int, float]]:
        i, j = np.nonzero(np.triu(self.limit, 1) > 0)
        return [(int(a), int(b), float(self.limit[a, b])) for a, b in zip(i, j)]

    @classmethod
    def from_grid(
        cls,
        grid,
        matrices,
        partition: Partition,
        alpha_c: float = 1.0,
        alpha_d: float = 1.0,
        alpha_eci: float = 0.0,
        check_connected: bool = True,
    ) -> "AggregatedGrid":
        if partition.n != grid.n:
            raise ValueError("partition does not cover the grid")
        if check_connected:
            for s in partition:
                if len(s) > 1 and not is_connected_island(grid.adjacency, s):
                    raise DisconnectedIslandError(f"island {grid.external(s)} is not connected")
        X = sp.csr_matrix(partition.indicator())
        Xt = X.T
        A = combined_matrix(matrices.Phi_full, matrices.P_abs, matrices.Delta, alpha_c, alpha_d, alpha_eci)
        delta = _contract(X, matrices.Delta) if matrices.Delta is not None else None
        return cls(
            members=partition.islands,
            max_output=Xt @ grid.max_output,
            output=Xt @ grid.output,
            demand=Xt @ grid.demand,
            load=Xt @ grid.load,
            injection=Xt @ grid.injection,
            volumes=Xt @ matrices.volumes,
            flow=_contract(X, matrices.P_signed),
            abs_flow=_contract(X, matrices.P_abs),
            limit=_contract(X, grid.limit_matrix),
            coupling=_contract(X, matrices.Phi_full),
            delta=delta,
            weights=_contract(X, A),
            topology=_contract(X, grid.adjacency.astype(float)) > 0,
            n_bus=grid.n,
        )

    def coarsen(self, partition: Partition) -> "AggregatedGrid":
        """Aggregate this grid once more along a partition of its nodes."""
        if partition.n != self.n:
            raise ValueError("partition does not cover the aggregated nodes")
        X = sp.csr_matrix(partition.indicator())
        Xt = X.T
        members = tuple(tuple(sorted(b for k in s for b in self.members[k])) for s in partition)
        return AggregatedGrid(
            members=members,
            max_output=Xt @ self.max_output,
            output=Xt @ self.output,
            demand=Xt @ self.demand,
            load=Xt @ self.load,
            injection=Xt @ self.injection,
            volumes=Xt @ self.volumes,
            flow=_contract(X, self.flow),
            abs_flow=_contract(X, self.abs_flow),
            limit=_contract(X, self.limit),
            coupling=_contract(X, self.coupling),
            delta=_contract(X, self.delta) if self.delta is not None else None,
            weights=_contract(X, self.weights),
            topology=_contract(X, self.topology.astype(float)) > 0,
            n_bus=self.n_bus,
        )


def aggregate_grid(grid, matrices, partition: Partition, alpha_c=1.0, alpha_d=1.0, alpha_eci=0.0) -> AggregatedGrid:
    return AggregatedGrid.from_grid(grid, matrices, partition, alpha_c, alpha_d, alpha_eci)


def lift_partition(agg_partition: Partition, members: Sequence[Sequence[int]], origin: str | None = None) -> Partition:
    """Replace every aggregated node by its member buses."""
    if agg_partition.n != len(members):
        raise ValueError("partition does not cover the aggregated nodes")
    islands = tuple(tuple(b for k in s for b in members[k]) for s in agg_partition)
    return Partition(islands, agg_partition.origin if origin is None else origin)


# ------------------------------------------------------------------ greedy


@dataclass(frozen=True)
class GreedyResult:
    partition: Partition
    cost: float
    feasible: bool
    merges: int


def greedy_cost(agg: AggregatedGrid, partition: Partition) -> float:
    """``Cut_A'(pi) + sum of max[p(s), 0]``."""
    lab = partition.labels()
    cross = lab[:, None] != lab[None, :]
    inj = np.array([agg.injection[list(s)].sum() for s in partition])
    return float(agg.weights[cross].sum() + np.maximum(inj, 0.0).sum())


def greedy_partition(agg: AggregatedGrid, k: int, max_volume: float) -> GreedyResult:
    """Merge adjacent islands pairwise, cheapest first, until ``k`` remain.

    A merge is admissible when the two islands share a line and their joint
    volume stays within ``max_volume``.  Among equally cheap merges the pair
    with the smallest leading members is taken.
    """
    n = agg.n
    if k < 1:
        raise ValueError("k must be positive")
    tol = 1e-12 * max(1.0, abs(max_volume))
    islands: list[list[int]] = [[i] for i in range(n)]
    W = agg.weights.copy()
    T = agg.topology.copy()
    np.fill_diagonal(T, False)
    vol = agg.volumes.astype(float).copy()
    inj = agg.injection.astype(float).copy()
    cost = float(W.sum() + np.maximum(inj, 0.0).sum())
    merges = 0
    while len(islands) > k:
        m = len(islands)
        ex = np.maximum(inj, 0.0)
        delta = -2.0 * W + np.maximum(inj[:, None] + inj[None, :], 0.0) - ex[:, None] - ex[None, :]
        ok = np.triu(T, 1) & (vol[:, None] + vol[None, :] <= max_volume + tol)
        if not ok.any():
            log.info("greedy coarsening stalled at %d islands (target %d)", m, k)
            return GreedyResult(Partition(tuple(map(tuple, islands))), cost, False, merges)
        flat = np.where(ok, delta, np.inf).ravel()
        best = int(np.argmin(flat))
        a, b = divmod(best, m)
        cost += float(flat[best])
        islands[a].extend(islands[b])
        del islands[b]
        W[a, :] += W[b, :]
        W[:, a] += W[:, b]
        W[a, a] = 0.0
        T[a, :] |= T[b, :]
        T[:, a] |= T[:, b]
        T[a, a] = False
        vol[a] += vol[b]
        inj[a] += inj[b]
        keep = np.arange(m) != b
        W = W[np.ix_(keep, keep)]
        T = T[np.ix_(keep, keep)]
        vol, inj = vol[keep], inj[keep]
        merges += 1
    return GreedyResult(Partition(tuple(map(tuple, islands))), cost, True, merges)


# ------------------------------------------------------------- exact search


@dataclass(frozen=True)
class SolverLimits:
    time_s: float | None = 10.0
    nodes: int | None = None


@dataclass(frozen=True, eq=False)
class MiqpSolution:
    partition: Partition
    assignment: np.ndarray  # node -> island
    line_status: dict[tuple[int, int], int]  # 1 = line kept
    flows: dict[tuple[int, int], float]
    shed: np.ndarray  # per node
    dispatch: np.ndarray  # per node
    objective: float
    cut: float
    bound_gap: float
    optimal: bool
    nodes: int
    elapsed_s: float


class _IslandCost:
    def __init__(self, agg: AggregatedGrid, params: RegressionParams | None):
        self.agg = agg
        self.params = params if params is not None and not params.is_identity else None
        self.cache: dict[frozenset, tuple[float, object]] = {}

    def __call__(self, island: tuple[int, ...]) -> float:
        key = frozenset(island)
        hit = self.cache.get(key)
        if hit is None:
            res = shed_max_flow(self.agg, island)
            value = res.shed
            if self.params is not None:
                gr = generation_reserve(self.agg, island, res.dispatch)
                value = regressed_shed(res.shed, gr, float(self.agg.volumes[list(island)].sum()), self.params)
            hit = (value, res)
            self.cache[key] = hit
        return hit[0]

    def result(self, island: tuple[int, ...]):
        self(island)
        return self.cache[frozenset(island)][1]


def partition_objective(agg: AggregatedGrid, partition: Partition, params: RegressionParams | None = None) -> float:
    """``Cut_A'(pi)`` plus the per-island shed estimate."""
    cost = _IslandCost(agg, params)
    lab = partition.labels()
    cross = lab[:, None] != lab[None, :]
    return float(agg.weights[cross].sum() + sum(cost(s) for s in partition))


def exact_solve(
    agg: AggregatedGrid,
    k: int,
    max_volume: float,
    warm_start: Partition | None = None,
    limits: SolverLimits = SolverLimits(),
    params: RegressionParams | None = None,
    allow_fewer: bool = False,
) -> MiqpSolution:
    """Branch-and-bound over node-to-island assignments.

    Minimises ``Cut_A'(pi) + sum_k shed(s_k)`` subject to island volume at
    most ``max_volume``.  Islands are opened in order (node 0 sits in
    island 0, island j+1 opens only after island j) so each set partition
    is visited once.  A partial assignment is bounded below by its cut plus,
    for every unplaced node, the least cut it must add to the islands formed
    so far.  By default exactly ``k`` nonempty islands are required;
    ``allow_fewer`` admits any count up to ``k``.
    """
    t0 = time.perf_counter()
    n = agg.n
    if k < 1:
        raise ValueError("k must be positive")
    if k > n and not allow_fewer:
        raise InfeasibleError(f"cannot form {k} islands from {n} nodes")
    k_eff = min(k, n)
    need = 1 if allow_fewer else k_eff
    w_all = agg.volumes.astype(float)
    vtol = 1e-12 * max(1.0, abs(max_volume))
    if np.any(w_all > max_volume + vtol):
        raise InfeasibleError(f"an aggregated node exceeds the volume cap {max_volume:g}")
    cost = _IslandCost(agg, params)
    identity = cost.params is None

    Wm = agg.weights
    tot = Wm.sum(axis=1)
    order = np.lexsort((np.arange(n), -tot))
    A2 = 2.0 * Wm[np.ix_(order, order)]
    wv = w_all[order]
    deficit = (agg.demand - agg.max_output)[order]

    best_obj = np.inf
    best_part: Partition | None = None
    scale = max(1.0, float(np.abs(Wm).sum()) + float(agg.demand.sum()))
    otol = 1e-9 * scale

    def consider(part: Partition, obj: float) -> None:
        nonlocal best_obj, best_part
        if obj < best_obj - otol or (obj <= best_obj + otol and (best_part is None or part.islands < best_part.islands)):
            best_obj, best_part = obj, part

    if warm_start is not None:
        ws_ok = (
            warm_start.n == n
            and need <= len(warm_start) <= k_eff
            and all(w_all[list(s)].sum() <= max_volume + vtol for s in warm_start)
        )
        if ws_ok:
            consider(Partition(warm_start.islands), partition_objective(agg, warm_start, params))
        else:
            log.warning("warm start ignored: infeasible for k=%d, W=%g", k, max_volume)

    lab0 = np.full(n, -1)
    lab0[0] = 0
    conn0 = np.zeros((n, k_eff))
    conn0[:, 0] = A2[:, 0]
    vol0 = np.zeros(k_eff)
    vol0[0] = wv[0]
    stack = [(0.0, 1, lab0, 1, vol0, conn0, 0.0)]
    expanded = 0
    aborted = False
    frontier_lb = np.inf
    while stack:
        if limits.nodes is not None and expanded >= limits.nodes:
            aborted = True
        elif limits.time_s is not None and (expanded & 255) == 0 and time.perf_counter() - t0 > limits.time_s:
            aborted = True
        if aborted:
            frontier_lb = min(e[0] for e in stack)
            break
        bound, d, lab, nopen, vol, conn, cutv = stack.pop()
        if bound > best_obj + otol:
            continue
        expanded += 1
        if d == n:
            if nopen < need:
                continue
            if identity:
                lb = cutv + sum(max(deficit[lab == j].sum(), 0.0) for j in range(nopen))
                if lb > best_obj + otol:
                    continue
            islands = tuple(tuple(sorted(int(order[i]) for i in np.flatnonzero(lab == j))) for j in range(nopen))
            part = Partition(islands)
            obj = cutv + sum(cost(s) for s in part)
            consider(part, obj)
            continue
        remaining = n - d - 1
        children = []
        for j in range(min(nopen + 1, k_eff)):
            if vol[j] + wv[d] > max_volume + vtol:
                continue
            nopen2 = nopen + (j == nopen)
            if remaining < need - nopen2:
                continue
            inc = conn[d, :nopen].sum() - conn[d, j]
            cut2 = cutv + inc
            conn2 = conn.copy()
            conn2[:, j] += A2[:, d]
            if remaining:
                C = conn2[d + 1 :, :nopen2]
                b2 = cut2 + float((C.sum(axis=1) - C.max(axis=1)).sum())
            else:
                b2 = cut2
            if b2 > best_obj + otol:
                continue
            lab2 = lab.copy()
            lab2[d] = j
            vol2 = vol.copy()
            vol2[j] += wv[d]
            children.append((b2, d + 1, lab2, nopen2, vol2, conn2, cut2))
        children.sort(key=lambda c: -c[0])
        stack.extend(children)

    elapsed = time.perf_counter() - t0
    if best_part is None:
        if aborted:
            raise InfeasibleError("no feasible islanding found within the solver limits")
        raise InfeasibleError(f"no partition into {k} islands satisfies the volume cap {max_volume:g}")
    lb = min(best_obj, frontier_lb) if aborted else best_obj
    gap = 0.0 if not aborted else max(0.0, (best_obj - lb) / max(abs(best_obj), 1e-12))
    return _solution(agg, best_part, cost, best_obj, gap, not aborted, expanded, elapsed)


def exact_solve_regressed(
    agg: AggregatedGrid,
    k: int,
    max_volume: float,
    params: RegressionParams,
    warm_start: Partition | None = None,
    limits: SolverLimits = SolverLimits(),
    allow_fewer: bool = False,
) -> MiqpSolution:
    """:func:`exact_solve` with the regression-corrected island shed."""
    return exact_solve(agg, k, max_volume, warm_start, limits, params, allow_fewer)


def _solution(agg, part, cost, obj, gap, optimal, nodes, elapsed) -> MiqpSolution:
    n = agg.n
    lab = part.labels()
    shed = np.zeros(n)
    dispatch = np.zeros(n)
    flows: dict[tuple[int, int], float] = {}
    for s in part:
        res = cost.result(s)
        idx = list(s)
        shed[idx] = agg.demand[idx] - res.served
        dispatch[idx] = res.dispatch
        flows.update(res.line_flows)
    status = {}
    for i, j, _ in agg.edges():
        status[(i, j)] = int(lab[i] == lab[j])
        flows.setdefault((i, j), 0.0)
    cross = lab[:, None] != lab[None, :]
    return MiqpSolution(
        partition=part,
        assignment=lab,
        line_status=status,
        flows=flows,
        shed=np.maximum(shed, 0.0),
        dispatch=dispatch,
        objective=float(obj),
        cut=float(agg.weights[cross].sum()),
        bound_gap=float(gap),
        optimal=optimal,
        nodes=nodes,
        elapsed_s=elapsed,
    )
