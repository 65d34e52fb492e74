"""Shed-load estimation by max-flow over an island's transmission network.

An island becomes a flow network: a super-source feeds every generator bus
up to its maximum output, every bus drains its demand into a super-sink,
and each line carries up to its limit in either direction.  The load that
cannot be routed to the sink is the shed estimate.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import RegressionParams

_EPS = 1e-9


class FlowNetwork:
    """Residual graph for Dinic's algorithm with float capacities."""

    def __init__(self, n: int):
        self.n = n
        self.head: list[list[int]] = [[] for _ in range(n)]
        self.to: list[int] = []
        self.cap: list[float] = []

    def add_arc(self, u: int, v: int, cap: float, rev_cap: float = 0.0) -> int:
        """Add arc u->v (and its residual twin); return the arc id."""
        k = len(self.to)
        self.to.extend((v, u))
        self.cap.extend((float(cap), float(rev_cap)))
        self.head[u].append(k)
        self.head[v].append(k + 1)
        return k

    def _levels(self, s: int, t: int, tol: float) -> list[int] | None:
        level = [-1] * self.n
        level[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for a in self.head[u]:
                if self.cap[a] > tol and level[self.to[a]] < 0:
                    level[self.to[a]] = level[u] + 1
                    q.append(self.to[a])
        return level if level[t] >= 0 else None

    def max_flow(self, s: int, t: int) -> float:
        total_cap = sum(self.cap[a] for a in self.head[s])
        tol = _EPS * max(1.0, total_cap)
        flow = 0.0
        while True:
            level = self._levels(s, t, tol)
            if level is None:
                return flow
            it = [0] * self.n
            while True:
                pushed = self._augment(s, t, level, it, tol)
                if pushed <= tol:
                    break
                flow += pushed

    def _augment(self, s: int, t: int, level: list[int], it: list[int], tol: float) -> float:
        # iterative DFS along the level graph; returns the bottleneck pushed
        path: list[int] = []
        u = s
        while True:
            if u == t:
                f = min(self.cap[a] for a in path)
                for a in path:
                    self.cap[a] -= f
                    self.cap[a ^ 1] += f
                return f
            arcs = self.head[u]
            while it[u] < len(arcs):
                a = arcs[it[u]]
                v = self.to[a]
                if self.cap[a] > tol and level[v] == level[u] + 1:
                    break
                it[u] += 1
            else:
                if not path:
                    return 0.0
                level[u] = -1  # dead end
                a = path.pop()
                u = self.to[a ^ 1]
                it[u] += 1
                continue
            path.append(arcs[it[u]])
            u = self.to[arcs[it[u]]]


@dataclass(frozen=True)
class ShedResult:
    shed: float
    dispatch: np.ndarray  # per island member, MW drawn from the source
    served: np.ndarray  # per island member, MW delivered to the sink
    line_flows: dict[tuple[int, int], float]  # (i, j) global ids -> net flow i -> j

    @property
    def flow_value(self) -> float:
        return float(self.served.sum())


def shed_max_flow(grid, island: Iterable[int]) -> ShedResult:
    """Max-flow shed estimate ``S_MF`` for an island of ``grid``.

    ``grid`` is anything exposing ``max_output``, ``demand`` (per-node
    arrays) and ``edges()`` yielding ``(i, j, limit)``; both
    :class:`~islanding.grid.PowerGrid` and the aggregated grid qualify.
    """
    members = list(dict.fromkeys(int(i) for i in island))
    k = len(members)
    pos = {b: q for q, b in enumerate(members)}
    G = np.asarray(grid.max_output, dtype=float)[members]
    D = np.asarray(grid.demand, dtype=float)[members]
    src, snk = k, k + 1
    net = FlowNetwork(k + 2)
    gen_arc = [net.add_arc(src, q, G[q]) if G[q] > 0 else -1 for q in range(k)]
    load_arc = [net.add_arc(q, snk, D[q]) if D[q] > 0 else -1 for q in range(k)]
    line_arc = []
    for i, j, lim in grid.edges():
        if i in pos and j in pos and lim > 0:
            line_arc.append((i, j, net.add_arc(pos[i], pos[j], lim, lim), lim))
    net.max_flow(src, snk)
    dispatch = np.array([G[q] - net.cap[a] if a >= 0 else 0.0 for q, a in enumerate(gen_arc)])
    served = np.array([D[q] - net.cap[a] if a >= 0 else 0.0 for q, a in enumerate(load_arc)])
    flows = {(i, j): lim - net.cap[a] for i, j, a, lim in line_arc}
    shed = float(min(max(D.sum() - served.sum(), 0.0), D.sum()))
    return ShedResult(shed, np.clip(dispatch, 0.0, G), np.clip(served, 0.0, D), flows)


def generation_reserve(grid, island: Sequence[int], dispatch: np.ndarray) -> float:
    """Unused generating capacity ``sum(G_i - g*_i)`` of an island."""
    G = np.asarray(grid.max_output, dtype=float)[list(island)]
    dispatch = np.asarray(dispatch, dtype=float)
    if np.any(dispatch > G + 1e-6 * max(1.0, G.max(initial=0.0))):
        raise ValueError("dispatch exceeds generator capacity")
    return float(np.maximum(G - dispatch, 0.0).sum())


def regressed_shed(shed_mf: float, reserve: float, volume: float, params: RegressionParams) -> float:
    """``max[S_MF - a * GR + b * w, 0]``."""
    return max(shed_mf - params.a * reserve + params.b * volume, 0.0)


def regressed_island_shed(grid, island: Sequence[int], volumes: np.ndarray, params: RegressionParams) -> float:
    res = shed_max_flow(grid, island)
    gr = generation_reserve(grid, list(dict.fromkeys(island)), res.dispatch)
    return regressed_shed(res.shed, gr, float(np.asarray(volumes)[list(island)].sum()), params)
