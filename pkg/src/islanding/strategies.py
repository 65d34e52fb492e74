"""The seven over-granulated candidate partitions of the first ISC step.

Each strategy runs hierarchical (``chi``) or constrained (``sigma``)
spectral clustering with more islands than requested, so the second step
has room to fuse islands into a balanced K-partition.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import IslandingConfig
from .cuts import Partition, combined_matrix, meet
from .grid import DerivedMatrices, PowerGrid
from .spectral import BisectionError, csc_partition, hsc_partition, recursive_bisection

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StrategyResult:
    strategy: str
    partition: Partition
    k_used: int
    balanced: bool  # every island within the volume cap
    flagged: bool = False  # fallback taken or range clamped
    notes: tuple[str, ...] = ()


class StrategyContext:
    """Shared inputs of the seven strategies with a clustering cache.

    The clusterings are deterministic, so ``chi_k`` of the same matrix is
    computed once however many strategies ask for it.  Safe to share
    between threads: a race only duplicates work.
    """

    def __init__(self, grid: PowerGrid, matrices: DerivedMatrices, cfg: IslandingConfig):
        self.grid = grid
        self.matrices = matrices
        self.cfg = cfg
        self.w = matrices.volumes
        self.W = cfg.volume_cap(matrices.total_volume)
        self.A = combined_matrix(matrices.Phi_full, matrices.P_abs, matrices.Delta, cfg.alpha_c, cfg.alpha_d, cfg.alpha_eci)
        self.adjacency = grid.adjacency
        self._cache: dict[tuple, Partition] = {}
        self.mats = {"A": self.A, "P": matrices.P_abs}

    def clamp(self, k: int, limit: int, what: str, notes: list[str]) -> int:
        if k > limit:
            msg = f"{what}: {k} islands requested, clamped to {limit}"
            log.warning(msg)
            notes.append(msg)
            return limit
        return k

    def balanced(self, p: Partition) -> bool:
        tol = 1e-9 * max(1.0, self.W)
        return bool(np.all(p.volumes(self.w) <= self.W + tol))

    def chi(self, name: str, k: int) -> Partition:
        key = ("chi", name, k)
        if key not in self._cache:
            self._cache[key] = hsc_partition(self.mats[name], self.w, k, self.adjacency)
        return self._cache[key]

    def generator_groups(self, k: int) -> Partition:
        """``chi_k`` of the reduced coupling graph, no pendant folding."""
        key = ("groups", k)
        if key not in self._cache:
            n_g = self.grid.n_g
            phi = self.matrices.Phi_gen
            self._cache[key] = hsc_partition(phi, self.w[:n_g], k, merge=False)
        return self._cache[key]

    def sigma(self, k: int) -> Partition:
        key = ("sigma", k)
        if key not in self._cache:
            groups = self.generator_groups(k)
            self._cache[key] = csc_partition(self.matrices.P_abs, self.w, groups, self.adjacency)
        return self._cache[key]


def _scan(ctx: StrategyContext, lo: int, hi: int, make: Callable[[int], Partition], sid: str, notes: list[str]) -> StrategyResult:
    if not ctx.cfg.enforce_balance:
        p = make(lo)
        return StrategyResult(sid, p.with_origin(sid), lo, ctx.balanced(p), bool(notes), tuple(notes))
    for k in range(lo, hi + 1):
        p = make(k)
        if ctx.balanced(p):
            return StrategyResult(sid, p.with_origin(sid), k, True, bool(notes), tuple(notes))
    p = make(hi)
    notes.append(f"no balanced clustering for k in [{lo}, {hi}]")
    return StrategyResult(sid, p.with_origin(sid), hi, False, True, tuple(notes))


def strategy_fixed(ctx: StrategyContext, name: str, sid: str, r: float) -> StrategyResult:
    """``chi_{rK}`` of ``A`` (``name='A'``) or of ``|P|`` (``name='P'``)."""
    notes: list[str] = []
    k = ctx.clamp(_ceil(r * ctx.cfg.k), ctx.grid.n, sid, notes)
    p = ctx.chi(name, k)
    return StrategyResult(sid, p.with_origin(sid), k, ctx.balanced(p), bool(notes), tuple(notes))


def strategy_min_granularity(ctx: StrategyContext, name: str, sid: str, r: float) -> StrategyResult:
    """Least ``k`` in ``[K, rK]`` whose ``chi_k`` respects the volume cap."""
    notes: list[str] = []
    hi = ctx.clamp(_ceil(r * ctx.cfg.k), ctx.grid.n, sid, notes)
    lo = min(ctx.cfg.k, hi)
    return _scan(ctx, lo, hi, lambda k: ctx.chi(name, k), sid, notes)


def strategy_csc_refined(ctx: StrategyContext) -> StrategyResult:
    """Least ``k`` in ``[K, r3 K]`` whose constrained clustering is balanced."""
    sid = "V"
    notes: list[str] = []
    n_g = ctx.grid.n_g
    if n_g == 0:
        raise ValueError("constrained clustering needs at least one generator")
    hi = ctx.clamp(_ceil(ctx.cfg.granularity[2] * ctx.cfg.k), n_g, sid, notes)
    lo = min(ctx.cfg.k, hi)
    return _scan(ctx, lo, hi, ctx.sigma, sid, notes)


def strategy_sequential(ctx: StrategyContext) -> StrategyResult:
    """Bisect the heaviest island of ``chi_K(|P|)`` until ``r4 K`` islands exist."""
    sid = "VI"
    notes: list[str] = []
    K = ctx.cfg.k
    base = ctx.chi("P", min(K, ctx.grid.n))
    target = ctx.clamp(_ceil(ctx.cfg.granularity[3] * K), ctx.grid.n, sid, notes)
    steps = max(0, target - len(base))
    A, w, adj = ctx.A, ctx.w, ctx.adjacency

    def bisect(island: tuple[int, ...]) -> Partition:
        idx = np.array(island)
        sub = np.ix_(idx, idx)
        return hsc_partition(A[sub], w[idx], 2, adj[sub])

    p = base
    for _ in range(steps):
        try:
            p = recursive_bisection(p, bisect, 1, w)
        except BisectionError as exc:
            notes.append(f"stopped after {len(p) - len(base)} bisections: {exc}")
            break
    flagged = bool(notes)
    return StrategyResult(sid, p.with_origin(sid), len(p), ctx.balanced(p), flagged, tuple(notes))


def strategy_meet(ctx: StrategyContext) -> StrategyResult:
    """Meet of the constrained and the flow-based K-partitions."""
    sid = "VII"
    notes: list[str] = []
    K = ctx.cfg.k
    k_csc = ctx.clamp(K, ctx.grid.n_g, sid, notes)
    p = meet(ctx.sigma(k_csc), ctx.chi("P", min(K, ctx.grid.n)))
    return StrategyResult(sid, p.with_origin(sid), len(p), ctx.balanced(p), bool(notes), tuple(notes))


def _ceil(x: float) -> int:
    return int(math.ceil(x - 1e-9))


STRATEGIES: dict[str, Callable[[StrategyContext], StrategyResult]] = {
    "I": lambda c: strategy_fixed(c, "A", "I", c.cfg.granularity[0]),
    "II": lambda c: strategy_fixed(c, "P", "II", c.cfg.granularity[1]),
    "III": lambda c: strategy_min_granularity(c, "A", "III", c.cfg.granularity[0]),
    "IV": lambda c: strategy_min_granularity(c, "P", "IV", c.cfg.granularity[1]),
    "V": strategy_csc_refined,
    "VI": strategy_sequential,
    "VII": strategy_meet,
}


def run_strategy(sid: str, ctx: StrategyContext) -> StrategyResult:
    return STRATEGIES[sid](ctx)


def candidate_partitions(grid: PowerGrid, matrices: DerivedMatrices, cfg: IslandingConfig) -> dict[str, StrategyResult]:
    """Every enabled strategy's candidate, keyed by strategy id."""
    ctx = StrategyContext(grid, matrices, cfg)
    return {sid: run_strategy(sid, ctx) for sid in cfg.strategies}
