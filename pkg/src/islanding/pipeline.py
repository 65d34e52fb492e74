"""End-to-end islanding: candidate partitions, aggregation, exact fusion, selection."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from .config import IslandingConfig
from .cuts import MetricReport, Partition, connected_components_refine, is_connected_island, metric_report
from .grid import DerivedMatrices, PowerGrid, derive_matrices
from .solver import (
    AggregatedGrid,
    InfeasibleError,
    MiqpSolution,
    SolverLimits,
    exact_solve,
    greedy_partition,
    lift_partition,
    partition_objective,
)
from .strategies import StrategyContext, StrategyResult, run_strategy

log = logging.getLogger(__name__)


@dataclass
class StrategyDiagnostics:
    strategy: str
    step1: StrategyResult | None = None
    n_refined: int = 0
    n_solved: int = 0  # aggregated nodes entering the exact search
    greedy_cost: float | None = None
    greedy_feasible: bool = False
    solution: MiqpSolution | None = None
    partition: Partition | None = None
    report: MetricReport | None = None
    aggregated: AggregatedGrid | None = None  # before pre-coarsening
    disconnected: tuple[int, ...] = ()  # island positions that are not connected
    error: str | None = None
    ms_step1: float = 0.0
    ms_step2: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.solution is not None

    @property
    def cost(self) -> float | None:
        return None if self.solution is None else self.solution.objective

    @property
    def balanced(self) -> bool:
        return bool(self.step1 is not None and self.step1.balanced)


@dataclass
class IslandingResult:
    partition: Partition
    report: MetricReport
    strategy: str | None
    diagnostics: dict[str, StrategyDiagnostics]
    max_volume: float
    matrices: DerivedMatrices = field(repr=False)

    def __iter__(self):
        return iter((self.partition, self.report, self.diagnostics))


def _step2(ctx: StrategyContext, cfg: IslandingConfig, d: StrategyDiagnostics) -> None:
    grid, W = ctx.grid, ctx.W
    refined = connected_components_refine(d.step1.partition, grid.adjacency)
    d.n_refined = len(refined)
    agg = AggregatedGrid.from_grid(grid, ctx.matrices, refined, cfg.alpha_c, cfg.alpha_d, cfg.alpha_eci)
    d.aggregated = agg
    if agg.n < cfg.k:
        raise InfeasibleError(f"only {agg.n} islands available for K={cfg.k}")
    work = agg
    if agg.n >= cfg.k_max:
        coarse = greedy_partition(agg, cfg.k_max, W)
        if not coarse.feasible:
            raise InfeasibleError(f"pre-coarsening stalled at {len(coarse.partition)} islands")
        work = agg.coarsen(coarse.partition)
    d.n_solved = work.n
    warm = greedy_partition(work, cfg.k, W)
    d.greedy_feasible = warm.feasible
    if warm.feasible:
        d.greedy_cost = partition_objective(work, warm.partition, cfg.regress)
    limits = SolverLimits(cfg.time_limit_s, cfg.node_limit)
    sol = exact_solve(work, cfg.k, W, warm.partition if warm.feasible else None, limits, cfg.regress)
    d.solution = sol
    d.partition = lift_partition(sol.partition, work.members, d.strategy)
    d.disconnected = tuple(
        k for k, s in enumerate(d.partition) if len(s) > 1 and not is_connected_island(grid.adjacency, s)
    )


def _run_one(ctx: StrategyContext, sid: str, shed_estimator) -> StrategyDiagnostics:
    d = StrategyDiagnostics(sid)
    t0 = time.perf_counter()
    try:
        d.step1 = run_strategy(sid, ctx)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        d.error = f"step 1: {exc}"
        d.ms_step1 = 1e3 * (time.perf_counter() - t0)
        return d
    t1 = time.perf_counter()
    d.ms_step1 = 1e3 * (t1 - t0)
    try:
        _step2(ctx, ctx.cfg, d)
        d.report = metric_report(ctx.grid, ctx.matrices, d.partition, ctx.cfg, shed_estimator)
    except (InfeasibleError, ValueError) as exc:
        d.error = f"step 2: {exc}"
        d.solution = None
    d.ms_step2 = 1e3 * (time.perf_counter() - t1)
    return d


def isc_pipeline(
    grid: PowerGrid,
    cfg: IslandingConfig,
    matrices: DerivedMatrices | None = None,
    shed_estimator: Callable[[tuple[int, ...]], float] | None = None,
) -> IslandingResult:
    """Split ``grid`` into ``cfg.k`` volume-bounded islands.

    Every enabled strategy proposes a fine partition; its connected pieces
    are aggregated, greedily reduced below ``cfg.k_max`` nodes when needed,
    and fused exactly into K islands starting from the greedy K-partition.
    The candidate of least aggregated objective wins; equal objectives go
    to the lexicographically smaller partition, then to strategy order.
    """
    if len(grid.components()) > 1:
        raise ValueError(f"grid has {len(grid.components())} connected components")
    if matrices is None:
        matrices = derive_matrices(grid, cfg.volume_mode)
    W = cfg.volume_cap(matrices.total_volume)
    if W < matrices.total_volume / cfg.k * (1 - 1e-12):
        raise InfeasibleError(f"volume cap {W:g} is below w(N)/K = {matrices.total_volume / cfg.k:g}")
    if cfg.k == 1:
        p = Partition.single(grid.n, "K=1")
        return IslandingResult(p, metric_report(grid, matrices, p, cfg, shed_estimator), None, {}, W, matrices)
    if cfg.k > grid.n:
        raise InfeasibleError(f"cannot split {grid.n} buses into {cfg.k} islands")
    ctx = StrategyContext(grid, matrices, cfg)
    if cfg.jobs > 1 and len(cfg.strategies) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            diags = list(pool.map(lambda s: _run_one(ctx, s, shed_estimator), cfg.strategies))
    else:
        diags = [_run_one(ctx, s, shed_estimator) for s in cfg.strategies]
    table = {d.strategy: d for d in diags}
    ok = [d for d in diags if d.feasible]
    if not ok:
        why = "; ".join(f"{d.strategy}: {d.error}" for d in diags)
        raise InfeasibleError(f"no strategy produced a feasible islanding ({why})")
    best = ok[0]
    for d in ok[1:]:
        tol = 1e-9 * max(1.0, abs(best.cost))
        if d.cost < best.cost - tol or (abs(d.cost - best.cost) <= tol and d.partition.islands < best.partition.islands):
            best = d
    return IslandingResult(best.partition, best.report, best.strategy, table, W, matrices)
