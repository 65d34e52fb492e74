"""Run reports, GraphViz export and the per-strategy metrics table."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import IslandingConfig
from .cuts import MetricReport, Partition
from .grid import PowerGrid
from .pipeline import IslandingResult, StrategyDiagnostics

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

CSV_FIELDS = ("id", "islands", "C", "D", "S_EL", "S_MF", "F", "balanced", "ms_step1", "ms_step2")


def teared_lines(grid: PowerGrid, partition: Partition) -> list[tuple[int, int]]:
    """Lines whose ends fall in different islands, as original bus id pairs."""
    lab = partition.labels()
    f, t = grid.line_ends
    return [(ln.from_bus, ln.to_bus) for ln, i, j in zip(grid.lines, f, t) if lab[i] != lab[j]]


@dataclass(frozen=True)
class RunReport:
    case: str
    config: dict
    strategy: str | None
    max_volume: float
    islands: list[list[int]]
    metrics: MetricReport
    strategies: list[dict]
    teared: list[tuple[int, int]]
    disconnected: list[int]

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "config": self.config,
            "strategy": self.strategy,
            "max_volume": self.max_volume,
            "islands": self.islands,
            "metrics": self.metrics.to_dict(),
            "strategies": self.strategies,
            "teared_lines": [list(e) for e in self.teared],
            "disconnected_islands": self.disconnected,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _strategy_row(d: StrategyDiagnostics) -> dict:
    return {
        "id": d.strategy,
        "candidate_islands": None if d.step1 is None else len(d.step1.partition),
        "aggregated_nodes": d.n_solved or None,
        "islands": None if d.partition is None else len(d.partition),
        "cost": d.cost,
        "greedy_cost": d.greedy_cost,
        "F": None if d.report is None else d.report.cost_f,
        "balanced": d.balanced,
        "optimal": None if d.solution is None else d.solution.optimal,
        "gap": None if d.solution is None else d.solution.bound_gap,
        "error": d.error,
    }


def build_report(case: str, grid: PowerGrid, cfg: IslandingConfig, result: IslandingResult) -> RunReport:
    part = result.partition
    disconnected = []
    if result.strategy is not None:
        disconnected = list(result.diagnostics[result.strategy].disconnected)
    return RunReport(
        case=case,
        config=cfg.to_dict(),
        strategy=result.strategy,
        max_volume=float(result.max_volume),
        islands=[sorted(grid.external(s)) for s in part],
        metrics=result.report,
        strategies=[_strategy_row(d) for d in result.diagnostics.values()],
        teared=teared_lines(grid, part),
        disconnected=disconnected,
    )


def timing_table(result: IslandingResult) -> dict:
    return {sid: {"ms_step1": d.ms_step1, "ms_step2": d.ms_step2} for sid, d in result.diagnostics.items()}


def export_dot(grid: PowerGrid, partition: Partition, path, flows: np.ndarray | None = None) -> None:
    """GraphViz drawing: nodes coloured by island, teared lines dashed.

    Edge labels show the absolute line flow in MW, taken from ``flows``
    (n x n signed matrix) or else from the flows stored on the lines.
    """
    if len(partition) == 0 or partition.n != grid.n:
        raise ValueError("partition must cover every bus of the grid")
    lab = partition.labels()
    out = ["graph grid {", "  node [style=filled, fontname=Helvetica];"]
    for i, b in enumerate(grid.buses):
        color = PALETTE[lab[i] % len(PALETTE)]
        shape = "box" if i < grid.n_g else "ellipse"
        out.append(f'  {b.id} [fillcolor="{color}", shape={shape}, group="{lab[i]}"];')
    f, t = grid.line_ends
    for ln, i, j in zip(grid.lines, f, t):
        p = flows[i, j] if flows is not None else (ln.flow or 0.0)
        style = ', style=dashed' if lab[i] != lab[j] else ""
        out.append(f'  {ln.from_bus} -- {ln.to_bus} [label="{abs(p):.2f}"{style}];')
    out.append("}")
    Path(path).write_text("\n".join(out) + "\n")


def export_metrics_csv(diagnostics: dict[str, StrategyDiagnostics], path) -> None:
    """One row per strategy with the metrics of its lifted K-partition."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for sid, d in diagnostics.items():
            r = d.report
            vals = ["", "", "", "", ""] if r is None else [r.coherency_c, r.disruption_d, r.excess_load, r.shed_mf, r.cost_f]
            w.writerow(
                [sid, "" if d.partition is None else len(d.partition)]
                + [repr(float(v)) if v != "" else "" for v in vals]
                + [d.balanced, f"{d.ms_step1:.3f}", f"{d.ms_step2:.3f}"]
            )
