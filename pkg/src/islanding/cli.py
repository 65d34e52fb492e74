"""``islandctl``: run islanding on a case file, score partitions, convert cases."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import STRATEGY_IDS, ConfigError, IslandingConfig, RegressionParams
from .cuts import Partition, metric_report
from .grid import CaseError, PowerGrid, case_from_dict, derive_matrices, load_case, serialize_case
from .matpower import parse_matpower
from .pipeline import isc_pipeline
from .report import build_report, export_dot, export_metrics_csv, teared_lines, timing_table
from .solver import InfeasibleError

log = logging.getLogger("islanding")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2


class UsageError(ValueError):
    pass


def _floats(text: str, count: int, flag: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"{flag} expects {count} comma-separated numbers, got {text!r}") from None
    if len(vals) != count:
        raise UsageError(f"{flag} expects {count} comma-separated numbers, got {text!r}")
    return vals


def _strategies(text: str) -> tuple[str, ...]:
    if text.upper() in ("ALL", "I-VII"):
        return STRATEGY_IDS
    ids = tuple(s.strip().upper() for s in text.split(",") if s.strip())
    bad = [s for s in ids if s not in STRATEGY_IDS]
    if bad or not ids:
        raise UsageError(f"unknown strategies {bad or text!r}; choose from {','.join(STRATEGY_IDS)}")
    return ids


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="islandctl", description=__doc__)
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--case", required=True, type=Path, help="JSON case file")
        p.add_argument("--k", type=int, default=4, help="number of islands")
        p.add_argument("--max-volume-frac", type=float, default=None,
                       help="island volume cap as a fraction of w(N); default min(1, 1.5/K)")
        p.add_argument("--alpha-c", type=float, default=1.0)
        p.add_argument("--alpha-d", type=float, default=1.0)
        p.add_argument("--alpha-eci", type=float, default=0.0)
        p.add_argument("--regress", default="0,0", help="a,b of the corrected shed estimate")
        p.add_argument("--volume-mode", choices=("absflow", "capacity"), default="absflow")
        p.add_argument("--delta", type=Path, help="electrical distance matrix (JSON)")
        p.add_argument("--out", type=Path, help="report JSON path (default stdout)")

    part = sub.add_parser("part", help="run the full islanding pipeline")
    common(part)
    part.add_argument("--granularity", default="4,4,4,4", help="r1,r2,r3,r4")
    part.add_argument("--strategies", default="I-VII", help="comma list of strategy ids")
    part.add_argument("--kmax", type=int, default=20)
    part.add_argument("--time-limit-s", type=float, default=10.0)
    part.add_argument("--node-limit", type=int, default=None)
    part.add_argument("--jobs", type=int, default=1)
    part.add_argument("--dot", type=Path)
    part.add_argument("--csv", type=Path)

    met = sub.add_parser("metrics", help="score a partition file")
    common(met)
    met.add_argument("--partition", required=True, type=Path, help='{"islands": [[bus ids], ...]}')
    met.add_argument("--dot", type=Path)

    conv = sub.add_parser("convert", help="MATPOWER .m case to JSON")
    conv.add_argument("source", type=Path)
    conv.add_argument("--out", type=Path)
    return ap


def _load_delta(path: Path, grid: PowerGrid) -> np.ndarray:
    """Distance matrix given as ``{"bus": [...], "matrix": [[...]]}`` or a bare matrix in bus-id order."""
    doc = json.loads(path.read_text())
    if isinstance(doc, dict):
        order, M = doc["bus"], np.asarray(doc["matrix"], dtype=float)
    else:
        order, M = sorted(int(b) for b in grid.bus_ids), np.asarray(doc, dtype=float)
    if M.shape != (len(order), len(order)) or sorted(order) != sorted(int(b) for b in grid.bus_ids):
        raise UsageError("distance matrix does not match the case buses")
    pos = {int(b): k for k, b in enumerate(order)}
    perm = np.array([pos[int(b)] for b in grid.bus_ids])
    return M[np.ix_(perm, perm)]


def _config(args, **extra) -> IslandingConfig:
    if args.alpha_eci > 0 and args.delta is None:
        raise UsageError("--alpha-eci > 0 needs --delta")
    a, b = _floats(args.regress, 2, "--regress")
    return IslandingConfig(
        k=args.k,
        max_volume_frac=args.max_volume_frac,
        alpha_c=args.alpha_c,
        alpha_d=args.alpha_d,
        alpha_eci=args.alpha_eci,
        regress=RegressionParams(a, b),
        volume_mode=args.volume_mode,
        **extra,
    )


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _prepare(args):
    grid = load_case(args.case)
    delta = _load_delta(args.delta, grid) if args.delta is not None else None
    return grid, delta


def cmd_part(args) -> int:
    cfg = _config(
        args,
        granularity=_floats(args.granularity, 4, "--granularity"),
        strategies=_strategies(args.strategies),
        k_max=args.kmax,
        time_limit_s=args.time_limit_s,
        node_limit=args.node_limit,
        jobs=args.jobs,
    )
    grid, delta = _prepare(args)
    matrices = derive_matrices(grid, cfg.volume_mode, delta)
    result = isc_pipeline(grid, cfg, matrices)
    report = build_report(args.case.stem, grid, cfg, result)
    _emit(report.to_json(), args.out)
    if args.out is not None:
        timing = args.out.with_name(args.out.name + ".timing.json")
        timing.write_text(json.dumps(timing_table(result), indent=2) + "\n")
    if args.dot is not None:
        export_dot(grid, result.partition, args.dot, matrices.P_signed)
    if args.csv is not None:
        export_metrics_csv(result.diagnostics, args.csv)
    return EXIT_OK


def cmd_metrics(args) -> int:
    cfg = _config(args)
    grid, delta = _prepare(args)
    matrices = derive_matrices(grid, cfg.volume_mode, delta)
    doc = json.loads(args.partition.read_text())
    try:
        islands = [[grid.index_of[int(b)] for b in s] for s in doc["islands"]]
    except KeyError as exc:
        raise UsageError(f"partition refers to unknown bus {exc}") from None
    try:
        part = Partition(tuple(tuple(s) for s in islands))
    except ValueError as exc:
        raise UsageError(f"invalid partition: {exc}") from None
    if part.n != grid.n:
        raise UsageError("partition must cover every bus")
    rep = metric_report(grid, matrices, part, cfg)
    W = cfg.volume_cap(matrices.total_volume)
    vols = part.volumes(matrices.volumes)
    out = {
        "case": args.case.stem,
        "islands": [sorted(grid.external(s)) for s in part],
        "metrics": rep.to_dict(),
        "volumes": vols.tolist(),
        "max_volume": W,
        "balanced": bool(np.all(vols <= W * (1 + 1e-9))),
        "teared_lines": [list(e) for e in teared_lines(grid, part)],
    }
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    if args.dot is not None:
        export_dot(grid, part, args.dot, matrices.P_signed)
    return EXIT_OK


def cmd_convert(args) -> int:
    doc = parse_matpower(args.source.read_text())
    _emit(serialize_case(case_from_dict(doc)), args.out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format="%(levelname)s %(message)s")
    handler = {"part": cmd_part, "metrics": cmd_metrics, "convert": cmd_convert}[args.command]
    try:
        return handler(args)
    except InfeasibleError as exc:
        print(f"islandctl: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, ConfigError, CaseError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"islandctl: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
