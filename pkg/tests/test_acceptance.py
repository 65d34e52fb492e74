"""End-to-end acceptance checks, one marked group per criterion.

The terminal summary prints a PASS/FAIL line per criterion (see conftest).
"""
import json
import time
from collections import deque

import numpy as np
import pytest

from islanding import example_case
from islanding.cli import main
from islanding.config import IslandingConfig
from islanding.cuts import Partition, excess_load, ncut, normalized_laplacian
from islanding.grid import derive_matrices, merge_pendants, serialize_case
from islanding.pipeline import isc_pipeline
from islanding.report import build_report
from islanding.shed import shed_max_flow
from islanding.solver import InfeasibleError, SolverLimits, exact_solve, partition_objective
from islanding.spectral import hsc_partition, smallest_eigenpairs
from islanding.strategies import candidate_partitions
from islanding.synthetic import random_aggregated_grid, random_grid

from conftest import PRINTED_P, PRINTED_U, U_ROWS, ext, set_partitions

THREE = {frozenset({1, 4, 5}), frozenset({2, 7, 8}), frozenset({3, 6, 9})}
UNLIMITED = SolverLimits(time_s=None, nodes=None)


def _balanced(partition, w, W):
    return bool(np.all(partition.volumes(w) <= W * (1 + 1e-9)))


def _enumerated_optimum(agg, k, W, exact=True):
    """Minimum ``cut + sum shed`` over every set partition, or None when none fits W."""
    n = agg.n
    labels = np.array(list(set_partitions(n, k, exact=exact)))
    bits = 1 << np.arange(n)
    masks = np.stack([((labels == b) * bits).sum(axis=1) for b in range(k)], axis=1)
    subset = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
    vol = subset @ agg.volumes
    ok = np.all(vol[masks] <= W + 1e-9, axis=1)
    if not ok.any():
        return None
    labels, masks = labels[ok], masks[ok]
    cutv = np.zeros(len(labels))
    for i in range(n):
        for j in range(i + 1, n):
            wij = agg.weights[i, j] + agg.weights[j, i]
            if wij:
                cutv += wij * (labels[:, i] != labels[:, j])
    shed = np.zeros(1 << n)
    for mask in np.unique(masks):
        if mask:
            shed[mask] = shed_max_flow(agg, np.flatnonzero(subset[mask])).shed
    obj = cutv + shed[masks].sum(axis=1)
    best = int(np.argmin(obj))
    return float(obj[best]), Partition.from_labels(labels[best])


# ------------------------------------------------------------------ 1


@pytest.mark.criterion("1")
def test_c1_case9_folded_abs_flows():
    t0 = time.perf_counter()
    g = example_case("case9")
    m = derive_matrices(g)
    pm = merge_pendants(m.P_abs, m.volumes, adjacency=g.adjacency)
    elapsed = time.perf_counter() - t0
    assert [sorted(g.external(s)) for s in pm.groups] == [[1, 4], [5], [6], [2, 7], [8], [3, 9]]
    assert np.abs(pm.matrix - PRINTED_P).max() <= 1e-2
    for (a, b), v in {(0, 1): 27.15, (0, 2): 17.60, (1, 3): 36.05, (3, 4): 30.95, (4, 5): 19.10, (2, 5): 27.45}.items():
        assert pm.matrix[a, b] == pytest.approx(v, abs=1e-2) and pm.matrix[b, a] == pytest.approx(v, abs=1e-2)
    assert elapsed < 0.1


# ------------------------------------------------------------------ 2


@pytest.mark.criterion("2")
def test_c2_case9_eigenvectors(case9, mats9):
    t0 = time.perf_counter()
    pm = merge_pendants(mats9.P_abs, mats9.volumes, adjacency=case9.adjacency)
    U = smallest_eigenpairs(normalized_laplacian(pm.matrix, pm.volumes), 2).vectors[U_ROWS]
    elapsed = time.perf_counter() - t0
    for j in range(2):
        err = min(np.abs(U[:, j] - PRINTED_U[:, j]).max(), np.abs(U[:, j] + PRINTED_U[:, j]).max())
        assert err <= 2e-3
    assert elapsed < 0.1


# ------------------------------------------------------------------ 3


@pytest.mark.criterion("3")
def test_c3_case9_three_way(case9, mats9):
    t0 = time.perf_counter()
    A = mats9.Phi_full + mats9.P_abs
    parts = [hsc_partition(M, mats9.volumes, 3, case9.adjacency) for M in (A, mats9.P_abs)]
    elapsed = time.perf_counter() - t0
    for p in parts:
        assert ext(case9, p) == THREE
    assert elapsed < 0.5


# ------------------------------------------------------------------ 4


def _case9_run(case9):
    return isc_pipeline(case9, IslandingConfig(k=2, granularity=(1.5,) * 4))


@pytest.mark.criterion("4")
def test_c4_case9_pipeline(case9, mats9):
    t0 = time.perf_counter()
    res = _case9_run(case9)
    elapsed = time.perf_counter() - t0
    costs = {sid: d.cost for sid, d in res.diagnostics.items() if d.feasible}
    assert len(costs) == 7
    assert res.diagnostics[res.strategy].cost == min(costs.values())
    assert res.partition == res.diagnostics[res.strategy].partition
    bisection = hsc_partition(mats9.P_abs, mats9.volumes, 2, case9.adjacency)
    for sid in ("I", "II", "VI", "VII"):
        assert res.diagnostics[sid].partition == bisection
    assert elapsed < 2.0


# ------------------------------------------------------------------ 5


def _c5_instances():
    for seed in range(100):
        rng = np.random.default_rng(5000 + seed)
        n = int(rng.integers(3, 11))
        k = int(rng.integers(1, min(3, n) + 1))
        agg = random_aggregated_grid(n, 5000 + seed)
        lo = max(agg.volumes.max(), agg.volumes.sum() / k)
        yield seed, agg, k, lo * rng.uniform(1.0, 1.6), bool(seed % 2)


@pytest.mark.criterion("5")
def test_c5_exact_solver_matches_enumeration():
    t0 = time.perf_counter()
    checked = 0
    for seed, agg, k, W, fewer in _c5_instances():
        ref = _enumerated_optimum(agg, k, W, exact=not fewer)
        if ref is None:
            with pytest.raises(InfeasibleError):
                exact_solve(agg, k, W, limits=UNLIMITED, allow_fewer=fewer)
            continue
        sol = exact_solve(agg, k, W, limits=UNLIMITED, allow_fewer=fewer)
        assert sol.optimal, seed
        assert sol.objective == pytest.approx(ref[0], rel=1e-9, abs=1e-6), seed
        assert partition_objective(agg, sol.partition) == pytest.approx(sol.objective, rel=1e-9, abs=1e-6)
        assert _balanced(sol.partition, agg.volumes, W)
        assert len(sol.partition) <= k if fewer else len(sol.partition) == k
        checked += 1
    assert checked >= 90
    assert time.perf_counter() - t0 < 60


# ------------------------------------------------------------------ 6


def _random_graph(rng, n):
    A = np.zeros((n, n))
    order = rng.permutation(n)
    for a in range(1, n):
        b = int(rng.integers(a))
        A[order[a], order[b]] = A[order[b], order[a]] = rng.uniform(0.1, 5.0)
    for i in range(n):
        for j in range(i + 1, n):
            if A[i, j] == 0 and rng.random() < 0.25:
                A[i, j] = A[j, i] = rng.uniform(0.1, 5.0)
    return A


@pytest.mark.criterion("6")
def test_c6_spectral_lower_bound():
    t0 = time.perf_counter()
    for seed in range(50):
        rng = np.random.default_rng(6000 + seed)
        n = int(rng.integers(4, 12))
        A = _random_graph(rng, n)
        w = A.sum(axis=1) if seed % 2 == 0 else rng.uniform(0.5, 10.0, size=n)
        lam = np.linalg.eigvalsh(normalized_laplacian(A, w))
        Lap = np.diag(A.sum(axis=1)) - A
        for k in (2, 3):
            labels = np.array(list(set_partitions(n, k, exact=True)))
            X = (labels[:, :, None] == np.arange(k)).astype(float)
            cuts = np.einsum("pib,ij,pjb->pb", X, Lap, X)
            vols = X.transpose(0, 2, 1) @ w
            nc = (cuts / vols).sum(axis=1)
            assert lam[:k].sum() <= nc.min() + 1e-9, (seed, k)
            # spot-check the vectorised NCut against the library
            q = int(rng.integers(len(labels)))
            assert ncut(A, w, Partition.from_labels(labels[q])) == pytest.approx(nc[q])
    assert time.perf_counter() - t0 < 30


# ------------------------------------------------------------------ 7


def _c7_islands():
    rng = np.random.default_rng(7000)
    out = []
    for s in range(25):
        g = random_grid(int(rng.integers(20, 41)), 7000 + s)
        for _ in range(20):
            out.append((g, _grow_island(rng, g, int(rng.integers(1, 21)))))
    return out


def _grow_island(rng, grid, size):
    start = int(rng.integers(grid.n))
    island, frontier = {start}, [start]
    while frontier and len(island) < size:
        u = frontier.pop(int(rng.integers(len(frontier))))
        for v in np.flatnonzero(grid.adjacency[u]):
            if len(island) < size and int(v) not in island:
                island.add(int(v))
                frontier.append(int(v))
    return sorted(island)


def _edmonds_karp_shed(grid, island):
    """Shed from a BFS augmenting-path max flow on a dense capacity matrix."""
    idx = list(island)
    k = len(idx)
    pos = {b: q for q, b in enumerate(idx)}
    src, snk = k, k + 1
    cap = np.zeros((k + 2, k + 2))
    for q, b in enumerate(idx):
        cap[src, q] = grid.max_output[b]
        cap[q, snk] = grid.demand[b]
    for i, j, lim in grid.edges():
        if i in pos and j in pos:
            cap[pos[i], pos[j]] += lim
            cap[pos[j], pos[i]] += lim
    total = 0.0
    while True:
        parent = [-1] * (k + 2)
        parent[src] = src
        queue = deque([src])
        while queue and parent[snk] < 0:
            u = queue.popleft()
            for v in np.flatnonzero(cap[u] > 1e-12):
                if parent[v] < 0:
                    parent[v] = u
                    queue.append(v)
        if parent[snk] < 0:
            break
        path, v = [], snk
        while v != src:
            path.append((parent[v], v))
            v = parent[v]
        push = min(cap[u, v] for u, v in path)
        for u, v in path:
            cap[u, v] -= push
            cap[v, u] += push
        total += push
    return float(grid.demand[idx].sum()) - total


@pytest.fixture(scope="module")
def c7_islands():
    return _c7_islands()


@pytest.mark.criterion("7")
def test_c7_shed_below_total_demand(c7_islands):
    t0 = time.perf_counter()
    assert len(c7_islands) == 500
    for g, island in c7_islands:
        s_mf = shed_max_flow(g, island).shed
        assert -1e-9 <= s_mf <= g.demand[island].sum() + 1e-9
    assert time.perf_counter() - t0 < 30


@pytest.mark.criterion("7")
def test_c7_excess_load_below_max_flow_shed(c7_islands):
    t0 = time.perf_counter()
    bad = []
    for g, island in c7_islands:
        s_el = excess_load(g.injection, island)
        s_mf = shed_max_flow(g, island).shed
        if s_el > s_mf + 1e-6:
            bad.append((len(island), round(s_el, 3), round(s_mf, 3)))
    assert time.perf_counter() - t0 < 30
    assert not bad, f"{len(bad)}/500 islands have S_EL > S_MF, e.g. (size, S_EL, S_MF) {bad[:5]}"


@pytest.mark.criterion("7")
def test_c7_max_flow_matches_augmenting_path_oracle(c7_islands):
    t0 = time.perf_counter()
    small = [(g, s) for g, s in c7_islands if len(s) <= 12]
    assert len(small) >= 100
    for g, island in small:
        assert shed_max_flow(g, island).shed == pytest.approx(_edmonds_karp_shed(g, island), abs=1e-6)
    assert time.perf_counter() - t0 < 30


# ------------------------------------------------------------------ 8


def _c8_grid(s):
    return random_grid(30 + (s * 30) // 29, 8000 + s)


C8_CONFIG = IslandingConfig(k=3)
# K_max below n' forces the greedy pre-coarsening the default never needs here
C8_STRESS = IslandingConfig(k=3, k_max=8, time_limit_s=120.0)


def _ensemble(cfg):
    t0 = time.perf_counter()
    runs = [(_c8_grid(s), isc_pipeline(_c8_grid(s), cfg)) for s in range(30)]
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def c8_runs():
    return _ensemble(C8_CONFIG)


@pytest.fixture(scope="module")
def c8_stress_runs():
    return _ensemble(C8_STRESS)


def _on_fine(d):
    lab = d.partition.labels()
    return Partition.from_labels([lab[d.aggregated.members[q][0]] for q in range(d.aggregated.n)])


def _relative_errors(runs, k):
    """Winner's lifted cost against the best enumerated optimum over all strategy instances."""
    errors, coarsened = [], 0
    for g, res in runs:
        optima = []
        for d in res.diagnostics.values():
            if not d.feasible:
                continue
            best = _enumerated_optimum(d.aggregated, k, res.max_volume)
            assert best is not None
            assert partition_objective(d.aggregated, _on_fine(d)) >= best[0] - 1e-6
            optima.append(best[0])
            coarsened += d.n_solved < d.aggregated.n
        win = res.diagnostics[res.strategy]
        ref = min(optima)
        errors.append((partition_objective(win.aggregated, _on_fine(win)) - ref) / ref)
    return np.array(errors), coarsened


@pytest.mark.criterion("8")
def test_c8_isc_within_exact_optimum(c8_runs):
    runs, elapsed = c8_runs
    t0 = time.perf_counter()
    errors, coarsened = _relative_errors(runs, C8_CONFIG.k)
    print(f"\nISC vs enumerated optimum: mean {errors.mean():.4f}, max {errors.max():.4f}, coarsened {coarsened}")
    assert errors.mean() <= 0.03
    assert errors.max() <= 0.10
    assert elapsed + time.perf_counter() - t0 < 600


def test_forced_precoarsening_error(c8_stress_runs):
    errors, coarsened = _relative_errors(c8_stress_runs[0], C8_STRESS.k)
    print(f"\nK_max=8: mean {errors.mean():.4f}, max {errors.max():.4f}, coarsened {coarsened}")
    assert coarsened > 0
    assert errors.mean() <= 0.03


@pytest.mark.xfail(strict=True, reason="greedy reduction to K_max=8 loses the optimum by ~22% on one seeded grid")
def test_forced_precoarsening_worst_case(c8_stress_runs):
    errors, _ = _relative_errors(c8_stress_runs[0], C8_STRESS.k)
    assert errors.max() <= 0.10


# ------------------------------------------------------------------ 9


@pytest.mark.criterion("9")
def test_c9_case9_outputs_balanced(case9, mats9):
    W3 = IslandingConfig(k=3).volume_cap(mats9.total_volume)
    A = mats9.Phi_full + mats9.P_abs
    for M in (A, mats9.P_abs):
        assert _balanced(hsc_partition(M, mats9.volumes, 3, case9.adjacency), mats9.volumes, W3)
    res = _case9_run(case9)
    assert _balanced(res.partition, res.matrices.volumes, res.max_volume)


@pytest.mark.criterion("9")
def test_c9_exact_solutions_balanced():
    for seed, agg, k, W, fewer in list(_c5_instances())[:30]:
        try:
            sol = exact_solve(agg, k, W, limits=UNLIMITED, allow_fewer=fewer)
        except InfeasibleError:
            continue
        assert _balanced(sol.partition, agg.volumes, W)


@pytest.mark.criterion("9")
def test_c9_ensemble_outputs_balanced(c8_runs):
    for g, res in c8_runs[0]:
        assert _balanced(res.partition, res.matrices.volumes, res.max_volume)
        assert len(res.partition) == C8_CONFIG.k


@pytest.mark.criterion("9")
def test_c9_raw_strategies_violate_cap():
    violations = []
    for seed in range(10):
        g = random_grid(60, 9000 + seed)
        m = derive_matrices(g)
        cfg = IslandingConfig(k=4, enforce_balance=False, strategies=("IV", "V"))
        W = cfg.volume_cap(m.total_volume)
        for sid, r in candidate_partitions(g, m, cfg).items():
            if not _balanced(r.partition, m.volumes, W):
                violations.append((seed, sid))
    print(f"\nraw IV/V cap violations (seed, strategy): {violations}")
    assert violations


# ------------------------------------------------------------------ 10


@pytest.mark.criterion("10")
def test_c10_cli_reports_byte_identical(tmp_path, case9):
    case = tmp_path / "case9.json"
    case.write_text(serialize_case(case9))
    outs = [tmp_path / f"r{i}.json" for i in range(2)]
    for out in outs:
        assert main(["part", "--case", str(case), "--k", "3", "--out", str(out)]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes()


@pytest.mark.criterion("10")
def test_c10_pipeline_reports_byte_identical():
    g = random_grid(45, 10_000)
    cfg = IslandingConfig(k=3, node_limit=200_000, time_limit_s=None)
    texts = [build_report("grid45", g, cfg, isc_pipeline(g, cfg)).to_json() for _ in range(2)]
    assert texts[0] == texts[1]
    assert json.loads(texts[0])["islands"]
