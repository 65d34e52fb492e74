"""Seeded random grids and aggregated grids for tests and demos."""
from __future__ import annotations

import numpy as np

from .grid import Bus, Generator, Line, PowerGrid, dc_angles, dc_power_flow, with_flows
from .solver import AggregatedGrid


def _random_topology(rng: np.random.Generator, n: int, extra: float) -> list[tuple[int, int]]:
    # random spanning tree plus short-range chords, loosely grid-like
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        lo = max(0, k - 4)
        j = int(rng.integers(lo, k))
        a, b = int(order[k]), int(order[j])
        edges.add((min(a, b), max(a, b)))
    n_extra = int(round(extra * n))
    tries = 0
    while n_extra and tries < 50 * n:
        tries += 1
        k = int(rng.integers(0, n))
        j = int(np.clip(k + rng.integers(-5, 6), 0, n - 1))
        a, b = int(order[k]), int(order[j])
        if a == b:
            continue
        e = (min(a, b), max(a, b))
        if e not in edges:
            edges.add(e)
            n_extra -= 1
    return sorted(edges)


def random_grid(
    n: int,
    seed: int,
    n_gen: int | None = None,
    extra_lines: float = 0.4,
    margin: tuple[float, float] = (1.2, 2.5),
    headroom: tuple[float, float] = (1.1, 1.6),
    mean_load: float = 60.0,
) -> PowerGrid:
    """A connected grid of ``n`` buses with DC flows stored on its lines.

    Generators sit on random buses and share the total demand in proportion
    to their capacity; every line limit exceeds its pre-islanding flow by a
    random factor drawn from ``margin``.
    """
    if n < 2:
        raise ValueError("need at least two buses")
    rng = np.random.default_rng(seed)
    n_gen = n_gen or max(2, n // 5)
    n_gen = min(n_gen, n - 1)  # keep at least one load bus
    gen_buses = np.sort(rng.choice(n, size=n_gen, replace=False))
    is_gen = np.zeros(n, dtype=bool)
    is_gen[gen_buses] = True
    demand = np.where(is_gen, 0.0, rng.gamma(2.0, mean_load / 2.0, size=n))
    demand[~is_gen & (rng.random(n) < 0.15)] = 0.0
    total = demand.sum()
    if total <= 0:
        demand[np.flatnonzero(~is_gen)[:1]] = mean_load
        total = demand.sum()
    share = rng.uniform(0.5, 1.5, size=n_gen)
    output = total * share / share.sum()
    pmax = output * rng.uniform(*headroom, size=n_gen)
    buses = [Bus(id=i + 1, demand=round(float(demand[i]), 4)) for i in range(n)]
    gens = [
        Generator(bus=int(b) + 1, max_output=float(pmax[k]), output=float(output[k]), inertia=float(rng.uniform(2.0, 8.0)))
        for k, b in enumerate(gen_buses)
    ]
    # rescale outputs so injections balance after demand rounding
    d_tot = sum(b.demand for b in buses)
    scale = d_tot / sum(g.output for g in gens)
    gens = [Generator(g.bus, max(g.max_output, g.output * scale), g.output * scale, g.inertia) for g in gens]
    edges = _random_topology(rng, n, extra_lines)
    x = rng.uniform(0.02, 0.25, size=len(edges))
    lines = [Line(a + 1, b + 1, float(x[k]), 1.0) for k, (a, b) in enumerate(edges)]
    draft = PowerGrid.from_components(buses, gens, lines, 100.0)
    F = dc_power_flow(draft)
    lim = {}
    for ln in draft.lines:
        i, j = draft.index_of[ln.from_bus], draft.index_of[ln.to_bus]
        lim[(ln.from_bus, ln.to_bus)] = abs(F[i, j]) * float(rng.uniform(*margin)) + float(rng.uniform(5.0, 20.0))
    lines = [Line(ln.from_bus, ln.to_bus, ln.reactance, round(lim[(ln.from_bus, ln.to_bus)], 3)) for ln in draft.lines]
    grid = PowerGrid.from_components(buses, gens, lines, 100.0)
    theta = dc_angles(grid)
    buses = [Bus(b.id, b.demand, 1.0, float(theta[grid.index_of[b.id]])) for b in buses]
    grid = PowerGrid.from_components(buses, gens, lines, 100.0)
    return with_flows(grid, dc_power_flow(grid))


def random_aggregated_grid(n: int, seed: int, extra_edges: float = 0.6) -> AggregatedGrid:
    """A random aggregated instance with independent volumes, limits and weights."""
    rng = np.random.default_rng(seed)
    edges = _random_topology(rng, n, extra_edges)
    limit = np.zeros((n, n))
    weights = np.zeros((n, n))
    flow = np.zeros((n, n))
    for a, b in edges:
        limit[a, b] = limit[b, a] = rng.uniform(5.0, 80.0)
        weights[a, b] = weights[b, a] = rng.uniform(1.0, 60.0)
        f = rng.uniform(-1.0, 1.0) * limit[a, b]
        flow[a, b], flow[b, a] = f, -f
    gmask = rng.random(n) < 0.4
    gmask[int(rng.integers(n))] = True
    G = np.where(gmask, rng.uniform(20.0, 150.0, size=n), 0.0)
    D = np.where(rng.random(n) < 0.8, rng.uniform(5.0, 100.0, size=n), 0.0)
    g = np.minimum(G, G * D.sum() / max(G.sum(), 1e-9))
    coupling = np.zeros((n, n))
    gi = np.flatnonzero(gmask)
    for p in gi:
        for q in gi:
            if p < q:
                coupling[p, q] = coupling[q, p] = rng.uniform(0.0, 10.0)
    return AggregatedGrid(
        members=tuple((i,) for i in range(n)),
        max_output=G,
        output=g,
        demand=D,
        load=D.copy(),
        injection=D - g,
        volumes=rng.uniform(10.0, 200.0, size=n),
        flow=flow,
        abs_flow=np.abs(flow),
        limit=limit,
        coupling=coupling,
        delta=None,
        weights=weights + coupling,
        topology=limit > 0,
        n_bus=n,
    )
