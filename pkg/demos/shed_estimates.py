"""
Excess load versus max-flow shed
================================

Excess load counts the deficit at the present dispatch; the max-flow
estimate lets generators ramp to capacity but respects line limits.  Neither
bounds the other in general, which this script shows on random islands.
"""
import numpy as np

from islanding import shed_max_flow
from islanding.cuts import excess_load
from islanding.synthetic import random_grid

rng = np.random.default_rng(3)
grid = random_grid(40, 3)


def grow(size):
    start = int(rng.integers(grid.n))
    island, frontier = {start}, [start]
    while frontier and len(island) < size:
        u = frontier.pop()
        for v in np.flatnonzero(grid.adjacency[u]):
            if len(island) < size and int(v) not in island:
                island.add(int(v))
                frontier.append(int(v))
    return sorted(island)


print(" size    S_EL    S_MF   demand  gens")
for _ in range(12):
    s = grow(int(rng.integers(3, 15)))
    res = shed_max_flow(grid, s)
    n_gen = int((grid.max_output[s] > 0).sum())
    print(f"{len(s):5d} {excess_load(grid.injection, s):7.1f} {res.shed:7.1f} {grid.demand[s].sum():8.1f} {n_gen:5d}")

# With every generator at full output the excess load is a true lower bound.
print("\nS_MF never drops below the deficit left after running all units flat out:")
for _ in range(5):
    s = grow(10)
    floor = max(grid.demand[s].sum() - grid.max_output[s].sum(), 0.0)
    print(f"  floor {floor:7.1f} <= S_MF {shed_max_flow(grid, s).shed:7.1f}")
