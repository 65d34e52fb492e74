"""Grid data model, case-file I/O, DC power flow and derived matrices.

Buses are stored in a canonical internal order with generator buses first,
so generator ``k`` always sits at internal bus index ``k``.  External bus
ids from the case file are kept in :attr:`PowerGrid.bus_ids` and used for
all I/O.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class CaseError(ValueError):
    """Malformed or inconsistent grid case."""


class SingularSystemError(np.linalg.LinAlgError):
    """A susceptance block needed for a solve is singular."""


@dataclass(frozen=True)
class Bus:
    id: int
    demand: float
    voltage: float = 1.0
    angle: float = 0.0
    load: float | None = None  # currently served load; defaults to demand

    @property
    def served(self) -> float:
        return self.demand if self.load is None else self.load


@dataclass(frozen=True)
class Generator:
    bus: int
    max_output: float
    output: float
    inertia: float = 1.0


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    reactance: float
    flow_limit: float
    flow: float | None = None  # MW, positive from -> to


@dataclass(frozen=True, eq=False)
class PowerGrid:
    """Buses (generator buses first), generators and lines of a grid.

    Build through :meth:`from_components` or :func:`parse_case`; both apply
    the canonical reordering and validate references.
    """

    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    lines: tuple[Line, ...]
    base_mva: float = 100.0

    @classmethod
    def from_components(
        cls,
        buses: Iterable[Bus],
        generators: Iterable[Generator],
        lines: Iterable[Line],
        base_mva: float = 100.0,
    ) -> "PowerGrid":
        buses = list(buses)
        generators = list(generators)
        lines = list(lines)
        _validate(buses, generators, lines, base_mva)
        gen_by_bus = {g.bus: g for g in generators}
        order = sorted(buses, key=lambda b: (b.id not in gen_by_bus, b.id))
        gens = tuple(gen_by_bus[b.id] for b in order if b.id in gen_by_bus)
        return cls(tuple(order), gens, tuple(lines), float(base_mva))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PowerGrid):
            return NotImplemented
        return (
            self.buses == other.buses
            and self.generators == other.generators
            and self.lines == other.lines
            and self.base_mva == other.base_mva
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def n_g(self) -> int:
        return len(self.generators)

    @property
    def m(self) -> int:
        return len(self.lines)

    @cached_property
    def bus_ids(self) -> np.ndarray:
        return np.array([b.id for b in self.buses], dtype=int)

    @cached_property
    def index_of(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def line_ends(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.index_of
        f = np.array([idx[ln.from_bus] for ln in self.lines], dtype=int)
        t = np.array([idx[ln.to_bus] for ln in self.lines], dtype=int)
        return f, t

    @cached_property
    def demand(self) -> np.ndarray:
        return np.array([b.demand for b in self.buses], dtype=float)

    @cached_property
    def load(self) -> np.ndarray:
        return np.array([b.served for b in self.buses], dtype=float)

    def _gen_vector(self, attr: str) -> np.ndarray:
        out = np.zeros(self.n)
        out[: self.n_g] = [getattr(g, attr) for g in self.generators]
        return out

    @cached_property
    def max_output(self) -> np.ndarray:
        return self._gen_vector("max_output")

    @cached_property
    def output(self) -> np.ndarray:
        return self._gen_vector("output")

    @cached_property
    def inertia(self) -> np.ndarray:
        return np.array([g.inertia for g in self.generators], dtype=float)

    @cached_property
    def voltage(self) -> np.ndarray:
        return np.array([b.voltage for b in self.buses], dtype=float)

    @cached_property
    def angle(self) -> np.ndarray:
        return np.array([b.angle for b in self.buses], dtype=float)

    @cached_property
    def injection(self) -> np.ndarray:
        """Net consumption ``d_i - g_i`` per bus, MW."""
        return self.load - self.output

    @cached_property
    def line_limits(self) -> np.ndarray:
        return np.array([ln.flow_limit for ln in self.lines], dtype=float)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Boolean bus adjacency of the line graph."""
        a = np.zeros((self.n, self.n), dtype=bool)
        f, t = self.line_ends
        a[f, t] = a[t, f] = True
        return a

    @cached_property
    def limit_matrix(self) -> np.ndarray:
        """Symmetric matrix of line flow limits, MW."""
        lim = np.zeros((self.n, self.n))
        f, t = self.line_ends
        np.add.at(lim, (f, t), self.line_limits)
        np.add.at(lim, (t, f), self.line_limits)
        return lim

    def edges(self) -> list[tuple[int, int, float]]:
        f, t = self.line_ends
        return [(int(i), int(j), float(c)) for i, j, c in zip(f, t, self.line_limits)]

    @property
    def has_flows(self) -> bool:
        return bool(self.lines) and all(ln.flow is not None for ln in self.lines)

    def components(self) -> list[list[int]]:
        """Connected components as lists of internal bus indices."""
        ncomp, labels = csgraph.connected_components(sp.csr_matrix(self.adjacency), directed=False)
        return [np.flatnonzero(labels == c).tolist() for c in range(ncomp)]

    def external(self, indices: Iterable[int]) -> list[int]:
        return [int(self.bus_ids[i]) for i in indices]


def _validate(buses: Sequence[Bus], gens: Sequence[Generator], lines: Sequence[Line], base_mva: float) -> None:
    if base_mva <= 0:
        raise CaseError(f"baseMVA must be positive, got {base_mva}")
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus id")
    known = set(ids)
    for b in buses:
        if b.demand < 0:
            raise CaseError(f"bus {b.id}: negative demand {b.demand}")
        if b.voltage <= 0:
            raise CaseError(f"bus {b.id}: voltage magnitude must be positive")
        if b.load is not None and not (0 <= b.load <= b.demand + 1e-9):
            raise CaseError(f"bus {b.id}: served load outside [0, demand]")
    seen_gen: set[int] = set()
    for g in gens:
        if g.bus not in known:
            raise CaseError(f"generator references unknown bus {g.bus}")
        if g.bus in seen_gen:
            raise CaseError(f"more than one generator on bus {g.bus}")
        seen_gen.add(g.bus)
        if g.inertia <= 0:
            raise CaseError(f"generator at bus {g.bus}: inertia must be positive")
        if g.max_output < 0 or not (0 <= g.output <= g.max_output + 1e-9):
            raise CaseError(f"generator at bus {g.bus}: output outside [0, Pmax]")
    pairs: set[tuple[int, int]] = set()
    for ln in lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                raise CaseError(f"line references unknown bus {end}")
        if ln.from_bus == ln.to_bus:
            raise CaseError(f"line {ln.from_bus}-{ln.to_bus} is a self loop")
        key = (min(ln.from_bus, ln.to_bus), max(ln.from_bus, ln.to_bus))
        if key in pairs:
            raise CaseError(f"duplicate line {key[0]}-{key[1]}")
        pairs.add(key)
        if ln.reactance <= 0:
            raise CaseError(f"line {key[0]}-{key[1]}: reactance must be positive")
        if ln.flow_limit < 0:
            raise CaseError(f"line {key[0]}-{key[1]}: negative flow limit")


# ---------------------------------------------------------------- case I/O


def _number(obj: dict, key: str, where: str, default: float | None = None) -> float:
    if key not in obj:
        if default is None:
            raise CaseError(f"{where}: missing field {key!r}")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise CaseError(f"{where}: field {key!r} must be a finite number")
    return float(val)


def _integer(obj: dict, key: str, where: str) -> int:
    val = obj.get(key)
    if isinstance(val, bool) or not isinstance(val, int):
        if isinstance(val, float) and val.is_integer():
            return int(val)
        raise CaseError(f"{where}: field {key!r} must be an integer")
    return val


def case_from_dict(doc: dict) -> PowerGrid:
    """Build a grid from an already-decoded JSON case document."""
    if not isinstance(doc, dict):
        raise CaseError("case document must be a JSON object")
    for key in ("bus", "gen", "branch"):
        if not isinstance(doc.get(key), list):
            raise CaseError(f"case document needs a list {key!r}")
    base = _number(doc, "baseMVA", "case", default=100.0)
    buses = []
    for k, b in enumerate(doc["bus"]):
        where = f"bus[{k}]"
        if not isinstance(b, dict):
            raise CaseError(f"{where}: expected an object")
        load = _number(b, "Pl", where) if "Pl" in b else None
        buses.append(
            Bus(
                id=_integer(b, "id", where),
                demand=_number(b, "Pd", where, 0.0),
                voltage=_number(b, "Vm", where, 1.0),
                angle=_number(b, "Va", where, 0.0),
                load=load,
            )
        )
    gens = []
    for k, g in enumerate(doc["gen"]):
        where = f"gen[{k}]"
        if not isinstance(g, dict):
            raise CaseError(f"{where}: expected an object")
        gens.append(
            Generator(
                bus=_integer(g, "bus", where),
                max_output=_number(g, "Pmax", where),
                output=_number(g, "Pg", where, 0.0),
                inertia=_number(g, "H", where, 1.0),
            )
        )
    lines = []
    for k, br in enumerate(doc["branch"]):
        where = f"branch[{k}]"
        if not isinstance(br, dict):
            raise CaseError(f"{where}: expected an object")
        flow = _number(br, "Pf", where) if "Pf" in br and br["Pf"] is not None else None
        lines.append(
            Line(
                from_bus=_integer(br, "from", where),
                to_bus=_integer(br, "to", where),
                reactance=_number(br, "x", where),
                flow_limit=_number(br, "rateA", where),
                flow=flow,
            )
        )
    grid = PowerGrid.from_components(buses, gens, lines, base)
    comps = grid.components()
    if len(comps) > 1:
        log.warning("grid has %d connected components (sizes %s)", len(comps), [len(c) for c in comps])
    return grid


def parse_case(text: str | bytes) -> PowerGrid:
    """Parse a UTF-8 JSON case document into a :class:`PowerGrid`."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"malformed case document: {exc}") from exc
    return case_from_dict(doc)


def load_case(path) -> PowerGrid:
    with open(path, encoding="utf-8") as fh:
        return parse_case(fh.read())


def case_to_dict(grid: PowerGrid) -> dict:
    buses = []
    for b in grid.buses:
        entry = {"id": b.id, "Pd": b.demand, "Vm": b.voltage, "Va": b.angle}
        if b.load is not None:
            entry["Pl"] = b.load
        buses.append(entry)
    gens = [{"bus": g.bus, "Pg": g.output, "Pmax": g.max_output, "H": g.inertia} for g in grid.generators]
    branches = []
    for ln in grid.lines:
        entry = {"from": ln.from_bus, "to": ln.to_bus, "x": ln.reactance, "rateA": ln.flow_limit}
        if ln.flow is not None:
            entry["Pf"] = ln.flow
        branches.append(entry)
    return {"baseMVA": grid.base_mva, "bus": buses, "gen": gens, "branch": branches}


def serialize_case(grid: PowerGrid) -> str:
    """Canonical JSON text; ``parse_case(serialize_case(g)) == g``."""
    return json.dumps(case_to_dict(grid), indent=1) + "\n"


def with_flows(grid: PowerGrid, flows: np.ndarray) -> PowerGrid:
    """Copy of ``grid`` whose lines carry flows read off an n x n flow matrix."""
    f, t = grid.line_ends
    lines = [
        Line(ln.from_bus, ln.to_bus, ln.reactance, ln.flow_limit, float(flows[i, j]))
        for ln, i, j in zip(grid.lines, f, t)
    ]
    return PowerGrid(grid.buses, grid.generators, tuple(lines), grid.base_mva)


# ---------------------------------------------------------- network algebra


def susceptance_matrix(grid: PowerGrid) -> np.ndarray:
    """Nodal susceptance ``B = Im(Y)`` of a shunt-free, lossless network.

    Off-diagonal entries are ``+1/x`` per line and rows sum to zero.
    """
    n = grid.n
    B = np.zeros((n, n))
    f, t = grid.line_ends
    b = 1.0 / np.array([ln.reactance for ln in grid.lines], dtype=float)
    np.add.at(B, (f, t), b)
    np.add.at(B, (t, f), b)
    B[np.diag_indices(n)] = -B.sum(axis=1)
    return B


def dc_angles(grid: PowerGrid, slack: int | None = None) -> np.ndarray:
    """Bus voltage angles (rad) of the lossless DC flow, zero at the slack.

    ``slack`` is an internal bus index; the default is the first generator
    bus (internal index 0).  The slack absorbs any injection residual.
    """
    n = grid.n
    theta = np.zeros(n)
    if n == 1 or grid.m == 0:
        return theta
    if len(grid.components()) > 1:
        raise SingularSystemError("DC susceptance system is singular: grid is disconnected")
    slack = 0 if slack is None else int(slack)
    f, t = grid.line_ends
    b = 1.0 / np.array([ln.reactance for ln in grid.lines], dtype=float)
    Bdc = sp.coo_matrix(
        (np.r_[b, b, -b, -b], (np.r_[f, t, f, t], np.r_[f, t, t, f])), shape=(n, n)
    ).tocsc()
    keep = np.array([i for i in range(n) if i != slack])
    net = (grid.output - grid.load) / grid.base_mva
    Bred = Bdc[keep][:, keep]
    if n <= 2000:
        theta[keep] = scipy.linalg.solve(Bred.toarray(), net[keep], assume_a="pos")
    else:
        theta[keep] = spla.spsolve(Bred, net[keep])
    return theta


def dc_power_flow(grid: PowerGrid, slack: int | None = None) -> np.ndarray:
    """Antisymmetric n x n matrix of DC line flows in MW.

    Entry ``[i, j]`` is the flow from bus ``i`` to bus ``j``, equal to
    ``base_mva * (theta_i - theta_j) / x_ij``.
    """
    n = grid.n
    flows = np.zeros((n, n))
    if n == 1 or grid.m == 0:
        return flows
    theta = dc_angles(grid, slack)
    f, t = grid.line_ends
    b = 1.0 / np.array([ln.reactance for ln in grid.lines], dtype=float)
    p = grid.base_mva * b * (theta[f] - theta[t])
    flows[f, t] = p
    flows[t, f] = -p
    return flows


def kron_reduce(B: np.ndarray, n_g: int) -> np.ndarray:
    """Schur complement ``B11 - B12 B22^{-1} B21`` eliminating buses n_g.. ."""
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    if n_g >= n:
        return B.copy()
    B11, B12 = B[:n_g, :n_g], B[:n_g, n_g:]
    B21, B22 = B[n_g:, :n_g], B[n_g:, n_g:]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)  # zero pivots are checked below
            lu = scipy.linalg.lu_factor(B22, check_finite=False)
        if np.any(np.abs(np.diag(lu[0])) <= 1e-12 * max(1.0, np.abs(B22).max())):
            raise np.linalg.LinAlgError("zero pivot")
        X = scipy.linalg.lu_solve(lu, B21, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        sv = np.linalg.svd(B22, compute_uv=False)
        null = int(np.sum(sv <= 1e-10 * max(1.0, sv.max(initial=0.0))))
        raise SingularSystemError(f"load-bus block is singular (null-space dimension {null})") from exc
    return B11 - B12 @ X


def dynamic_coupling(grid: PowerGrid, B_reduced: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Generator dynamic-coupling matrix and its zero-padded n x n form.

    ``phi_ij = (1/H_i + 1/H_j) V_i V_j b_ij cos(theta_i - theta_j)``, with a
    zero diagonal.  Negative entries (angle spread beyond quadrature) are
    floored to zero so the matrix stays a valid edge-weight matrix.
    """
    ng = grid.n_g
    H = grid.inertia
    if np.any(H <= 0):
        raise CaseError("inertia constants must be positive")
    V = grid.voltage[:ng]
    th = grid.angle[:ng]
    inv_h = 1.0 / H
    phi = (inv_h[:, None] + inv_h[None, :]) * np.outer(V, V) * np.asarray(B_reduced) * np.cos(th[:, None] - th[None, :])
    np.fill_diagonal(phi, 0.0)
    phi = np.maximum(0.5 * (phi + phi.T), 0.0)
    full = np.zeros((grid.n, grid.n))
    full[:ng, :ng] = phi
    return phi, full


def absolute_flows(flows: np.ndarray) -> np.ndarray:
    """``(|p_ij| + |p_ji|) / 2`` with a zero diagonal."""
    F = np.abs(np.asarray(flows, dtype=float))
    P = 0.5 * (F + F.T)
    np.fill_diagonal(P, 0.0)
    return P


VOLUME_MODES = ("absflow", "capacity")


def bus_volumes(grid: PowerGrid, P_abs: np.ndarray, mode: str = "absflow") -> np.ndarray:
    """Bus volumes: row sums of ``|P|`` or ``G_i + D_i``, floored above zero."""
    if mode == "absflow":
        w = np.asarray(P_abs).sum(axis=1).astype(float)
    elif mode == "capacity":
        w = grid.max_output + grid.demand
    else:
        raise ValueError(f"unknown volume mode {mode!r}")
    top = w.max(initial=0.0)
    eps = 1e-6 * top if top > 0 else 1e-6
    return np.maximum(w, eps)


@dataclass(frozen=True, eq=False)
class DerivedMatrices:
    B: np.ndarray
    B_reduced: np.ndarray
    Phi_gen: np.ndarray
    Phi_full: np.ndarray
    P_signed: np.ndarray  # antisymmetric; [i, j] = flow i -> j; lower triangle = the tabulated P
    P_abs: np.ndarray
    volumes: np.ndarray
    Delta: np.ndarray | None = None

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())


def line_flow_matrix(grid: PowerGrid) -> np.ndarray:
    """Antisymmetric flow matrix from flows stored on the lines."""
    n = grid.n
    P = np.zeros((n, n))
    f, t = grid.line_ends
    p = np.array([ln.flow for ln in grid.lines], dtype=float)
    P[f, t] = p
    P[t, f] = -p
    return P


def derive_matrices(grid: PowerGrid, volume_mode: str = "absflow", delta: np.ndarray | None = None) -> DerivedMatrices:
    """Every matrix the islanding metrics need, in internal bus order."""
    if grid.has_flows or grid.m == 0:
        P = line_flow_matrix(grid)
    else:
        if any(ln.flow is not None for ln in grid.lines):
            log.warning("case carries flows on some lines only; recomputing all flows with DC power flow")
        P = dc_power_flow(grid)
    B = susceptance_matrix(grid)
    if grid.n_g:
        Bt = kron_reduce(B, grid.n_g)
        phi, phi_full = dynamic_coupling(grid, Bt)
    else:
        Bt = np.zeros((0, 0))
        phi, phi_full = np.zeros((0, 0)), np.zeros((grid.n, grid.n))
    P_abs = absolute_flows(P)
    w = bus_volumes(grid, P_abs, volume_mode)
    if delta is not None:
        delta = np.asarray(delta, dtype=float)
        if delta.shape != (grid.n, grid.n):
            raise CaseError(f"distance matrix must be {grid.n}x{grid.n}, got {delta.shape}")
        if not np.allclose(delta, delta.T) or np.any(delta < 0):
            raise CaseError("distance matrix must be symmetric and nonnegative")
    return DerivedMatrices(B, Bt, phi, phi_full, P, P_abs, w, delta)


def reorder_external(grid: PowerGrid, matrix: np.ndarray, case_order: Sequence[int]) -> np.ndarray:
    """Permute a matrix given in case-file bus order into internal order."""
    pos = {bid: k for k, bid in enumerate(case_order)}
    perm = np.array([pos[int(b)] for b in grid.bus_ids])
    return np.asarray(matrix)[np.ix_(perm, perm)]


# ------------------------------------------------------------ pendant merge


@dataclass(frozen=True, eq=False)
class PendantMerge:
    """Graph with pendant vertices folded into their neighbours."""

    matrix: np.ndarray
    volumes: np.ndarray
    injections: np.ndarray
    adjacency: np.ndarray
    groups: tuple[tuple[int, ...], ...]  # original vertices per super-node
    node_of: np.ndarray  # original vertex -> super-node
    degenerate: bool = False

    def unmerge(self, labels: Sequence[int]) -> np.ndarray:
        """Super-node labels to labels on the original vertices."""
        return np.asarray(labels)[self.node_of]


def merge_pendants(
    weights: np.ndarray,
    volumes: np.ndarray,
    injections: np.ndarray | None = None,
    adjacency: np.ndarray | None = None,
    min_nodes: int = 1,
    labels: Sequence[int] | None = None,
) -> PendantMerge:
    """Fold degree-one vertices into their unique neighbour until none remain.

    The graph is the nonzero pattern of ``weights`` united with
    ``adjacency``.  Folding stops early once ``min_nodes`` super-nodes are
    left.  With ``labels`` (``-1`` = unlabelled) a fold that would join two
    different labels is skipped.
    """
    W = np.asarray(weights, dtype=float)
    n = W.shape[0]
    vol = np.asarray(volumes, dtype=float).copy()
    inj = np.zeros(n) if injections is None else np.asarray(injections, dtype=float).copy()
    pattern = W != 0
    if adjacency is not None:
        pattern = pattern | np.asarray(adjacency, dtype=bool)
    np.fill_diagonal(pattern, False)
    nbrs = [set(np.flatnonzero(pattern[i]).tolist()) for i in range(n)]
    lab = [-1] * n if labels is None else [int(x) for x in labels]
    parent = list(range(n))
    alive = set(range(n))
    queue = sorted(i for i in range(n) if len(nbrs[i]) == 1)
    while queue and len(alive) > min_nodes:
        i = queue.pop(0)
        if i not in alive or len(nbrs[i]) != 1:
            continue
        (j,) = nbrs[i]
        if lab[i] != -1 and lab[j] != -1 and lab[i] != lab[j]:
            continue
        parent[i] = j
        vol[j] += vol[i]
        inj[j] += inj[i]
        if lab[j] == -1:
            lab[j] = lab[i]
        nbrs[j].discard(i)
        nbrs[i] = set()
        alive.discard(i)
        if len(nbrs[j]) == 1:
            queue.append(j)
            queue.sort()

    def root(v: int) -> int:
        while parent[v] != v:
            v = parent[v]
        return v

    roots = sorted(alive)
    pos = {r: k for k, r in enumerate(roots)}
    node_of = np.array([pos[root(v)] for v in range(n)], dtype=int)
    k = len(roots)
    X = sp.csr_matrix((np.ones(n), (np.arange(n), node_of)), shape=(n, k))
    M = (X.T @ sp.csr_matrix(W) @ X).toarray()
    np.fill_diagonal(M, 0.0)
    A = (X.T @ sp.csr_matrix(pattern.astype(float)) @ X).toarray() > 0
    np.fill_diagonal(A, False)
    groups = tuple(tuple(np.flatnonzero(node_of == c).tolist()) for c in range(k))
    return PendantMerge(
        matrix=M,
        volumes=vol[roots],
        injections=inj[roots],
        adjacency=A,
        groups=groups,
        node_of=node_of,
        degenerate=(k == 1 and n > 1),
    )
