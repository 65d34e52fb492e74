"""Conversion of MATPOWER ``.m`` case files to the JSON case schema."""
from __future__ import annotations

import logging
import math
import re
from collections import defaultdict

import numpy as np

from .grid import CaseError

log = logging.getLogger(__name__)

_BLOCK = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def _rows(body: str) -> np.ndarray:
    lines = []
    for raw in body.splitlines():
        raw = raw.split("%", 1)[0]
        for chunk in raw.split(";"):
            vals = chunk.replace(",", " ").split()
            if vals:
                lines.append([float(v) for v in vals])
    if not lines:
        return np.zeros((0, 0))
    width = max(len(r) for r in lines)
    out = np.full((len(lines), width), np.nan)
    for k, r in enumerate(lines):
        out[k, : len(r)] = r
    return out


def parse_matpower(text: str) -> dict:
    """Read a MATPOWER case body into a JSON case document.

    Offline generators and branches are dropped, isolated buses removed,
    generators on one bus summed, and parallel branches combined (admittances
    and ratings added).  A zero ``rateA`` means unlimited and becomes the
    total generating capacity.  Branch flows are carried over when the file
    holds a solved case.
    """
    blocks = {m.group(1): _rows(m.group(2)) for m in _BLOCK.finditer(text)}
    for need in ("bus", "gen", "branch"):
        if need not in blocks:
            raise CaseError(f"MATPOWER case lacks mpc.{need}")
    m = _SCALAR.search(text)
    base = float(m.group(1)) if m else 100.0
    bus, gen, br = blocks["bus"], blocks["gen"], blocks["branch"]
    if bus.shape[1] < 9 or gen.shape[1] < 10 or br.shape[1] < 11:
        raise CaseError("MATPOWER tables have too few columns")

    live = {int(r[0]) for r in bus if int(r[1]) != 4}
    gen_by_bus: dict[int, list[float]] = defaultdict(lambda: [0.0, 0.0])
    for r in gen:
        b = int(r[0])
        if r[7] <= 0 or b not in live:
            continue
        pg, pmax = float(r[1]), float(r[8])
        if pg < 0:
            log.warning("generator at bus %d has negative output %.3f; clipped to 0", b, pg)
            pg = 0.0
        gen_by_bus[b][0] += pg
        gen_by_bus[b][1] += max(pmax, pg)
    cap_total = sum(v[1] for v in gen_by_bus.values()) or 1.0

    combined: dict[tuple[int, int], list[float]] = {}
    for r in br:
        f, t = int(r[0]), int(r[1])
        if r[10] <= 0 or f not in live or t not in live or f == t:
            continue
        x = float(r[3])
        if x <= 0:
            log.warning("branch %d-%d has reactance %.4g; replaced by 1e-4", f, t, x)
            x = 1e-4
        rate = float(r[5]) if r[5] > 0 else cap_total
        sign = 1.0
        key = (f, t)
        if (t, f) in combined:
            key, sign = (t, f), -1.0
        pf = float(r[13]) * sign if br.shape[1] > 13 and not math.isnan(r[13]) else None
        if key in combined:
            e = combined[key]
            e[0] += 1.0 / x
            e[1] += rate
            e[2] = None if (e[2] is None or pf is None) else e[2] + pf
        else:
            combined[key] = [1.0 / x, rate, pf]

    connected = {b for k in combined for b in k} | set(gen_by_bus)
    doc_bus = []
    for r in bus:
        b = int(r[0])
        if b not in live:
            continue
        if b not in connected:
            log.info("dropping isolated bus %d", b)
            continue
        pd = float(r[2])
        if pd < 0:
            log.warning("bus %d has negative demand %.3f; clipped to 0", b, pd)
            pd = 0.0
        doc_bus.append({"id": b, "Pd": pd, "Vm": float(r[7]) if r[7] > 0 else 1.0, "Va": math.radians(float(r[8]))})
    doc_gen = [{"bus": b, "Pg": v[0], "Pmax": v[1], "H": 1.0} for b, v in sorted(gen_by_bus.items())]
    doc_branch = []
    for (f, t), (y, rate, pf) in combined.items():
        e = {"from": f, "to": t, "x": 1.0 / y, "rateA": rate}
        if pf is not None:
            e["Pf"] = pf
        doc_branch.append(e)
    has_all = all("Pf" in e for e in doc_branch)
    if not has_all:
        for e in doc_branch:
            e.pop("Pf", None)
    return {"baseMVA": base, "bus": doc_bus, "gen": doc_gen, "branch": doc_branch}
