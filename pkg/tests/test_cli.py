import csv
import json
import re

import pytest

from islanding import example_case
from islanding.cli import main
from islanding.config import IslandingConfig
from islanding.cuts import Partition
from islanding.grid import serialize_case
from islanding.pipeline import isc_pipeline
from islanding.report import CSV_FIELDS, build_report, export_dot, export_metrics_csv, teared_lines

from test_matpower import CASE9


@pytest.fixture()
def case_file(tmp_path, case9):
    p = tmp_path / "case9.json"
    p.write_text(serialize_case(case9))
    return p


def _dot_nodes(text):
    return dict(re.findall(r'^\s+(\d+) \[fillcolor="([^"]+)"', text, re.M))


def test_part_writes_report(tmp_path, case_file, case9):
    out, dot, table = tmp_path / "r.json", tmp_path / "g.dot", tmp_path / "m.csv"
    code = main(["part", "--case", str(case_file), "--k", "2", "--out", str(out), "--dot", str(dot), "--csv", str(table)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert len(rep["islands"]) == 2
    assert sorted(b for s in rep["islands"] for b in s) == list(range(1, 10))
    assert set(rep["metrics"]) == {"C", "D", "ECI", "S_EL", "S_MF", "S", "F"}
    crossing = {tuple(e) for e in rep["teared_lines"]}
    island_of = {b: k for k, s in enumerate(rep["islands"]) for b in s}
    for ln in case9.lines:
        assert ((ln.from_bus, ln.to_bus) in crossing) == (island_of[ln.from_bus] != island_of[ln.to_bus])
    colors = _dot_nodes(dot.read_text())
    assert len(colors) == 9 and len(set(colors.values())) == 2
    for s in rep["islands"]:
        assert len({colors[str(b)] for b in s}) == 1
    assert dot.read_text().count("style=dashed") == len(crossing)
    rows = list(csv.reader(table.open()))
    assert tuple(rows[0]) == CSV_FIELDS and len(rows) == 8
    timing = json.loads((tmp_path / "r.json.timing.json").read_text())
    assert set(timing) == {"I", "II", "III", "IV", "V", "VI", "VII"}
    assert "ms_step1" not in out.read_text()


def test_part_is_byte_reproducible(tmp_path, case_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert main(["part", "--case", str(case_file), "--k", "2", "--node-limit", "100000", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_part_k1(tmp_path, case_file):
    out = tmp_path / "r.json"
    assert main(["part", "--case", str(case_file), "--k", "1", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert len(rep["islands"]) == 1
    assert rep["metrics"]["C"] == 0 and rep["metrics"]["D"] == 0
    assert rep["teared_lines"] == []


def test_part_to_stdout(case_file, capsys):
    assert main(["part", "--case", str(case_file), "--k", "2", "--strategies", "II"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["strategy"] == "II" and [s["id"] for s in rep["strategies"]] == ["II"]


@pytest.mark.parametrize(
    "argv",
    [
        ["--alpha-eci", "1"],
        ["--strategies", "VIII"],
        ["--granularity", "4,4"],
        ["--regress", "x,1"],
    ],
)
def test_input_errors_exit_1(case_file, capsys, argv):
    assert main(["part", "--case", str(case_file), "--k", "2", *argv]) == 1
    assert "islandctl: error" in capsys.readouterr().err


def test_missing_case_exit_1(tmp_path):
    assert main(["part", "--case", str(tmp_path / "nope.json")]) == 1


def test_infeasible_exit_2(case_file, capsys):
    assert main(["part", "--case", str(case_file), "--k", "2", "--max-volume-frac", "0.2"]) == 2
    assert "infeasible" in capsys.readouterr().err


def test_eci_with_delta(tmp_path, case_file):
    n = 9
    delta = [[abs(i - j) * 0.1 for j in range(n)] for i in range(n)]
    dfile = tmp_path / "delta.json"
    dfile.write_text(json.dumps(delta))
    out = tmp_path / "r.json"
    assert main(["part", "--case", str(case_file), "--k", "2", "--alpha-eci", "1", "--delta", str(dfile), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["metrics"]["ECI"] > 0


def test_metrics_subcommand(tmp_path, case_file):
    pf = tmp_path / "p.json"
    pf.write_text(json.dumps({"islands": [[1, 4, 5], [2, 3, 6, 7, 8, 9]]}))
    out = tmp_path / "m.json"
    assert main(["metrics", "--case", str(case_file), "--k", "2", "--partition", str(pf), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["metrics"]["D"] == pytest.approx(2 * (17.60 + 36.05), abs=1e-6)
    assert sorted(map(tuple, rep["teared_lines"])) == [(4, 6), (7, 5)]
    pf.write_text(json.dumps({"islands": [[1, 4, 5], [2, 3]]}))
    assert main(["metrics", "--case", str(case_file), "--partition", str(pf)]) == 1
    pf.write_text(json.dumps({"islands": [[1, 4, 5, 99], [2, 3, 6, 7, 8, 9]]}))
    assert main(["metrics", "--case", str(case_file), "--partition", str(pf)]) == 1


def test_convert_subcommand(tmp_path):
    src, out = tmp_path / "case9.m", tmp_path / "case9.json"
    src.write_text(CASE9)
    assert main(["convert", str(src), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["bus"]) == 9 and len(doc["branch"]) == 9
    assert main(["part", "--case", str(out), "--k", "3", "--strategies", "I,II"]) == 0


# ------------------------------------------------------------ report helpers


def test_dot_single_island_has_no_dashes(tmp_path, case9):
    p = tmp_path / "g.dot"
    export_dot(case9, Partition.single(9), p)
    assert "dashed" not in p.read_text()
    with pytest.raises(ValueError):
        export_dot(case9, Partition(()), p)


def test_csv_round_trips_metrics(tmp_path, case9):
    res = isc_pipeline(case9, IslandingConfig(k=2, strategies=("I", "II")))
    p = tmp_path / "m.csv"
    export_metrics_csv(res.diagnostics, p)
    rows = list(csv.DictReader(p.open()))
    assert [r["id"] for r in rows] == ["I", "II"]
    for r in rows:
        rep = res.diagnostics[r["id"]].report
        assert float(r["C"]) == rep.coherency_c
        assert float(r["D"]) == rep.disruption_d
        assert float(r["S_EL"]) == rep.excess_load
        assert float(r["S_MF"]) == rep.shed_mf
        assert float(r["F"]) == rep.cost_f


def test_report_islands_agree_with_result(case9):
    cfg = IslandingConfig(k=2)
    res = isc_pipeline(case9, cfg)
    rep = build_report("case9", case9, cfg, res)
    assert rep.islands == [sorted(case9.external(s)) for s in res.partition]
    assert rep.teared == teared_lines(case9, res.partition)
    assert json.loads(rep.to_json())["strategy"] == res.strategy


def test_example_case_loads():
    assert example_case().n == 9
