import copy
import json

import pytest

from qucircle.der import DerControlParams, Pt2Params, default_params
from qucircle.grid import (
    RHO_GERMANY_KW_PER_KM,
    GridError,
    dump_grid,
    import_simbench,
    load_grid,
    load_grid_file,
    penetration_factor,
)

from conftest import GRID_FIXTURES, SIMBENCH_DIR, load_fixture, simbench_tables


def _doc(name):
    return json.loads((SIMBENCH_DIR.parent / f"{name}.json").read_text())


def test_toy_feeder_totals(toy):
    assert len(toy.nodes) == 5
    assert len(toy.ders) == 2
    assert sum(d.installed_power for d in toy.ders) == pytest.approx(30.0)


def test_defaults_fill_missing_control_params(toy):
    assert toy.ders[0].control_params == default_params("wf-frc")


def test_partial_params_merge_with_defaults():
    doc = _doc("single_der")
    doc["ders"][0]["params"] = {"t_g": 0.3}
    p = load_grid(doc).ders[0].control_params
    assert p == DerControlParams(t_g=0.3)


def test_pt2_plant_params():
    doc = _doc("single_der")
    doc["ders"][0]["model"] = "pt2"
    doc["ders"][0]["params"] = {"damping": 0.9, "t": 1.5}
    assert load_grid(doc).ders[0].control_params == Pt2Params(1.0, 0.9, 1.5)


def test_unknown_param_rejected():
    doc = _doc("single_der")
    doc["ders"][0]["params"] = {"t_x": 1.0}
    with pytest.raises(GridError, match="unknown"):
        load_grid(doc)


def test_missing_file():
    with pytest.raises(FileNotFoundError, match="grid file not found"):
        load_grid_file("/nonexistent/grid.json")


def test_schema_rejects_unknown_key():
    doc = _doc("toy_feeder")
    doc["nodes"][0]["colour"] = "red"
    with pytest.raises(GridError, match="schema"):
        load_grid(doc)


def test_schema_rejects_missing_field():
    doc = _doc("toy_feeder")
    del doc["branches"][0]["x_ohm"]
    with pytest.raises(GridError, match="schema"):
        load_grid(doc)


def test_accepts_json_text():
    text = (SIMBENCH_DIR.parent / "toy_feeder.json").read_text()
    assert load_grid(text) == load_fixture("toy_feeder")


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d["nodes"][1].update(kind="slack"), "slack"),
        (lambda d: d["nodes"].append(copy.deepcopy(d["nodes"][1])), "duplicate"),
        (lambda d: d["branches"][0].update(to="ghost"), "unknown node"),
        (lambda d: d["loads"][0].update(node="ghost"), "unknown node"),
        (lambda d: d["nodes"].append({"id": "island", "vn_kv": 20.0, "kind": "pq"}), "not connected"),
        (lambda d: d["ders"][0].update(p_op_mw=99.0), "operating power"),
        (lambda d: d["branches"][0].update(r_ohm=0.0, x_ohm=0.0), "zero impedance"),
        (lambda d: d["ders"][1].update(id=d["ders"][0]["id"]), "duplicate"),
    ],
)
def test_structural_validation(mutate, message):
    doc = _doc("toy_feeder")
    mutate(doc)
    with pytest.raises(GridError, match=message):
        load_grid(doc)


@pytest.mark.parametrize("name", GRID_FIXTURES)
def test_dump_load_round_trip(name):
    g = load_fixture(name)
    assert load_grid(dump_grid(g)) == g
    assert load_grid(json.loads(json.dumps(dump_grid(g)))) == g


def test_penetration_factor(toy):
    length = sum(b.length for b in toy.branches)
    assert penetration_factor(toy) == pytest.approx(30000.0 / length)


def test_penetration_uses_declared_total_length():
    doc = _doc("toy_feeder")
    doc["total_length_km"] = 100.0
    assert penetration_factor(load_grid(doc)) == pytest.approx(300.0)


def test_penetration_needs_length():
    doc = _doc("single_der")
    doc["branches"][0]["length_km"] = 0.0
    with pytest.raises(GridError):
        penetration_factor(load_grid(doc))


def test_reference_penetration_constant():
    assert RHO_GERMANY_KW_PER_KM == 57.0


# SimBench import ----------------------------------------------------------------


def _rows(text):
    return len([ln for ln in text.strip().splitlines()[1:] if ln.strip()])


def test_simbench_counts_match_rows():
    tables = simbench_tables()
    g = import_simbench(*tables)
    assert len(g.nodes) == _rows(tables[0])
    assert len(g.branches) == _rows(tables[1])
    assert len(g.transformers) == _rows(tables[2])
    assert len(g.loads) == _rows(tables[3])
    assert len(g.ders) == _rows(tables[4])
    assert _rows(tables[0]) + _rows(tables[1]) + _rows(tables[2]) == 10


def test_simbench_values():
    g = import_simbench(*simbench_tables())
    assert g.slack.id == "HV1 Bus 1"
    line = g.branches[0]
    assert line.length == 6.5
    assert line.reactance == pytest.approx(0.117 * 6.5)
    assert line.shunt_susceptance == pytest.approx(119.38 * 6.5)
    t = g.transformers[0]
    # 150 kW copper losses at 25 MVA
    assert t.ohmic_part == pytest.approx(0.6)
    assert {d.model_kind for d in g.ders} == {"wf-frc"}


def test_simbench_comma_delimited():
    tables = [t.replace(";", ",") for t in simbench_tables()]
    g = import_simbench(*tables)
    assert len(g.nodes) == 5


def test_simbench_explicit_slack():
    tables = simbench_tables()
    tables[0] = tables[0].replace("HV1 Bus 1;busbar;1.0;0;", "HV1 Bus 1;busbar;;;")
    with pytest.raises(GridError, match="slack"):
        import_simbench(*tables)
    assert import_simbench(*tables, slack="HV1 Bus 1").slack.id == "HV1 Bus 1"


def test_simbench_unit_inconsistency():
    tables = simbench_tables()
    tables[1] = tables[1].replace("MV1.101 Line 1;MV1.101 Bus 1;", "MV1.101 Line 1;HV1 Bus 1;")
    with pytest.raises(GridError, match="voltage levels"):
        import_simbench(*tables)


def test_simbench_missing_column():
    tables = simbench_tables()
    tables[1] = tables[1].replace(";x;", ";xx;")
    with pytest.raises(GridError, match="missing column"):
        import_simbench(*tables)
