"""Static grid data model, JSON schema, SimBench import and penetration.

Quantities are stored in engineering units (kV, Ω, µS, MW, Mvar, km) as
they appear in the JSON document; per-unit conversion happens in the power
flow.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .der import (
    MODEL_KINDS,
    DerControlParams,
    Pt2Params,
    QuCharacteristic,
    default_params,
)

__all__ = [
    "GridError",
    "Node",
    "Branch",
    "Transformer",
    "Load",
    "DerPlant",
    "GridModel",
    "GRID_SCHEMA",
    "load_grid",
    "load_grid_file",
    "dump_grid",
    "import_simbench",
    "penetration_factor",
    "parse_der_params",
    "RHO_GERMANY_KW_PER_KM",
]

# national average DER penetration, kW per km of line; reference only
RHO_GERMANY_KW_PER_KM = 57.0


class GridError(ValueError):
    """Invalid grid document or inconsistent grid data."""


@dataclass(frozen=True)
class Node:
    id: str
    vn: float
    kind: str = "pq"
    u_set: float | None = None

    def __post_init__(self):
        if self.kind not in ("slack", "pq"):
            raise GridError(f"node {self.id}: kind must be 'slack' or 'pq'")
        if not self.vn > 0:
            raise GridError(f"node {self.id}: vn must be positive")
        if self.u_set is not None and not 0.8 <= self.u_set <= 1.2:
            raise GridError(f"node {self.id}: u_set {self.u_set} outside [0.8, 1.2]")


@dataclass(frozen=True)
class Branch:
    id: str
    from_node: str
    to_node: str
    resistance: float
    reactance: float
    shunt_susceptance: float = 0.0
    length: float = 0.0

    def __post_init__(self):
        if self.resistance == 0 and self.reactance == 0:
            raise GridError(f"branch {self.id}: zero impedance")
        if self.length < 0:
            raise GridError(f"branch {self.id}: negative length")


@dataclass(frozen=True)
class Transformer:
    id: str
    hv_node: str
    lv_node: str
    rated_power: float
    short_circuit_voltage: float
    ohmic_part: float
    tap_position: int = 0
    tap_step: float = 0.0

    def __post_init__(self):
        if self.rated_power <= 0:
            raise GridError(f"transformer {self.id}: rated power must be positive")
        if not 0 < self.ohmic_part <= self.short_circuit_voltage:
            raise GridError(f"transformer {self.id}: need 0 < ur <= uk")

    @property
    def ratio(self) -> float:
        return 1.0 + self.tap_position * self.tap_step / 100.0


@dataclass(frozen=True)
class Load:
    node: str
    active_power: float
    reactive_power: float = 0.0


@dataclass(frozen=True)
class DerPlant:
    id: str
    node: str
    installed_power: float
    rated_power: float
    operating_power: float
    model_kind: str
    control_params: DerControlParams | Pt2Params
    characteristic: QuCharacteristic

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise GridError(f"DER {self.id}: unknown model {self.model_kind!r}")
        if self.rated_power <= 0:
            raise GridError(f"DER {self.id}: rated power must be positive")
        if not 0 <= self.operating_power <= self.installed_power:
            raise GridError(f"DER {self.id}: need 0 <= operating power <= installed power")
        expect = Pt2Params if self.model_kind == "pt2" else DerControlParams
        if not isinstance(self.control_params, expect):
            raise GridError(f"DER {self.id}: {self.model_kind} needs {expect.__name__}")


@dataclass(frozen=True)
class GridModel:
    nodes: tuple[Node, ...]
    branches: tuple[Branch, ...] = ()
    transformers: tuple[Transformer, ...] = ()
    loads: tuple[Load, ...] = ()
    ders: tuple[DerPlant, ...] = ()
    base_power: float = 100.0
    total_branch_length: float | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("nodes", "branches", "transformers", "loads", "ders"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.base_power > 0:
            raise GridError("base power must be positive")
        index = {}
        for i, n in enumerate(self.nodes):
            if n.id in index:
                raise GridError(f"duplicate node id {n.id!r}")
            index[n.id] = i
        object.__setattr__(self, "_index", index)
        slack = [n for n in self.nodes if n.kind == "slack"]
        if len(slack) != 1:
            raise GridError(f"expected exactly one slack node, found {len(slack)}")
        for kind, items in (("branch", self.branches), ("transformer", self.transformers), ("DER", self.ders)):
            ids = [x.id for x in items]
            if len(set(ids)) != len(ids):
                raise GridError(f"duplicate {kind} id")
        for b in self.branches:
            self._check_ref(b.from_node, f"branch {b.id}")
            self._check_ref(b.to_node, f"branch {b.id}")
        for t in self.transformers:
            self._check_ref(t.hv_node, f"transformer {t.id}")
            self._check_ref(t.lv_node, f"transformer {t.id}")
        for ld in self.loads:
            self._check_ref(ld.node, "load")
        for d in self.ders:
            self._check_ref(d.node, f"DER {d.id}")
        self._check_connected()

    def _check_ref(self, node_id, owner):
        if node_id not in self._index:
            raise GridError(f"{owner} references unknown node {node_id!r}")

    def _check_connected(self):
        adj = {n.id: [] for n in self.nodes}
        for b in self.branches:
            adj[b.from_node].append(b.to_node)
            adj[b.to_node].append(b.from_node)
        for t in self.transformers:
            adj[t.hv_node].append(t.lv_node)
            adj[t.lv_node].append(t.hv_node)
        start = self.nodes[0].id
        seen = {start}
        queue = deque([start])
        while queue:
            for nb in adj[queue.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        if len(seen) != len(self.nodes):
            missing = sorted(set(adj) - seen)
            raise GridError(f"grid is not connected; unreachable nodes: {missing}")

    def node_index(self, node_id: str) -> int:
        return self._index[node_id]

    @property
    def slack(self) -> Node:
        return next(n for n in self.nodes if n.kind == "slack")

    @property
    def der_ids(self) -> list[str]:
        return [d.id for d in self.ders]

    def length_km(self) -> float:
        if self.total_branch_length is not None:
            return self.total_branch_length
        return sum(b.length for b in self.branches)

    def with_ders(self, ders) -> GridModel:
        return GridModel(
            self.nodes, self.branches, self.transformers, self.loads, tuple(ders),
            self.base_power, self.total_branch_length,
        )


_NUM = {"type": "number"}
_STR = {"type": "string"}


def _obj(props: dict, required=None) -> dict:
    return {
        "type": "object",
        "properties": props,
        "required": list(props) if required is None else required,
        "additionalProperties": False,
    }


GRID_SCHEMA = _obj(
    {
        "base_mva": _NUM,
        "total_length_km": _NUM,
        "nodes": {
            "type": "array",
            "items": _obj(
                {"id": _STR, "vn_kv": _NUM, "kind": {"enum": ["slack", "pq"]}, "u_set_pu": _NUM},
                ["id", "vn_kv", "kind"],
            ),
        },
        "branches": {
            "type": "array",
            "items": _obj(
                {"id": _STR, "from": _STR, "to": _STR, "r_ohm": _NUM, "x_ohm": _NUM, "b_us": _NUM, "length_km": _NUM}
            ),
        },
        "transformers": {
            "type": "array",
            "items": _obj(
                {
                    "id": _STR, "hv_node": _STR, "lv_node": _STR, "s_rated_mva": _NUM,
                    "uk_percent": _NUM, "ur_percent": _NUM, "tap_pos": {"type": "integer"},
                    "tap_step_percent": _NUM,
                }
            ),
        },
        "loads": {"type": "array", "items": _obj({"node": _STR, "p_mw": _NUM, "q_mvar": _NUM})},
        "ders": {
            "type": "array",
            "items": _obj(
                {
                    "id": _STR, "node": _STR, "p_inst_mw": _NUM, "p_r_mw": _NUM, "p_op_mw": _NUM,
                    "model": {"enum": list(MODEL_KINDS)},
                    "params": {"type": "object"},
                    "qu": _obj(
                        {"u_ref_pu": _NUM, "slope_percent_per_pu": _NUM, "deadband_pu": _NUM, "q_limit_share": _NUM}
                    ),
                },
                ["id", "node", "p_inst_mw", "p_r_mw", "p_op_mw", "model", "qu"],
            ),
        },
    },
    ["nodes"],
)

_CONTROL_KEYS = ("t_u", "va_order", "t_dq", "k_q", "t_q", "t_l", "t_g")
_PT2_KEYS = {"kappa": "gain", "damping": "damping", "t": "time_constant"}


def parse_der_params(kind: str, raw: dict | None, der_id: str = "<params>"):
    """Control parameters for a model kind, missing keys taken from the defaults."""
    raw = dict(raw or {})
    if kind == "pt2":
        unknown = set(raw) - set(_PT2_KEYS)
        if unknown:
            raise GridError(f"DER {der_id}: unknown pt2 params {sorted(unknown)}")
        merged = default_params("pt2").to_json() | raw
        try:
            return Pt2Params(*(float(merged[k]) for k in _PT2_KEYS))
        except ValueError as exc:
            raise GridError(f"DER {der_id}: {exc}") from None
    unknown = set(raw) - set(_CONTROL_KEYS)
    if unknown:
        raise GridError(f"DER {der_id}: unknown control params {sorted(unknown)}")
    base = default_params(kind).to_json()
    base.update(raw)
    base["va_order"] = int(base["va_order"])
    try:
        return DerControlParams(**base)
    except ValueError as exc:
        raise GridError(f"DER {der_id}: {exc}") from None


def load_grid(document) -> GridModel:
    """Build a validated :class:`GridModel` from a JSON document.

    ``document`` may be a parsed ``dict`` or a JSON string.
    """
    if isinstance(document, (str, bytes)):
        document = json.loads(document)
    try:
        jsonschema.validate(document, GRID_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise GridError(f"schema violation at {where}: {exc.message}") from None
    try:
        nodes = [Node(n["id"], n["vn_kv"], n["kind"], n.get("u_set_pu")) for n in document["nodes"]]
        branches = [
            Branch(b["id"], b["from"], b["to"], b["r_ohm"], b["x_ohm"], b["b_us"], b["length_km"])
            for b in document.get("branches", [])
        ]
        trafos = [
            Transformer(
                t["id"], t["hv_node"], t["lv_node"], t["s_rated_mva"], t["uk_percent"],
                t["ur_percent"], t["tap_pos"], t["tap_step_percent"],
            )
            for t in document.get("transformers", [])
        ]
        loads = [Load(ld["node"], ld["p_mw"], ld["q_mvar"]) for ld in document.get("loads", [])]
        ders = []
        for d in document.get("ders", []):
            qu = d["qu"]
            ders.append(
                DerPlant(
                    d["id"], d["node"], d["p_inst_mw"], d["p_r_mw"], d["p_op_mw"], d["model"],
                    parse_der_params(d["model"], d.get("params"), d["id"]),
                    QuCharacteristic(
                        qu["u_ref_pu"], qu["slope_percent_per_pu"], qu["deadband_pu"],
                        qu["q_limit_share"], d["p_r_mw"],
                    ),
                )
            )
        return GridModel(
            nodes, branches, trafos, loads, ders,
            document.get("base_mva", 100.0), document.get("total_length_km"),
        )
    except GridError:
        raise
    except ValueError as exc:
        raise GridError(str(exc)) from None


def load_grid_file(path) -> GridModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"grid file not found: {path}")
    return load_grid(json.loads(path.read_text()))


def dump_grid(grid: GridModel) -> dict:
    """Serialize a grid to a schema-conforming document."""
    doc = {
        "base_mva": grid.base_power,
        "nodes": [
            {"id": n.id, "vn_kv": n.vn, "kind": n.kind} | ({"u_set_pu": n.u_set} if n.u_set is not None else {})
            for n in grid.nodes
        ],
        "branches": [
            {
                "id": b.id, "from": b.from_node, "to": b.to_node, "r_ohm": b.resistance,
                "x_ohm": b.reactance, "b_us": b.shunt_susceptance, "length_km": b.length,
            }
            for b in grid.branches
        ],
        "transformers": [
            {
                "id": t.id, "hv_node": t.hv_node, "lv_node": t.lv_node, "s_rated_mva": t.rated_power,
                "uk_percent": t.short_circuit_voltage, "ur_percent": t.ohmic_part,
                "tap_pos": t.tap_position, "tap_step_percent": t.tap_step,
            }
            for t in grid.transformers
        ],
        "loads": [{"node": ld.node, "p_mw": ld.active_power, "q_mvar": ld.reactive_power} for ld in grid.loads],
        "ders": [],
    }
    if grid.total_branch_length is not None:
        doc["total_length_km"] = grid.total_branch_length
    for d in grid.ders:
        ch = d.characteristic
        doc["ders"].append(
            {
                "id": d.id, "node": d.node, "p_inst_mw": d.installed_power, "p_r_mw": d.rated_power,
                "p_op_mw": d.operating_power, "model": d.model_kind, "params": d.control_params.to_json(),
                "qu": {
                    "u_ref_pu": ch.u_ref, "slope_percent_per_pu": ch.slope,
                    "deadband_pu": ch.deadband, "q_limit_share": ch.q_limit_share,
                },
            }
        )
    return doc


def penetration_factor(grid: GridModel) -> float:
    """Installed DER power per grid length in kW/km."""
    length = grid.length_km()
    if not length or length <= 0 or not math.isfinite(length):
        raise GridError("total branch length is zero or unknown")
    return sum(d.installed_power for d in grid.ders) * 1000.0 / length


# SimBench import --------------------------------------------------------------


def _read_table(text: str, name: str, required: tuple[str, ...]) -> list[dict]:
    text = text.strip()
    if not text:
        return []
    sample = text.splitlines()[0] if text else ""
    delim = ";" if sample.count(";") >= sample.count(",") else ","
    rows = list(csv.DictReader(io.StringIO(text), delimiter=delim))
    header = set(rows[0]) if rows else set(sample.split(delim))
    missing = [c for c in required if c not in header]
    if text and missing:
        raise GridError(f"{name} table is missing column(s): {missing}")
    return rows


def _f(row: dict, key: str, default=None) -> float:
    val = row.get(key)
    if val is None or str(val).strip() in ("", "NULL", "nan"):
        if default is None:
            raise GridError(f"missing value for {key!r} in row {row.get('id', row)}")
        return default
    return float(val)


def import_simbench(
    node_table: str,
    line_table: str,
    trafo_table: str,
    load_table: str,
    res_table: str,
    *,
    base_power: float = 100.0,
    slack: str | None = None,
) -> GridModel:
    """Build a grid from SimBench-style CSV tables.

    Columns read (everything else is ignored):

    * nodes: ``id``, ``vmR`` (kV), optional ``vmSetp`` (p.u.)
    * lines: ``id``, ``nodeA``, ``nodeB``, ``length`` (km) and the line-type
      values ``r``, ``x`` (Ω/km), optional ``b`` (µS/km)
    * transformers: ``id``, ``nodeHV``, ``nodeLV``, ``sR`` (MVA), ``vmImp``
      (uk, %), optional ``pCu`` (kW), ``tappos``, ``dVm`` (% per tap)
    * loads: ``node``, ``pLoad`` (MW), optional ``qLoad`` (Mvar)
    * RES: ``id``, ``node``, ``pRES`` (MW), optional ``sR`` (MVA)

    The slack is ``slack`` if given, else the single node with a ``vmSetp``
    value.  RES rows become ``wf-frc`` plants with default parameters.
    """
    nodes_raw = _read_table(node_table, "node", ("id", "vmR"))
    lines_raw = _read_table(line_table, "line", ("id", "nodeA", "nodeB", "length", "r", "x"))
    trafos_raw = _read_table(trafo_table, "transformer", ("id", "nodeHV", "nodeLV", "sR", "vmImp"))
    loads_raw = _read_table(load_table, "load", ("node", "pLoad"))
    res_raw = _read_table(res_table, "RES", ("id", "node", "pRES"))
    if not nodes_raw:
        raise GridError("node table is empty")

    if slack is None:
        flagged = [r["id"] for r in nodes_raw if str(r.get("vmSetp") or "").strip() not in ("", "NULL")]
        if len(flagged) != 1:
            raise GridError(f"cannot identify the slack node from vmSetp ({len(flagged)} candidates)")
        slack = flagged[0]
    nodes = []
    vn = {}
    for r in nodes_raw:
        v = _f(r, "vmR")
        if v <= 0:
            raise GridError(f"node {r['id']}: non-positive rated voltage")
        vn[r["id"]] = v
        if r["id"] == slack:
            nodes.append(Node(r["id"], v, "slack", _f(r, "vmSetp", 1.0)))
        else:
            nodes.append(Node(r["id"], v, "pq"))
    if slack not in vn:
        raise GridError(f"slack node {slack!r} not in node table")

    def known(node_id, owner):
        if node_id not in vn:
            raise GridError(f"{owner} references unknown node {node_id!r}")

    branches = []
    for r in lines_raw:
        known(r["nodeA"], f"line {r['id']}")
        known(r["nodeB"], f"line {r['id']}")
        if not math.isclose(vn[r["nodeA"]], vn[r["nodeB"]], rel_tol=1e-6):
            raise GridError(f"line {r['id']} connects different voltage levels")
        length = _f(r, "length")
        branches.append(
            Branch(r["id"], r["nodeA"], r["nodeB"], _f(r, "r") * length, _f(r, "x") * length,
                   _f(r, "b", 0.0) * length, length)
        )
    trafos = []
    for r in trafos_raw:
        known(r["nodeHV"], f"transformer {r['id']}")
        known(r["nodeLV"], f"transformer {r['id']}")
        if vn[r["nodeHV"]] < vn[r["nodeLV"]]:
            raise GridError(f"transformer {r['id']}: HV node has the lower rated voltage")
        s_r = _f(r, "sR")
        uk = _f(r, "vmImp")
        # copper losses give the ohmic part; without them assume X/R = 10
        ur = _f(r, "pCu") / (s_r * 1000.0) * 100.0 if r.get("pCu") else uk / 10.0
        trafos.append(
            Transformer(r["id"], r["nodeHV"], r["nodeLV"], s_r, uk, ur,
                        int(_f(r, "tappos", 0.0)), _f(r, "dVm", 0.0))
        )
    loads = []
    for r in loads_raw:
        known(r["node"], "load")
        loads.append(Load(r["node"], _f(r, "pLoad"), _f(r, "qLoad", 0.0)))
    ders = []
    for r in res_raw:
        known(r["node"], f"RES {r['id']}")
        p = _f(r, "pRES")
        p_r = _f(r, "sR", p) or p
        ders.append(
            DerPlant(r["id"], r["node"], p, p_r, p, "wf-frc", default_params("wf-frc"),
                     QuCharacteristic(rated_power=p_r))
        )
    return GridModel(nodes, branches, trafos, loads, ders, base_power)
