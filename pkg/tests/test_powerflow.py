import numpy as np
import pytest

from qucircle.grid import Branch, DerPlant, GridModel, Load, Node, Transformer
from qucircle.der import QuCharacteristic, default_params
from qucircle.powerflow import (
    PowerFlowError,
    SensitivityMatrix,
    build_admittance,
    nodal_injections,
    sensitivity,
    solve,
)

from conftest import all_fixture_grids
from pf_oracles import fd_sensitivity

FIXTURES = all_fixture_grids()


def _two_bus(p_load=5.0, q_load=2.0):
    nodes = [Node("a", 20.0, "slack", 1.02), Node("b", 20.0)]
    line = Branch("l", "a", "b", 1.2, 3.6, 0.0, 10.0)
    return GridModel(nodes, [line], loads=[Load("b", p_load, q_load)])


def _gauss_seidel(Y, s, v_slack, iters=20000):
    V = np.array([v_slack, 1.0 + 0j])
    for _ in range(iters):
        V[1] = (np.conj(s[1] / V[1]) - Y[1, 0] * V[0]) / Y[1, 1]
    return V


def test_two_bus_against_gauss_seidel():
    g = _two_bus()
    zb = 20.0**2 / 100.0
    y = 1 / complex(1.2 / zb, 3.6 / zb)
    Y = np.array([[y, -y], [-y, y]])
    V = _gauss_seidel(Y, np.array([0, -(5.0 + 2.0j) / 100]), 1.02)
    sol = solve(g, tolerance=1e-12)
    assert sol.vm == pytest.approx(np.abs(V), abs=1e-10)
    assert sol.va == pytest.approx(np.angle(V), abs=1e-10)


def test_admittance_by_hand(toy):
    Y = build_admittance(toy)
    sb = toy.base_power
    idx = toy.node_index
    zb = 20.0**2 / sb
    expected = np.zeros((5, 5), dtype=complex)
    for b in toy.branches:
        i, k = idx(b.from_node), idx(b.to_node)
        y = zb / complex(b.resistance, b.reactance)
        ysh = 1j * b.shunt_susceptance * 1e-6 * zb / 2
        expected[i, i] += y + ysh
        expected[k, k] += y + ysh
        expected[i, k] -= y
        expected[k, i] -= y
    (t,) = toy.transformers
    zk = t.short_circuit_voltage / 100 * sb / t.rated_power
    rk = t.ohmic_part / 100 * sb / t.rated_power
    yt = 1 / complex(rk, np.sqrt(zk**2 - rk**2))
    h, lo = idx(t.hv_node), idx(t.lv_node)
    expected[h, h] += yt
    expected[lo, lo] += yt
    expected[h, lo] -= yt
    expected[lo, h] -= yt
    assert Y == pytest.approx(expected)
    assert Y == pytest.approx(Y.T)


def test_off_nominal_tap_no_load_voltage():
    nodes = [Node("h", 110.0, "slack", 1.0), Node("l", 20.0)]
    t = Transformer("t", "h", "l", 40.0, 12.0, 0.5, tap_position=3, tap_step=1.5)
    sol = solve(GridModel(nodes, transformers=[t]), tolerance=1e-12)
    assert sol.vm[1] == pytest.approx(1 / 1.045, rel=1e-10)


@pytest.mark.parametrize("name", list(FIXTURES))
def test_fixture_converges_quickly(name):
    sol = solve(FIXTURES[name])
    assert sol.iterations <= 10
    assert sol.max_mismatch < 1e-8


@pytest.mark.parametrize("name", list(FIXTURES))
def test_power_balance(name):
    g = FIXTURES[name]
    sol = solve(g, tolerance=1e-12)
    V = sol.voltage
    sb = g.base_power
    losses = 0.0
    for b in g.branches:
        i, k = g.node_index(b.from_node), g.node_index(b.to_node)
        zb = g.nodes[i].vn ** 2 / sb
        z = complex(b.resistance, b.reactance) / zb
        losses += abs((V[i] - V[k]) / z) ** 2 * z.real
    for t in g.transformers:
        i, k = g.node_index(t.hv_node), g.node_index(t.lv_node)
        r = t.ohmic_part / 100 * sb / t.rated_power
        x = np.sqrt((t.short_circuit_voltage / 100 * sb / t.rated_power) ** 2 - r * r)
        losses += abs((V[i] / t.ratio - V[k]) / complex(r, x)) ** 2 * r
    slack = g.node_index(g.slack.id)
    spec = nodal_injections(g)
    spec[slack] = complex(sol.p[slack], sol.q[slack])
    assert spec.real.sum() == pytest.approx(losses, rel=1e-8)
    assert losses > 0


def test_nodal_injections_sign_convention(single):
    s = nodal_injections(single, der_p=[0.1], der_q=[-0.02])
    assert s[single.node_index("n2")] == pytest.approx(0.1 - 0.02j)
    assert s[single.node_index("n1")] == pytest.approx(-(1.5 + 0.4j) / 100)


def test_non_convergence_raises():
    with pytest.raises(PowerFlowError):
        solve(_two_bus(p_load=5000.0), max_iterations=20)


@pytest.mark.parametrize("name", list(FIXTURES))
@pytest.mark.parametrize("wrt", ["q", "p"])
def test_sensitivity_matches_finite_differences(name, wrt):
    g = FIXTURES[name]
    K = sensitivity(g, solve(g, 1e-12), wrt).entries
    fd = fd_sensitivity(g, wrt)
    assert np.max(np.abs(K - fd) / np.abs(fd)) < 1e-4


def test_reactive_sensitivity_is_positive(meshed):
    K = sensitivity(meshed, solve(meshed)).entries
    assert np.all(K > 0)
    assert np.all(np.diag(K) >= K.max(axis=0) - 1e-12)


def test_der_at_slack_has_no_sensitivity():
    nodes = [Node("a", 20.0, "slack", 1.0), Node("b", 20.0)]
    ch = QuCharacteristic(rated_power=5.0)
    ders = [
        DerPlant("s", "a", 5.0, 5.0, 2.0, "wf-frc", default_params("wf-frc"), ch),
        DerPlant("b", "b", 5.0, 5.0, 2.0, "wf-frc", default_params("wf-frc"), ch),
    ]
    g = GridModel(nodes, [Branch("l", "a", "b", 1.0, 3.0, 0.0, 5.0)], ders=ders)
    K = sensitivity(g, solve(g)).entries
    assert K[0] == pytest.approx([0, 0]) and K[:, 0] == pytest.approx([0, 0])
    assert K[1, 1] > 0


def test_sensitivity_matrix_validation():
    with pytest.raises(ValueError):
        SensitivityMatrix(np.eye(2), ("a",))
    with pytest.raises(ValueError):
        SensitivityMatrix([[np.nan]], ("a",))
    with pytest.raises(ValueError):
        sensitivity(_two_bus(), solve(_two_bus()), "v")


def test_solution_json(single):
    doc = solve(single).to_json()
    assert [n["id"] for n in doc["nodes"]] == ["hv", "n1", "n2"]
    assert doc["nodes"][0]["u_pu"] == 1.0
