import io
import math

import numpy as np
import pytest
from scipy import optimize

from qucircle.der import QuCharacteristic, default_params
from qucircle.grid import Branch, DerPlant, GridModel, Node
from qucircle.powerflow import sensitivity, solve
from qucircle.timesim import (
    Ramp,
    SimScenario,
    SimTrace,
    classify,
    find_sim_threshold,
    simulate,
    write_trace_csv,
)

from sim_oracles import initial_kq, nyquist_slope, rightmost_root


def _trace(t, v):
    v = np.asarray(v, dtype=float).reshape(len(t), -1)
    return SimTrace(np.asarray(t), v, np.zeros_like(v), tuple(f"d{i}" for i in range(v.shape[1])))


T = np.arange(0, 20.0001, 1e-3)


def test_classify_decaying_oscillation():
    v = 1.0 + 0.01 * np.exp(-(T - 5)) * np.sin(3 * T) * (T >= 5)
    c = classify(_trace(T, v), 5.0)
    assert c.verdict == "asymptotically_stable"
    assert 0 < c.decay_ratio < 2 * math.exp(-5)
    assert c.window == (5.0, 15.0)


def test_classify_constant_amplitude():
    c = classify(_trace(T, 1.0 + 0.01 * np.sin(3 * T)), 5.0)
    assert c.verdict == "not_decayed"
    assert c.decay_ratio == pytest.approx(1.0, rel=0.01)


def test_classify_growing_oscillation():
    c = classify(_trace(T, 1.0 + 1e-4 * np.exp(0.2 * T) * np.sin(3 * T)), 5.0)
    assert c.verdict == "not_decayed" and c.decay_ratio > 1


def test_classify_divergence_guard():
    c = classify(_trace(T, 1.0 + 1e-4 * np.exp(0.6 * T) * np.sin(3 * T)), 5.0)
    assert c.verdict == "diverged"


def test_classify_flat_trace():
    assert classify(_trace(T, np.ones_like(T)), 5.0).decay_ratio == 0.0


def test_classify_window_must_fit():
    with pytest.raises(ValueError):
        classify(_trace(T, np.ones_like(T)), 12.0)


def test_classify_truncated_trace_is_diverged():
    tr = SimTrace(T[:10], np.ones((10, 1)), np.zeros((10, 1)), ("d",), truncated=True)
    assert classify(tr, 5.0).verdict == "diverged"


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dt": 0.0},
        {"horizon": 15.0},
        {"disturbance": Ramp(p_initial_share=0.8, p_final_share=0.5)},
        {"disturbance": Ramp(ramp_start=-1.0)},
        {"grid_coupling": "magic"},
        {"representation": "foo"},
        {"slope": -1.0},
    ],
)
def test_scenario_validation(single, kwargs):
    args = {"slope": 10.0} | kwargs
    with pytest.raises(ValueError):
        SimScenario(single, **args)


def test_default_horizon_covers_window(single):
    assert SimScenario(single, 1.0).horizon == pytest.approx(17.0)


def test_dead_time_shorter_than_step(single):
    with pytest.raises(ValueError, match="dead time"):
        simulate(SimScenario(single, 10.0, dt=0.5))


def test_slope_zero_is_open_loop(toy):
    ramp = Ramp()
    tr = simulate(SimScenario(toy, 0.0, ramp))
    assert np.all(tr.reactive_powers == 0)
    # voltages are affine in the ramp: linearized coupling with fixed K_P
    p0 = np.array([ramp.p_initial_share * d.installed_power for d in toy.ders]) / toy.base_power
    sol = solve(toy, der_p=p0)
    kp = sensitivity(toy, sol, "p").entries
    idx = [toy.node_index(d.node) for d in toy.ders]
    p_inst = np.array([d.installed_power for d in toy.ders]) / toy.base_power
    dp = (ramp.share(tr.times) - ramp.p_initial_share)[:, None] * p_inst
    assert tr.voltages == pytest.approx(sol.vm[idx] + dp @ kp.T, abs=1e-12)
    assert classify(tr, ramp.ramp_end).verdict == "asymptotically_stable"


def test_starts_in_equilibrium(toy):
    tr = simulate(SimScenario(toy, 800.0))
    before = tr.times < 1.0
    assert np.ptp(tr.voltages[before], axis=0) == pytest.approx([0, 0], abs=1e-10)
    assert np.ptp(tr.reactive_powers[before], axis=0) == pytest.approx([0, 0], abs=1e-10)


def test_droop_absorbs_reactive_power_when_voltage_high(single):
    tr = simulate(SimScenario(single, 500.0))
    assert tr.voltages[-1, 0] > 1.0
    assert tr.reactive_powers[-1, 0] < 0


def test_saturation_holds_limit(single):
    tr = simulate(SimScenario(single, 3000.0, Ramp(1.0, 5.0, 0.5, 1.0)))
    q_max = 0.33 * single.ders[0].rated_power / single.base_power
    assert np.all(np.abs(tr.reactive_powers) <= q_max + 1e-12)


def test_full_power_flow_close_to_linearized(single):
    ramp = Ramp(1.0, 5.0, 0.1, 0.15)
    lin = simulate(SimScenario(single, 500.0, ramp))
    full = simulate(SimScenario(single, 500.0, ramp, grid_coupling="full_power_flow", dt=2e-3))
    assert full.voltages[-1] == pytest.approx(lin.voltages[-1], abs=2e-4)
    assert not full.truncated


def test_pt2_representations_run(single):
    for rep in ("pt2-der", "pt2-tar"):
        tr = simulate(SimScenario(single, 300.0, representation=rep))
        assert classify(tr, 6.0).verdict == "asymptotically_stable"


def test_low_slope_stable_high_slope_not(single):
    ramp = Ramp(1.0, 5.0, 0.1, 0.12)
    m_n = nyquist_slope(single, initial_kq(single, ramp)[0, 0])
    low = classify(simulate(SimScenario(single, 0.3 * m_n, ramp, saturation=False)), ramp.ramp_end)
    high = classify(simulate(SimScenario(single, 1.1 * m_n, ramp, saturation=False)), ramp.ramp_end)
    assert low.verdict == "asymptotically_stable"
    assert high.verdict in ("not_decayed", "diverged")


def test_nyquist_slope_puts_root_on_imaginary_axis(single):
    ramp = Ramp(1.0, 5.0, 0.1, 0.12)
    kq = initial_kq(single, ramp)
    lam = rightmost_root(single, kq, nyquist_slope(single, kq[0, 0]))
    assert abs(lam.real) < 1e-5


def test_threshold_tracks_required_decay_rate(single):
    # a swing ratio of 0.5 across 5 s windows needs Re(lambda) <= -ln(2)/5
    ramp = Ramp(1.0, 5.0, 0.1, 0.12)
    kq = initial_kq(single, ramp)
    m_n = nyquist_slope(single, kq[0, 0])
    m_decay = optimize.brentq(lambda m: rightmost_root(single, kq, m).real + math.log(2) / 5, 0.3 * m_n, m_n)
    res = find_sim_threshold(single, ramp=ramp, m_cap=20_000)
    assert not res.no_limit
    assert res.slope == pytest.approx(m_decay, rel=0.02)
    assert 0.85 * m_n < res.slope < m_n


def test_threshold_without_sensitivity_has_no_limit():
    nodes = [Node("a", 20.0, "slack", 1.0), Node("b", 20.0)]
    ch = QuCharacteristic(rated_power=5.0)
    der = DerPlant("s", "a", 5.0, 5.0, 2.0, "wf-frc", default_params("wf-frc"), ch)
    g = GridModel(nodes, [Branch("l", "a", "b", 1.0, 3.0, 0.0, 5.0)], ders=[der])
    res = find_sim_threshold(g, m_cap=64.0)
    assert res.no_limit and res.slope == 64.0


def test_threshold_start_must_be_stable(single):
    with pytest.raises(RuntimeError):
        find_sim_threshold(single, m_start=50_000.0, m_cap=60_000.0)


def test_trace_csv(single):
    tr = simulate(SimScenario(single, 10.0))
    buf = io.StringIO()
    write_trace_csv(tr, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "time_s,u_wf_pu,q_wf_pu"
    assert len(lines) == len(tr.times) + 1
    assert np.all(np.diff(tr.times) == pytest.approx(1e-3))
