import math
import time

import numpy as np
import pytest

from qucircle.der import Pt2Params, build_control_loop, build_pt2, default_params, pt2_step
from qucircle.lti import RationalTransfer
from qucircle.pt2fit import FitConfig, FitError, TarStepSpec, der_objective, fit_der, fit_tar, step_metrics


def test_step_metrics_on_first_order_trace():
    T = 2.0
    t = np.linspace(0, 40, 40001)
    m = step_metrics(t, 1 - np.exp(-t / T))
    assert m.overshoot == 0.0
    assert m.rise_time_90 == pytest.approx(T * math.log(10), rel=1e-6)
    assert m.settling_time == pytest.approx(T * math.log(20), rel=1e-6)


def test_step_metrics_scale_with_static_gain():
    t = np.linspace(0, 20, 2001)
    y = 1 - np.exp(-t)
    a = step_metrics(t, y)
    b = step_metrics(t, 3 * y, static_gain=3.0)
    assert (b.overshoot, b.rise_time_90, b.settling_time) == pytest.approx(
        (a.overshoot, a.rise_time_90, a.settling_time), rel=1e-12
    )


def test_step_metrics_underdamped_overshoot():
    D = 0.3
    t = np.linspace(0, 60, 60001)
    m = step_metrics(t, pt2_step(Pt2Params(1.0, D, 1.0), t))
    assert m.overshoot == pytest.approx(math.exp(-math.pi * D / math.sqrt(1 - D * D)), rel=1e-5)


def test_step_metrics_never_rising_trace():
    t = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        step_metrics(t, 0.5 * np.ones_like(t))


def test_step_metrics_starting_above_target():
    t = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        step_metrics(t, np.ones_like(t))


def test_tar_spec_validation():
    with pytest.raises(ValueError):
        TarStepSpec(overshoot=1.2)
    with pytest.raises(ValueError):
        TarStepSpec(rise_time_90=9.0, settling_time=8.0)


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(band_low=1.0, band_high=0.5)
    with pytest.raises(ValueError):
        FitConfig(grid_points=10)


def _damping_from_overshoot(z):
    # inverse of exp(-pi D / sqrt(1 - D^2))
    lz = math.log(z)
    return -lz / math.sqrt(math.pi**2 + lz * lz)


def test_tar_fit_damping_follows_overshoot_inverse():
    fit = fit_tar()
    assert fit.params.damping == pytest.approx(_damping_from_overshoot(0.15), rel=0.01)
    assert fit.metrics.overshoot == pytest.approx(0.15, abs=0.003)
    assert fit.converged


@pytest.mark.parametrize("zeta", [0.05, 0.1, 0.25])
def test_tar_fit_other_overshoots(zeta):
    fit = fit_tar(TarStepSpec(zeta, 5.0, 8.0))
    assert fit.params.damping == pytest.approx(_damping_from_overshoot(zeta), rel=0.03)


def test_tar_fit_is_scale_covariant():
    a = fit_tar(TarStepSpec(0.15, 5.0, 8.0))
    b = fit_tar(TarStepSpec(0.15, 10.0, 16.0))
    assert b.params.damping == pytest.approx(a.params.damping, rel=1e-3)
    assert b.params.time_constant == pytest.approx(2 * a.params.time_constant, rel=1e-3)


def test_tar_fit_is_fast():
    t0 = time.perf_counter()
    fit_tar()
    assert time.perf_counter() - t0 < 1.0


def _independent_cost(model, w, D, T):
    g = model(1j * w)
    p = 1 / (1 - (T * w) ** 2 + 2j * D * T * w)
    return np.sum(np.log(np.abs(p) / np.abs(g)) ** 2 + (np.unwrap(np.angle(p)) - np.unwrap(np.angle(g))) ** 2)


def test_der_fit_beats_brute_force_grid():
    model = build_control_loop("wf-frc", default_params("wf-frc"))
    cfg = FitConfig()
    w = cfg.frequencies()
    Ds = np.linspace(0.3, 1.5, 61)
    Ts = np.linspace(0.4, 2.0, 81)
    costs = np.array([[_independent_cost(model, w, D, T) for T in Ts] for D in Ds])
    i, j = np.unravel_index(np.argmin(costs), costs.shape)
    fit = fit_der(model, cfg)
    assert fit.residual <= costs[i, j] + 1e-9
    assert fit.params.damping == pytest.approx(Ds[i], abs=0.03)
    assert fit.params.time_constant == pytest.approx(Ts[j], abs=0.03)
    assert fit.residual == pytest.approx(
        _independent_cost(model, w, fit.params.damping, fit.params.time_constant), rel=1e-9
    )


@pytest.mark.parametrize("p", [Pt2Params(1.0, 0.747, 1.028), Pt2Params(1.0, 0.3, 4.0), Pt2Params(1.0, 1.8, 0.2)])
def test_der_self_fit_is_identity(p):
    fit = fit_der(build_pt2(p))
    assert fit.params.damping == pytest.approx(p.damping, rel=1e-5)
    assert fit.params.time_constant == pytest.approx(p.time_constant, rel=1e-5)
    assert fit.residual < 1e-9


def test_der_objective_zero_at_truth():
    p = Pt2Params(1.0, 0.6, 1.7)
    assert der_objective(build_pt2(p))(0.6, 1.7) == pytest.approx(0.0, abs=1e-20)


def test_der_fit_requires_unit_gain():
    with pytest.raises(FitError):
        fit_der(RationalTransfer((2.0,), (1.0, 1.0)))


def test_fit_json_keys():
    doc = fit_tar().to_json()
    assert set(doc) == {"d", "t", "kappa", "residual", "mode"}
    assert doc["mode"] == "tar" and doc["kappa"] == 1.0
