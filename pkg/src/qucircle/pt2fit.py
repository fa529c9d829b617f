"""Least-squares PT2 approximations of DER reactive-power dynamics.

Two routes:

* ``fit_tar`` matches a PT2 step response to grid-code step specifications
  (overshoot, 90 % rise time, settling time).
* ``fit_der`` matches a PT2 frequency response (log magnitude and phase) to
  a detailed loop model over a frequency band.

The static gain is pinned to 1 in both cases; only damping ``D`` and time
constant ``T`` are free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .der import Pt2Params, build_pt2, pt2_step
from .lti import RationalTransfer, freq_response

__all__ = [
    "TarStepSpec",
    "StepMetrics",
    "FitConfig",
    "Pt2Fit",
    "FitError",
    "step_metrics",
    "fit_tar",
    "fit_der",
    "der_objective",
]


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class TarStepSpec:
    overshoot: float = 0.15
    rise_time_90: float = 5.0
    settling_time: float = 8.0
    settle_band: float = 0.05

    def __post_init__(self):
        if not 0 <= self.overshoot < 1:
            raise ValueError("overshoot must lie in [0, 1)")
        if not 0 < self.rise_time_90 < self.settling_time:
            raise ValueError("need 0 < rise_time_90 < settling_time")
        if not 0 < self.settle_band < 1:
            raise ValueError("settle_band must lie in (0, 1)")


@dataclass(frozen=True)
class StepMetrics:
    overshoot: float
    rise_time_90: float
    settling_time: float


@dataclass(frozen=True)
class FitConfig:
    band_low: float = 1e-2
    band_high: float = 1e2
    grid_points: int = 200
    # (overshoot, rise time, settling time) weights on relative errors
    weights: tuple[float, float, float] = (100.0, 100.0, 1.0)

    def __post_init__(self):
        if not 0 < self.band_low < self.band_high:
            raise ValueError("need 0 < band_low < band_high")
        if self.grid_points < 50:
            raise ValueError("grid_points must be >= 50")

    def frequencies(self) -> np.ndarray:
        return np.logspace(math.log10(self.band_low), math.log10(self.band_high), self.grid_points)


@dataclass(frozen=True)
class Pt2Fit:
    params: Pt2Params
    residual: float
    mode: str
    converged: bool = True
    metrics: StepMetrics | None = field(default=None, compare=False)

    def to_json(self) -> dict:
        return {
            "d": self.params.damping,
            "t": self.params.time_constant,
            "kappa": self.params.gain,
            "residual": self.residual,
            "mode": self.mode,
        }


def _crossing(t0, t1, y0, y1, level):
    if y1 == y0:
        return t1
    return t0 + (level - y0) / (y1 - y0) * (t1 - t0)


def step_metrics(t, y, static_gain: float = 1.0, settle_band: float = 0.05) -> StepMetrics:
    """Overshoot, first 90 % crossing and settling time of a step trace.

    Crossing instants are linearly interpolated between samples.  The
    settling time is the last exit from the ``+-settle_band * gain`` band;
    a trace that never leaves the band settles at ``t[0]``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if static_gain == 0:
        raise ValueError("static gain must be nonzero")
    yn = y / static_gain
    overshoot = max(float(yn.max()) - 1.0, 0.0)
    above = np.nonzero(yn >= 0.9)[0]
    if above.size == 0:
        raise ValueError("trace never reaches 90 % of the static gain")
    i = above[0]
    if i == 0:
        raise ValueError("trace starts at or above 90 % of the static gain; no rise")
    t90 = _crossing(t[i - 1], t[i], yn[i - 1], yn[i], 0.9)
    err = np.abs(yn - 1.0) - settle_band
    outside = np.nonzero(err > 0)[0]
    if outside.size == 0:
        ts = float(t[0])
    else:
        j = outside[-1]
        if j == len(t) - 1:
            ts = float(t[-1])
        else:
            ts = _crossing(t[j], t[j + 1], err[j], err[j + 1], 0.0)
    return StepMetrics(overshoot, float(t90), float(ts))


def _normalized_metrics(damping: float, settle_band: float, points: int = 4000) -> StepMetrics:
    # PT2 metrics scale linearly with T, so evaluate at T = 1
    slow = damping if damping < 1 else damping - math.sqrt(damping * damping - 1)
    horizon = (math.log(1.0 / settle_band) + 3.0) / slow * 1.5
    tau = np.linspace(0.0, horizon, points)
    return step_metrics(tau, pt2_step(Pt2Params(1.0, damping, 1.0), tau), 1.0, settle_band)


def _pt2_metrics(p: Pt2Params, settle_band: float) -> StepMetrics:
    m = _normalized_metrics(p.damping, settle_band)
    T = p.time_constant
    return StepMetrics(m.overshoot, m.rise_time_90 * T, m.settling_time * T)


def fit_tar(spec: TarStepSpec = TarStepSpec(), cfg: FitConfig = FitConfig()) -> Pt2Fit:
    """Fit ``(D, T)`` to step-response specifications.

    Minimizes the weighted sum of squared *relative* errors of overshoot,
    90 % rise time and settling time.  Overshoot error is scaled by
    ``max(target, 0.05)`` so a zero-overshoot target stays well posed.
    """
    w_os, w_90, w_stl = cfg.weights
    os_scale = max(spec.overshoot, 0.05)

    def cost(x):
        D, T = np.exp(x)
        if not (1e-3 < D < 50 and 1e-6 < T < 1e6):
            return 1e12
        m = _pt2_metrics(Pt2Params(1.0, D, T), spec.settle_band)
        return (
            w_os * ((m.overshoot - spec.overshoot) / os_scale) ** 2
            + w_90 * ((m.rise_time_90 - spec.rise_time_90) / spec.rise_time_90) ** 2
            + w_stl * ((m.settling_time - spec.settling_time) / spec.settling_time) ** 2
        )

    x0 = np.log([0.7, spec.rise_time_90 / 3.0])
    res = optimize.minimize(
        cost, x0, method="Nelder-Mead", options={"xatol": 1e-7, "fatol": 1e-12, "maxiter": 2000}
    )
    if not np.all(np.isfinite(res.x)) or not math.isfinite(res.fun):
        raise FitError(f"TAR fit failed: {res.message}")
    D, T = np.exp(res.x)
    params = Pt2Params(1.0, float(D), float(T))
    return Pt2Fit(params, float(res.fun), "tar", bool(res.success), _pt2_metrics(params, spec.settle_band))


def der_objective(model: RationalTransfer, cfg: FitConfig = FitConfig()):
    """Return ``cost(D, T)``: squared log-magnitude plus phase error (rad)."""
    w = cfg.frequencies()
    g = freq_response(model, w)
    log_mag = np.log(np.abs(g))
    phase = np.unwrap(np.angle(g))
    s = 1j * w

    def cost(damping: float, time_constant: float) -> float:
        p = 1.0 / (1.0 + 2.0 * damping * time_constant * s + (time_constant * s) ** 2)
        return float(
            np.sum((np.log(np.abs(p)) - log_mag) ** 2 + (np.unwrap(np.angle(p)) - phase) ** 2)
        )

    return cost


def fit_der(model: RationalTransfer, cfg: FitConfig = FitConfig()) -> Pt2Fit:
    """Fit ``(D, T)`` to a model's frequency response over the fit band.

    The model must have unit static gain; its dead time, if any, is used
    exactly.
    """
    k0 = model.static_gain()
    if not math.isfinite(k0) or abs(k0 - 1.0) > 1e-6:
        raise FitError(f"model static gain is {k0}, expected 1")
    cost = der_objective(model, cfg)
    w_mid = math.sqrt(cfg.band_low * cfg.band_high)
    x0 = np.log([0.7, 1.0 / w_mid])

    def f(x):
        D, T = np.exp(x)
        return cost(D, T)

    res = optimize.minimize(
        f, x0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000}
    )
    if not np.all(np.isfinite(res.x)) or not math.isfinite(res.fun):
        raise FitError(f"frequency-response fit failed: {res.message}")
    D, T = np.exp(res.x)
    params = Pt2Params(1.0, float(D), float(T))
    return Pt2Fit(params, float(res.fun), "der", bool(res.success))


def pt2_model(fit: Pt2Fit) -> RationalTransfer:
    return build_pt2(fit.params)
