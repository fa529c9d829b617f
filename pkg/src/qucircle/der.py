"""DER reactive-power control models and the Q(U) droop characteristic."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .lti import RationalTransfer, feedback_unity, series

__all__ = [
    "MODEL_KINDS",
    "QuCharacteristic",
    "DerControlParams",
    "Pt2Params",
    "ControlChain",
    "PT2_TAR",
    "PT2_DER",
    "default_params",
    "qu_evaluate",
    "sector_bound",
    "build_control_loop",
    "build_chain",
    "build_pt2",
    "pt2_step",
]

MODEL_KINDS = ("wf-frc", "wf-dfig", "pvf", "pt2")


@dataclass(frozen=True)
class QuCharacteristic:
    """Piecewise-linear Q(U) droop with symmetric deadband and saturation.

    ``slope`` is in %/p.u.: a voltage deviation of 1 p.u. asks for
    ``slope`` percent of ``rated_power`` as reactive power.
    """

    u_ref: float = 1.0
    slope: float = 10.0
    deadband: float = 0.0
    q_limit_share: float = 0.33
    rated_power: float = 1.0

    def __post_init__(self):
        if self.slope < 0:
            raise ValueError("slope must be >= 0")
        if self.deadband < 0:
            raise ValueError("deadband must be >= 0")
        if not 0 < self.q_limit_share <= 1:
            raise ValueError("q_limit_share must lie in (0, 1]")
        if self.rated_power <= 0:
            raise ValueError("rated_power must be positive")

    def with_slope(self, slope: float) -> QuCharacteristic:
        return QuCharacteristic(self.u_ref, slope, self.deadband, self.q_limit_share, self.rated_power)


def sector_bound(ch: QuCharacteristic, base_power: float = 100.0) -> float:
    """Upper sector slope beta in p.u./p.u. on the system base.

    A deadband shifts the characteristic but never steepens any secant,
    so the bound is the same with or without it.
    """
    return ch.slope / 100.0 * ch.rated_power / base_power


def qu_evaluate(ch: QuCharacteristic, u, base_power: float = 100.0):
    """Characteristic output ``psi(u - u_ref)`` in p.u. on ``base_power``.

    The output is positive for voltages above ``u_ref``.  It is the
    *voltage-reducing* demand: the control loop injects ``-psi``.
    """
    e = np.asarray(u, dtype=float) - ch.u_ref
    active = np.sign(e) * np.maximum(np.abs(e) - ch.deadband, 0.0)
    q_max = ch.q_limit_share * ch.rated_power / base_power
    out = np.clip(sector_bound(ch, base_power) * active, -q_max, q_max)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DerControlParams:
    """Time constants (s) and gains of one DER's reactive-power loop."""

    t_u: float = 0.02
    va_order: int = 1
    t_dq: float = 2.0
    k_q: float = 0.5
    t_q: float = 0.2
    t_l: float = 0.1
    t_g: float = 0.2

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")
        if self.k_q <= 0 or self.t_q <= 0:
            raise ValueError("PI gain k_q and integral time t_q must be positive")
        if int(self.va_order) != self.va_order or self.va_order < 0:
            raise ValueError("va_order must be a non-negative integer")

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Pt2Params:
    """``gain / (1 + 2 D T s + T^2 s^2)``."""

    gain: float = 1.0
    damping: float = 0.7
    time_constant: float = 1.0

    def __post_init__(self):
        if not (self.gain > 0 and self.damping > 0 and self.time_constant > 0):
            raise ValueError("PT2 gain, damping and time constant must be positive")

    def to_json(self) -> dict:
        return {"kappa": self.gain, "damping": self.damping, "t": self.time_constant}


PT2_TAR = Pt2Params(1.0, 0.517, 2.335)
PT2_DER = Pt2Params(1.0, 0.747, 1.028)

# wf-dfig has no published parameter set; it borrows the wf-frc numbers
_DEFAULTS = {
    "wf-frc": DerControlParams(),
    "wf-dfig": DerControlParams(),
    "pvf": DerControlParams(t_u=0.004, va_order=3, t_dq=2.0, k_q=0.5, t_q=0.2, t_l=0.0033, t_g=0.1),
    "pt2": PT2_DER,
}


def default_params(kind: str):
    try:
        return _DEFAULTS[kind]
    except KeyError:
        raise ValueError(f"unknown DER model kind {kind!r}") from None


def build_pt2(p: Pt2Params) -> RationalTransfer:
    T = p.time_constant
    return RationalTransfer((p.gain,), (1.0, 2 * p.damping * T, T * T))


@dataclass(frozen=True)
class ControlChain:
    """A DER loop split around the characteristic.

    The measured voltage passes ``pre`` (voltage averaging), then the
    characteristic, then ``post`` and finally the dead time ``delay``.
    ``loop`` is the lumped linear transfer ``pre * post * exp(-s delay)``.
    """

    pre: RationalTransfer
    post: RationalTransfer
    delay: float

    @property
    def loop(self) -> RationalTransfer:
        g = series(self.pre, self.post)
        return RationalTransfer(g.num, g.den, self.delay)


def build_chain(kind: str, p) -> ControlChain:
    """Control chain for a DER model kind.

    Converter kinds: ``VA(s) -> psi -> PT1(t_dq) -> CL(s) -> dead time``
    with ``VA = 1/(1 + s t_u)^va_order`` and ``CL`` the unity-feedback loop
    of ``PI(s) = k_q (1 + 1/(s t_q))`` around the current-control lag
    ``1/(1 + s t_l)``.  The dead time models the farm-to-unit
    communication and sits outside the unit loop.
    """
    if kind == "pt2":
        if not isinstance(p, Pt2Params):
            raise TypeError("pt2 models take Pt2Params")
        return ControlChain(RationalTransfer.constant(1.0), build_pt2(p), 0.0)
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown DER model kind {kind!r}")
    if not isinstance(p, DerControlParams):
        raise TypeError(f"{kind} models take DerControlParams")
    va = RationalTransfer((1.0,), tuple(np.polynomial.polynomial.polypow([1.0, p.t_u], int(p.va_order))))
    pi = RationalTransfer((p.k_q, p.k_q * p.t_q), (0.0, p.t_q))
    inner = feedback_unity(series(pi, RationalTransfer.pt1(p.t_l)))
    post = series(RationalTransfer.pt1(p.t_dq), inner)
    return ControlChain(va, post, p.t_g)


def build_control_loop(kind: str, p) -> RationalTransfer:
    """Lumped loop ``G_i(s)`` with the dead time kept as an exact factor."""
    return build_chain(kind, p).loop


def pt2_step(p: Pt2Params, t) -> np.ndarray:
    """Closed-form unit step response of a PT2 element."""
    t = np.asarray(t, dtype=float)
    D = p.damping
    tau = t / p.time_constant
    if D < 1.0:
        wd = math.sqrt(1.0 - D * D)
        y = 1.0 - np.exp(-D * tau) * (np.cos(wd * tau) + D / wd * np.sin(wd * tau))
    elif D == 1.0:
        y = 1.0 - np.exp(-tau) * (1.0 + tau)
    else:
        r = math.sqrt(D * D - 1.0)
        s1, s2 = -D + r, -D - r
        y = 1.0 + (s2 * np.exp(s1 * tau) - s1 * np.exp(s2 * tau)) / (s1 - s2)
    return p.gain * np.where(t >= 0, y, 0.0)
