"""Quasi-static time simulation of Q(U)-controlled DERs.

The network is algebraic (solved or linearized every step); only the DER
controllers carry state.  Each DER runs

    voltage -> averaging -> characteristic -> lag + PI loop -> dead time -> Q

with the linear blocks discretized exactly (zero-order hold) and the dead
time realized as a whole number of samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .circle import REPRESENTATIONS, _fitted_pt2
from .der import PT2_TAR, ControlChain, QuCharacteristic, build_chain, build_pt2, sector_bound
from .grid import GridModel
from .lti import RationalTransfer, realize
from .powerflow import PowerFlowError, build_admittance, sensitivity, solve

__all__ = [
    "Ramp",
    "SimScenario",
    "SimTrace",
    "StabilityClassification",
    "ThresholdResult",
    "simulate",
    "classify",
    "find_sim_threshold",
    "write_trace_csv",
    "chains_for",
]

COUPLINGS = ("linearized", "full_power_flow")
VERDICTS = ("asymptotically_stable", "not_decayed", "diverged")


@dataclass(frozen=True)
class Ramp:
    """DER active-power ramp as shares of installed power."""

    ramp_start: float = 1.0
    ramp_duration: float = 5.0
    p_initial_share: float = 0.1
    p_final_share: float = 1.0

    @property
    def ramp_end(self) -> float:
        return self.ramp_start + self.ramp_duration

    def share(self, t):
        if self.ramp_duration <= 0:
            return np.where(np.asarray(t) >= self.ramp_start, self.p_final_share, self.p_initial_share)
        x = np.clip((np.asarray(t) - self.ramp_start) / self.ramp_duration, 0.0, 1.0)
        return self.p_initial_share + x * (self.p_final_share - self.p_initial_share)


@dataclass(frozen=True)
class SimScenario:
    grid: GridModel
    slope: float
    disturbance: Ramp = Ramp()
    horizon: float | None = None
    dt: float = 1e-3
    grid_coupling: str = "linearized"
    representation: str = "orig"
    saturation: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.slope < 0:
            raise ValueError("slope must be non-negative")
        r = self.disturbance
        if not 0 <= r.p_initial_share <= r.p_final_share <= 1:
            raise ValueError("need 0 <= p_initial_share <= p_final_share <= 1")
        if r.ramp_start < 0 or r.ramp_duration < 0:
            raise ValueError("ramp start and duration must be non-negative")
        if self.horizon is None:
            object.__setattr__(self, "horizon", r.ramp_end + 10.0 + 1.0)
        if not self.horizon > r.ramp_end + 10.0:
            raise ValueError("horizon must extend more than 10 s past the end of the ramp")
        if self.grid_coupling not in COUPLINGS:
            raise ValueError(f"grid_coupling must be one of {COUPLINGS}")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"representation must be one of {REPRESENTATIONS}")


@dataclass(frozen=True, eq=False)
class SimTrace:
    times: np.ndarray
    voltages: np.ndarray
    reactive_powers: np.ndarray
    der_ids: tuple[str, ...]
    der_states: dict = field(default_factory=dict)
    truncated: bool = False
    message: str = ""


@dataclass(frozen=True)
class StabilityClassification:
    verdict: str
    decay_ratio: float
    window: tuple[float, float]

    def to_json(self) -> dict:
        ratio = self.decay_ratio if math.isfinite(self.decay_ratio) else None
        return {"verdict": self.verdict, "decay_ratio": ratio, "window": list(self.window)}


@dataclass(frozen=True)
class ThresholdResult:
    slope: float
    no_limit: bool
    evaluations: int
    history: tuple[tuple[float, str], ...]

    def to_json(self) -> dict:
        return {
            "slope": self.slope,
            "no_limit": self.no_limit,
            "evaluations": self.evaluations,
            "history": [{"m": m, "verdict": v} for m, v in self.history],
        }


def chains_for(grid: GridModel, representation: str = "orig") -> list[ControlChain]:
    """Simulation chains per DER for a model representation."""
    out = []
    one = RationalTransfer.constant(1.0)
    for d in grid.ders:
        if representation == "pt2-tar":
            out.append(ControlChain(one, build_pt2(PT2_TAR), 0.0))
        elif d.model_kind == "pt2" or representation == "orig":
            out.append(build_chain(d.model_kind, d.control_params))
        else:
            out.append(ControlChain(one, build_pt2(_fitted_pt2(d.model_kind, d.control_params)), 0.0))
    return out


class _DiscreteBank:
    """Block-diagonal ZOH discretization of one SISO block per DER."""

    def __init__(self, blocks: list[RationalTransfer], dt: float):
        parts = [realize(b) for b in blocks]
        sizes = [p.n_states for p in parts]
        n = sum(sizes)
        nd = len(parts)
        self.Ad = np.zeros((n, n))
        self.Bd = np.zeros((n, nd))
        self.C = np.zeros((nd, n))
        self.D = np.array([p.D[0, 0] for p in parts])
        self.A = np.zeros((n, n))
        self.B = np.zeros((n, nd))
        off = 0
        for i, (p, k) in enumerate(zip(parts, sizes)):
            if k:
                M = np.zeros((k + 1, k + 1))
                M[:k, :k] = p.A * dt
                M[:k, k] = p.B[:, 0] * dt
                E = linalg.expm(M)
                sl = slice(off, off + k)
                self.Ad[sl, sl] = E[:k, :k]
                self.Bd[sl, i] = E[:k, k]
                self.C[i, sl] = p.C[0]
                self.A[sl, sl] = p.A
                self.B[sl, i] = p.B[:, 0]
            off += k
        self.n = n

    def steady_state(self, u: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0)
        return np.linalg.solve(self.A, -self.B @ u)

    def output(self, x, u):
        return self.C @ x + self.D * u

    def step(self, x, u):
        return self.Ad @ x + self.Bd @ u


def _characteristic(chars: list[QuCharacteristic], base_power: float, saturation: bool):
    """Vectorized ``psi`` over all DERs; same curve as ``qu_evaluate``."""
    u_ref = np.array([c.u_ref for c in chars])
    band = np.array([c.deadband for c in chars])
    beta = np.array([sector_bound(c, base_power) for c in chars])
    q_max = np.array([c.q_limit_share * c.rated_power / base_power for c in chars])
    if not saturation:
        q_max = np.full(len(chars), np.inf)

    def psi(u):
        e = u - u_ref
        return np.clip(beta * np.sign(e) * np.maximum(np.abs(e) - band, 0.0), -q_max, q_max)

    return psi


def simulate(scenario: SimScenario) -> SimTrace:
    """Run the scenario and return voltages and reactive injections per DER."""
    grid = scenario.grid
    dt = scenario.dt
    nd = len(grid.ders)
    sb = grid.base_power
    chains = chains_for(grid, scenario.representation)
    chars = [d.characteristic.with_slope(scenario.slope) for d in grid.ders]
    psi = _characteristic(chars, sb, scenario.saturation)
    ramp = scenario.disturbance
    nt = int(math.floor(scenario.horizon / dt + 1e-9)) + 1
    times = np.arange(nt) * dt
    p_inst = np.array([d.installed_power / sb for d in grid.ders])
    p_t = ramp.share(times)[:, None] * p_inst[None, :]

    delays = np.array([c.delay for c in chains])
    if np.any((delays > 0) & (delays < dt)):
        raise ValueError("dt exceeds a dead time; the delay buffer would be empty")
    lags = np.rint(delays / dt).astype(int)
    # the holds on the pre and post inputs each lag by half a sample
    lags = np.where(lags > 0, lags - 1, 0)
    pre = _DiscreteBank([c.pre for c in chains], dt)
    post = _DiscreteBank([c.post for c in chains], dt)

    Y = build_admittance(grid)
    pf0 = solve(grid, der_p=p_t[0], der_q=np.zeros(nd), Y=Y)
    idx = np.array([grid.node_index(d.node) for d in grid.ders], dtype=int)
    u_pf0 = pf0.vm[idx]
    pf_state = {"last": pf0}

    if scenario.grid_coupling == "linearized":
        kq = sensitivity(grid, pf0, "q").entries
        kp = sensitivity(grid, pf0, "p").entries

        def voltages(p, q):
            return u_pf0 + kp @ (p - p_t[0]) + kq @ q
    else:

        def voltages(p, q):
            sol = solve(grid, der_p=p, der_q=q, start=pf_state["last"], Y=Y)
            pf_state["last"] = sol
            return sol.vm[idx]

    def residual(q):
        return q + psi(voltages(p_t[0], q))

    # start in the static equilibrium of the initial operating point
    q0 = np.zeros(nd)
    if nd:
        try:
            sol = optimize.root(residual, q0, method="hybr")
            if sol.success:
                q0 = sol.x
        except PowerFlowError:
            pass
    u0 = voltages(p_t[0], q0)
    x_pre = pre.steady_state(u0)
    r0 = -psi(pre.output(x_pre, u0))
    x_post = post.steady_state(r0)
    y_hist = np.empty((nt, nd))
    y_init = post.output(x_post, r0)

    volts = np.full((nt, nd), np.nan)
    qs = np.full((nt, nd), np.nan)
    snapshots = {}
    snap_every = max(int(round(1.0 / dt)), 1)
    r_prev = r0
    cols = np.arange(nd)
    truncated, message = False, ""
    for k in range(nt):
        y_hist[k] = post.C @ x_post + post.D * r_prev
        src = k - lags
        q = np.where(src >= 0, y_hist[np.maximum(src, 0), cols], y_init)
        try:
            u = voltages(p_t[k], q)
        except PowerFlowError as exc:
            truncated, message = True, f"power flow failed at t={times[k]:.3f} s: {exc}"
            break
        volts[k] = u
        qs[k] = q
        v_meas = pre.output(x_pre, u)
        r = -psi(v_meas)
        if k % snap_every == 0:
            snapshots[round(float(times[k]), 9)] = np.concatenate([x_pre, x_post])
        x_pre = pre.step(x_pre, u)
        x_post = post.step(x_post, r)
        r_prev = r
    if truncated:
        times, volts, qs = times[:k], volts[:k], qs[:k]
    return SimTrace(times, volts, qs, tuple(grid.der_ids), snapshots, truncated, message)


def classify(
    trace: SimTrace,
    ramp_end: float,
    *,
    window: float = 5.0,
    decay_threshold: float = 0.5,
    divergence_guard: float = 0.3,
) -> StabilityClassification:
    """Decay classification after the disturbance.

    The decay ratio is the peak-to-peak voltage deviation over
    ``[ramp_end + window, ramp_end + 2 window]`` divided by that over
    ``[ramp_end, ramp_end + window]`` (largest over DERs).  Below
    ``decay_threshold`` counts as asymptotically stable.  Any deviation
    from the initial voltage beyond ``divergence_guard`` p.u., or a
    truncated trace, is ``diverged``.
    """
    t = trace.times
    w0, w1, w2 = ramp_end, ramp_end + window, ramp_end + 2 * window
    win = (float(w0), float(w2))
    if trace.truncated:
        return StabilityClassification("diverged", math.inf, win)
    if t.size == 0 or t[-1] < w2 - 1e-9:
        raise ValueError("classification window exceeds the trace")
    v = trace.voltages
    if v.shape[1] == 0:
        return StabilityClassification("asymptotically_stable", 0.0, win)
    if not np.all(np.isfinite(v)) or np.max(np.abs(v - v[0])) > divergence_guard:
        return StabilityClassification("diverged", math.inf, win)
    first = (t >= w0 - 1e-9) & (t <= w1 + 1e-9)
    second = (t >= w1 - 1e-9) & (t <= w2 + 1e-9)
    p2p1 = np.max(np.ptp(v[first], axis=0))
    p2p2 = np.max(np.ptp(v[second], axis=0))
    if p2p1 <= 1e-12:
        ratio = 0.0 if p2p2 <= 1e-12 else math.inf
    else:
        ratio = float(p2p2 / p2p1)
    verdict = "asymptotically_stable" if ratio < decay_threshold else "not_decayed"
    return StabilityClassification(verdict, ratio, win)


def find_sim_threshold(
    grid: GridModel,
    representation: str = "orig",
    *,
    m_start: float = 1.0,
    m_cap: float = 5000.0,
    tolerance: float = 0.5,
    rel_tolerance: float = 0.005,
    ramp: Ramp = Ramp(),
    dt: float = 1e-3,
    grid_coupling: str = "linearized",
    decay_threshold: float = 0.5,
) -> ThresholdResult:
    """Largest slope the simulation classifies as asymptotically stable.

    Doubling from ``m_start`` then bisection until the bracket is narrower
    than ``tolerance`` or ``rel_tolerance`` times its lower end.
    """
    history: list[tuple[float, str]] = []

    def stable(m):
        sc = SimScenario(grid, m, ramp, dt=dt, grid_coupling=grid_coupling, representation=representation)
        c = classify(simulate(sc), ramp.ramp_end, decay_threshold=decay_threshold)
        history.append((float(m), c.verdict))
        return c.verdict == "asymptotically_stable"

    if not stable(m_start):
        raise RuntimeError(f"simulation already not stable at slope {m_start}")
    low, high = m_start, None
    while high is None:
        if low >= m_cap:
            return ThresholdResult(low, True, len(history), tuple(history))
        cand = min(2 * low, m_cap)
        if stable(cand):
            low = cand
        else:
            high = cand
    while high - low > max(tolerance, rel_tolerance * low):
        mid = 0.5 * (low + high)
        if stable(mid):
            low = mid
        else:
            high = mid
    return ThresholdResult(low, False, len(history), tuple(history))


def write_trace_csv(trace: SimTrace, path_or_file) -> None:
    """Write ``time_s, u_<id>_pu..., q_<id>_pu...`` rows."""
    header = ["time_s"] + [f"u_{i}_pu" for i in trace.der_ids] + [f"q_{i}_pu" for i in trace.der_ids]

    def _write(fh):
        w = csv.writer(fh)
        w.writerow(header)
        for t, u, q in zip(trace.times, trace.voltages, trace.reactive_powers):
            w.writerow([f"{t:.6f}", *(f"{x:.10g}" for x in u), *(f"{x:.10g}" for x in q)])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)
