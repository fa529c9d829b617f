"""Circle-criterion certification of the multi-DER Q(U) feedback loop.

The loop is a Lur'e system: the linear part ``Gt(s) = diag(G_i(s)) K_Q``
in negative feedback with decoupled droop characteristics, each in the
sector ``[0, beta_i]``.  Absolute stability holds if
``Omega(s) = I + diag(beta) Gt(s)`` is strictly positive real, which is
checked with the Hamiltonian eigenvalue test below (and, independently,
with a frequency sweep).
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg, optimize

from .der import PT2_TAR, Pt2Params, build_control_loop, build_pt2, sector_bound
from .grid import GridModel
from .lti import (
    DEFAULT_PADE_ORDER,
    RationalTransfer,
    StateSpaceModel,
    TransferMatrix,
    compose_mimo,
    eigenvalues,
)
from .powerflow import SensitivityMatrix
from .pt2fit import fit_der

__all__ = [
    "REPRESENTATIONS",
    "DEFAULT_DELTA",
    "SingularFeedthroughError",
    "SearchError",
    "SectorBounds",
    "SprVerdict",
    "SlopeSearchResult",
    "build_omega",
    "spr_eigen_test",
    "spr_sweep_test",
    "der_blocks",
    "loop_model",
    "slope_betas",
    "assess_slope",
    "max_slope_search",
]

REPRESENTATIONS = ("orig", "pt2-der", "pt2-tar")
DEFAULT_DELTA = 1e-8


class SingularFeedthroughError(ValueError):
    """``D + D^T`` is not positive definite, so the Hamiltonian test is undefined.

    The singular case needs a state-space transformation that is not
    implemented here.
    """


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SectorBounds:
    beta: np.ndarray
    alpha: np.ndarray = field(default=None)

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        alpha = np.zeros_like(beta) if self.alpha is None else np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if np.any(alpha != 0):
            raise ValueError("only sectors with a zero lower bound are supported")
        if np.any(beta < 0):
            raise ValueError("sector upper bounds must be non-negative")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class SprVerdict:
    is_spr: bool
    hurwitz_ok: bool
    n_matrix_ok: bool
    min_abs_real_eig_N: float
    max_real_eig_A: float
    delta: float

    def to_json(self) -> dict:
        return {
            "is_spr": self.is_spr,
            "hurwitz_ok": self.hurwitz_ok,
            "n_matrix_ok": self.n_matrix_ok,
            "min_abs_real_eig_n": _finite_or_none(self.min_abs_real_eig_N),
            "max_real_eig_a": _finite_or_none(self.max_real_eig_A),
            "delta": self.delta,
        }


def _finite_or_none(x):
    return float(x) if math.isfinite(x) else None


@dataclass(frozen=True)
class SlopeSearchResult:
    """Outcome of the slope search.

    ``m_max`` is the largest certified slope; when ``no_limit`` is set the
    cap itself was certified and no failing slope exists below it.
    """

    m_max: float
    bracket_low: float
    bracket_high: float
    evaluations: int
    per_step_verdicts: tuple[tuple[float, bool], ...]
    no_limit: bool = False

    def to_json(self) -> dict:
        return {
            "m_max": self.m_max,
            "bracket_low": self.bracket_low,
            "bracket_high": _finite_or_none(self.bracket_high),
            "evaluations": self.evaluations,
            "no_limit": self.no_limit,
            "verdicts": [{"m": m, "spr": ok} for m, ok in self.per_step_verdicts],
        }


def build_omega(gtilde: StateSpaceModel, beta: SectorBounds) -> StateSpaceModel:
    """``Omega = I + diag(beta) Gt`` as a state-space model."""
    n = gtilde.n_inputs
    if gtilde.n_outputs != n:
        raise ValueError("Gt must be square")
    b = beta.beta
    if b.size != n:
        raise ValueError(f"{b.size} sector bounds for a {n}x{n} loop")
    Mb = np.diag(b)
    return StateSpaceModel(gtilde.A, gtilde.B, Mb @ gtilde.C, np.eye(n) + Mb @ gtilde.D)


def _spd_inverse(Q: np.ndarray) -> np.ndarray:
    try:
        c, low = linalg.cho_factor(Q, lower=True)
    except linalg.LinAlgError:
        raise SingularFeedthroughError("D + D^T is not positive definite") from None
    if np.min(np.abs(np.diag(c))) ** 2 <= 1e-12:
        raise SingularFeedthroughError("D + D^T is numerically singular")
    return linalg.cho_solve((c, low), np.eye(Q.shape[0]))


def hamiltonian(omega: StateSpaceModel) -> np.ndarray:
    """The matrix whose imaginary-axis eigenvalues mark where ``Omega + Omega^H`` is singular."""
    A, B, C, D = omega.A, omega.B, omega.C, omega.D
    Qi = _spd_inverse(D + D.T)
    return np.block(
        [
            [-A + B @ Qi @ C, B @ Qi @ B.T],
            [-C.T @ Qi @ C, A.T - C.T @ Qi @ B.T],
        ]
    )


def spr_eigen_test(omega: StateSpaceModel, delta: float = DEFAULT_DELTA) -> SprVerdict:
    """Strict positive realness via eigenvalues of A and of the Hamiltonian.

    SPR iff ``max Re eig(A) < -delta`` and every Hamiltonian eigenvalue
    keeps ``|Re| > delta``.  Values within ``delta`` of the imaginary axis
    count as failures.
    """
    N = hamiltonian(omega)
    if omega.n_states == 0:
        return SprVerdict(True, True, True, math.inf, -math.inf, delta)
    max_re_a = float(np.max(eigenvalues(omega.A).real))
    min_abs_n = float(np.min(np.abs(eigenvalues(N).real)))
    hurwitz = max_re_a < -delta
    n_ok = min_abs_n > delta
    return SprVerdict(hurwitz and n_ok, hurwitz, n_ok, min_abs_n, max_re_a, delta)


def _herm_min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(M + M.conj().T)[0])


def spr_sweep_test(
    omega: Callable[[complex], np.ndarray] | StateSpaceModel,
    grid: Sequence[float] | None = None,
    margin: float = DEFAULT_DELTA,
    a_matrix: np.ndarray | None = None,
    refine: bool = True,
) -> bool:
    """Frequency-sweep check of strict positive realness.

    True iff the smallest eigenvalue of ``Omega(jw) + Omega(jw)^H`` stays
    above ``margin`` on the grid (plus ``w = 0`` and ``w -> inf``), and the
    realization's ``A`` is Hurwitz.  With ``refine`` the grid minimum is
    polished by a bounded scalar search between its neighbours.

    Parameters
    ----------
    omega : callable or StateSpaceModel
        Evaluator ``s -> Omega(s)``; a state-space model also provides ``A``
        and the high-frequency limit ``D``.
    grid : sequence of float, optional
        Angular frequencies; default 4000 log-spaced points in [1e-3, 1e3].
    a_matrix : ndarray, optional
        State matrix to check for stability when ``omega`` is a callable.
    """
    if grid is None:
        grid = np.logspace(-3, 3, 4000)
    w = np.asarray(grid, dtype=float)
    if isinstance(omega, StateSpaceModel):
        a_matrix = omega.A if a_matrix is None else a_matrix
        high = omega.D
        evaluate = omega
    else:
        high = None
        evaluate = omega
    if a_matrix is not None and np.asarray(a_matrix).size:
        if np.max(eigenvalues(a_matrix).real) >= -margin:
            return False

    def h(wk):
        return _herm_min_eig(np.atleast_2d(evaluate(1j * wk)))

    vals = np.array([h(wk) for wk in w])
    lowest = min(vals.min(), h(0.0))
    if high is not None:
        lowest = min(lowest, _herm_min_eig(np.atleast_2d(high)))
    if refine and w.size >= 3:
        k = int(np.argmin(vals))
        lo, hi = w[max(k - 1, 0)], w[min(k + 1, w.size - 1)]
        if hi > lo:
            res = optimize.minimize_scalar(h, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10 * hi})
            lowest = min(lowest, float(res.fun))
    return bool(lowest > margin)


# DER representation and loop assembly ------------------------------------------


@lru_cache(maxsize=256)
def _fitted_pt2(kind: str, params) -> Pt2Params:
    return fit_der(build_control_loop(kind, params)).params


def der_blocks(grid: GridModel, representation: str, tar_params: Pt2Params = PT2_TAR) -> list[RationalTransfer]:
    """Per-DER loop transfer functions for a model representation.

    ``orig`` uses each DER's own control loop, ``pt2-der`` a PT2 fitted to
    that loop's frequency response, ``pt2-tar`` the grid-code PT2 for every
    DER.  Plants already modelled as ``pt2`` keep their PT2 under ``orig``
    and ``pt2-der``.
    """
    if representation not in REPRESENTATIONS:
        raise ValueError(f"unknown representation {representation!r}; choose from {REPRESENTATIONS}")
    blocks = []
    for d in grid.ders:
        if representation == "pt2-tar":
            blocks.append(build_pt2(tar_params))
        elif d.model_kind == "pt2":
            blocks.append(build_pt2(d.control_params))
        elif representation == "orig":
            blocks.append(build_control_loop(d.model_kind, d.control_params))
        else:
            blocks.append(build_pt2(_fitted_pt2(d.model_kind, d.control_params)))
    return blocks


def loop_model(
    grid: GridModel,
    kq: SensitivityMatrix,
    representation: str = "orig",
    pade_order: int = DEFAULT_PADE_ORDER,
    tar_params: Pt2Params = PT2_TAR,
) -> StateSpaceModel:
    """State-space realization of ``Gt(s) = diag(G_i(s)) @ K_Q``."""
    if tuple(kq.der_order) != tuple(grid.der_ids):
        raise ValueError("sensitivity DER order does not match the grid")
    tm = TransferMatrix(tuple(der_blocks(grid, representation, tar_params)), kq.entries)
    return compose_mimo(tm, pade_order)


def slope_betas(grid: GridModel, m: float) -> SectorBounds:
    """Sector bounds for a uniform slope ``m`` (%/p.u.) at every DER."""
    return SectorBounds(
        np.array([sector_bound(d.characteristic.with_slope(m), grid.base_power) for d in grid.ders])
    )


def assess_slope(
    grid: GridModel,
    kq: SensitivityMatrix,
    representation: str,
    m: float,
    *,
    delta: float = DEFAULT_DELTA,
    pade_order: int = DEFAULT_PADE_ORDER,
    gtilde: StateSpaceModel | None = None,
) -> SprVerdict:
    """Circle-criterion verdict for a uniform slope ``m`` in %/p.u."""
    if m < 0:
        raise ValueError("slope must be non-negative")
    if gtilde is None:
        gtilde = loop_model(grid, kq, representation, pade_order)
    return spr_eigen_test(build_omega(gtilde, slope_betas(grid, m)), delta)


def max_slope_search(
    grid: GridModel,
    kq: SensitivityMatrix,
    representation: str = "orig",
    *,
    m_start: float = 1.0,
    m_cap: float = 1000.0,
    tolerance: float = 0.1,
    delta: float = DEFAULT_DELTA,
    pade_order: int = DEFAULT_PADE_ORDER,
) -> SlopeSearchResult:
    """Largest uniform slope certified by the circle criterion.

    Doubles ``m`` from ``m_start`` until the first failure (or ``m_cap``),
    then bisects the bracket down to ``tolerance``.  This assumes the
    verdict is monotone in ``m``; every evaluated verdict is recorded so
    a violation is visible afterwards.
    """
    if not 0 < m_start <= m_cap:
        raise ValueError("need 0 < m_start <= m_cap")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    gtilde = loop_model(grid, kq, representation, pade_order)
    history: list[tuple[float, bool]] = []

    def passes(m):
        ok = assess_slope(grid, kq, representation, m, delta=delta, gtilde=gtilde).is_spr
        history.append((float(m), ok))
        return ok

    if not passes(m_start):
        raise SearchError(f"slope {m_start} %/p.u. is already not certified")
    low, high = m_start, None
    while high is None:
        if low >= m_cap:
            return SlopeSearchResult(low, low, math.inf, len(history), tuple(history), no_limit=True)
        cand = min(2.0 * low, m_cap)
        if passes(cand):
            low = cand
        else:
            high = cand
    while high - low > tolerance:
        mid = 0.5 * (low + high)
        if passes(mid):
            low = mid
        else:
            high = mid
    return SlopeSearchResult(low, low, high, len(history), tuple(history))
