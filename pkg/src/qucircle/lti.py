"""Rational transfer functions, state-space realizations and responses.

Polynomial coefficients are stored in *ascending* powers of ``s`` throughout,
i.e. ``(1.0, 2.0)`` is ``1 + 2 s``.  A transfer function may carry an exact
dead-time factor ``exp(-s * delay)``; frequency sweeps use it exactly, while
anything that needs a finite-dimensional model substitutes a Padé
approximant.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import linalg
from scipy.linalg import block_diag

__all__ = [
    "RationalTransfer",
    "StateSpaceModel",
    "TransferMatrix",
    "series",
    "feedback_unity",
    "pade_delay",
    "realize",
    "compose_mimo",
    "freq_response",
    "step_response",
    "eigenvalues",
    "DEFAULT_PADE_ORDER",
]

DEFAULT_PADE_ORDER = 3

_ZERO_TOL = 1e-14


def _trim(coeffs: Sequence[float]) -> tuple[float, ...]:
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if c.size == 0:
        return (0.0,)
    scale = np.max(np.abs(c))
    if scale == 0.0:
        return (0.0,)
    last = c.size - 1
    while last > 0 and abs(c[last]) <= _ZERO_TOL * scale:
        last -= 1
    return tuple(float(x) for x in c[: last + 1])


@dataclass(frozen=True)
class RationalTransfer:
    """SISO transfer function ``num(s) / den(s) * exp(-s * delay)``.

    Coefficients are ascending.  On construction trailing (highest order)
    zeros are trimmed and the pair is scaled so that the denominator's
    constant term is 1 whenever it is nonzero, which gives the familiar
    ``1 + 2 D T s + T^2 s^2`` form.
    """

    num: tuple[float, ...]
    den: tuple[float, ...]
    delay: float = 0.0

    def __post_init__(self):
        num = _trim(self.num)
        den = _trim(self.den)
        if den == (0.0,):
            raise ValueError("denominator must not be identically zero")
        if not np.all(np.isfinite(num)) or not np.all(np.isfinite(den)):
            raise ValueError("coefficients must be finite")
        if self.delay < 0 or not math.isfinite(self.delay):
            raise ValueError(f"delay must be finite and >= 0, got {self.delay}")
        norm = den[0] if abs(den[0]) > _ZERO_TOL * max(abs(d) for d in den) else den[-1]
        object.__setattr__(self, "num", tuple(x / norm for x in num))
        object.__setattr__(self, "den", tuple(x / norm for x in den))
        object.__setattr__(self, "delay", float(self.delay))

    @classmethod
    def constant(cls, k: float) -> RationalTransfer:
        return cls((k,), (1.0,))

    @classmethod
    def pt1(cls, time_constant: float, gain: float = 1.0) -> RationalTransfer:
        return cls((gain,), (1.0, time_constant))

    @property
    def num_degree(self) -> int:
        return 0 if self.num == (0.0,) else len(self.num) - 1

    @property
    def den_degree(self) -> int:
        return len(self.den) - 1

    @property
    def is_proper(self) -> bool:
        return self.num_degree <= self.den_degree

    @property
    def is_strictly_proper(self) -> bool:
        return self.num == (0.0,) or self.num_degree < self.den_degree

    @property
    def rational(self) -> RationalTransfer:
        """The same transfer function without its dead time."""
        return RationalTransfer(self.num, self.den)

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        val = P.polyval(s, self.num) / P.polyval(s, self.den)
        if self.delay:
            val = val * np.exp(-s * self.delay)
        return val

    def static_gain(self) -> float:
        """Value at ``s = 0``; infinite for a pure integrator."""
        if self.den[0] == 0.0:
            return math.inf if self.num[0] != 0.0 else math.nan
        return self.num[0] / self.den[0]

    def poles(self) -> np.ndarray:
        return P.polyroots(self.den) if self.den_degree > 0 else np.array([], dtype=complex)

    def zeros(self) -> np.ndarray:
        return P.polyroots(self.num) if self.num_degree > 0 else np.array([], dtype=complex)

    def with_pade(self, order: int = DEFAULT_PADE_ORDER) -> RationalTransfer:
        """Replace the exact dead time by its Padé approximant."""
        if not self.delay:
            return self
        return series(self.rational, pade_delay(self.delay, order))

    def __mul__(self, other):
        if isinstance(other, RationalTransfer):
            return series(self, other)
        if np.isscalar(other):
            return RationalTransfer(tuple(np.asarray(self.num) * other), self.den, self.delay)
        return NotImplemented

    __rmul__ = __mul__


def series(a: RationalTransfer, b: RationalTransfer) -> RationalTransfer:
    """Series connection (product) of two transfer functions."""
    return RationalTransfer(
        tuple(P.polymul(a.num, b.num)), tuple(P.polymul(a.den, b.den)), a.delay + b.delay
    )


def feedback_unity(loop: RationalTransfer) -> RationalTransfer:
    """Closed loop ``L / (1 + L)`` under negative unity feedback.

    A dead time inside the loop has no rational closed form; substitute a
    Padé approximant (``loop.with_pade()``) first.
    """
    if loop.delay:
        raise ValueError("loop contains an exact dead time; call with_pade() first")
    if not loop.is_proper:
        raise ValueError("improper loop transfer function")
    den = P.polyadd(loop.den, loop.num)
    closed = RationalTransfer(loop.num, tuple(den))
    if not closed.is_proper:
        raise ValueError("closed loop is improper (1 + L has a degree drop)")
    return closed


def pade_delay(t_g: float, order: int = DEFAULT_PADE_ORDER) -> RationalTransfer:
    """Diagonal Padé approximant of ``exp(-s t_g)``.

    Parameters
    ----------
    t_g : float
        Dead time in seconds, ``t_g >= 0``.
    order : int
        Numerator and denominator degree, 1 to 5.
    """
    if not 1 <= int(order) <= 5 or int(order) != order:
        raise ValueError(f"unsupported Padé order {order}; use 1..5")
    if t_g < 0:
        raise ValueError("dead time must be non-negative")
    if t_g == 0:
        return RationalTransfer.constant(1.0)
    n = int(order)
    c = [
        math.factorial(2 * n - k) * math.factorial(n)
        / (math.factorial(2 * n) * math.factorial(k) * math.factorial(n - k))
        * t_g**k
        for k in range(n + 1)
    ]
    num = tuple(ck * (-1) ** k for k, ck in enumerate(c))
    return RationalTransfer(num, tuple(c))


def _as_matrix(x, rows=None, cols=None) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        if rows is not None and cols is None:
            a = a.reshape(rows, -1) if a.size else np.zeros((rows, 0))
        elif cols is not None:
            a = a.reshape(-1, cols) if a.size else np.zeros((0, cols))
        else:
            a = a.reshape(1, -1)
    return a


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Continuous-time model ``x' = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        D = _as_matrix(self.D)
        p, m = D.shape
        A = np.asarray(self.A, dtype=float)
        n = 0 if A.size == 0 else A.shape[0]
        A = A.reshape(n, n)
        B = np.asarray(self.B, dtype=float).reshape(n, m)
        C = np.asarray(self.C, dtype=float).reshape(p, n)
        for name, mat in (("A", A), ("B", B), ("C", C), ("D", D)):
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} has non-finite entries")
            mat.setflags(write=False)
            object.__setattr__(self, name, mat)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]

    def __call__(self, s) -> np.ndarray:
        """Evaluate ``C (sI - A)^-1 B + D`` at one complex point."""
        if self.n_states == 0:
            return self.D.astype(complex)
        M = s * np.eye(self.n_states) - self.A
        return self.C @ np.linalg.solve(M, self.B.astype(complex)) + self.D

    def poles(self) -> np.ndarray:
        return eigenvalues(self.A)


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """``diag(G_1, ..., G_n) @ right_factor``, the DER loop times K_Q."""

    diagonal_blocks: tuple[RationalTransfer, ...]
    right_factor: np.ndarray = field(default=None)

    def __post_init__(self):
        blocks = tuple(self.diagonal_blocks)
        n = len(blocks)
        rf = np.eye(n) if self.right_factor is None else _as_matrix(self.right_factor)
        if rf.shape != (n, n):
            raise ValueError(f"right factor shape {rf.shape} does not match {n} blocks")
        rf.setflags(write=False)
        object.__setattr__(self, "diagonal_blocks", blocks)
        object.__setattr__(self, "right_factor", rf)

    def __call__(self, s) -> np.ndarray:
        g = np.array([blk(s) for blk in self.diagonal_blocks], dtype=complex)
        return g[:, None] * self.right_factor


def realize(tf: RationalTransfer, pade_order: int = DEFAULT_PADE_ORDER) -> StateSpaceModel:
    """Controllable canonical realization of a proper transfer function.

    A dead time is replaced by its Padé approximant of ``pade_order``.
    """
    tf = tf.with_pade(pade_order)
    if not tf.is_proper:
        raise ValueError("cannot realize an improper transfer function")
    den = np.asarray(tf.den) / tf.den[-1]
    num = np.zeros(len(den))
    num[: len(tf.num)] = np.asarray(tf.num) / tf.den[-1]
    n = len(den) - 1
    d = num[n]
    if n == 0:
        return StateSpaceModel(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[d]])
    rem = num[:n] - d * den[:n]
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[:n]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    return StateSpaceModel(A, B, rem.reshape(1, n), [[d]])


def compose_mimo(tm: TransferMatrix, pade_order: int = DEFAULT_PADE_ORDER) -> StateSpaceModel:
    """Realize ``diag(G_i) @ K`` as one state-space model."""
    parts = [realize(blk, pade_order) for blk in tm.diagonal_blocks]
    if not parts:
        raise ValueError("transfer matrix has no blocks")
    A = block_diag(*[p.A for p in parts]) if any(p.n_states for p in parts) else np.zeros((0, 0))
    n = A.shape[0]
    B_blk = np.zeros((n, len(parts)))
    C_blk = np.zeros((len(parts), n))
    offset = 0
    for i, p in enumerate(parts):
        k = p.n_states
        B_blk[offset : offset + k, i] = p.B[:, 0]
        C_blk[i, offset : offset + k] = p.C[0, :]
        offset += k
    d = np.array([p.D[0, 0] for p in parts])
    K = tm.right_factor
    return StateSpaceModel(A, B_blk @ K, C_blk, np.diag(d) @ K)


def freq_response(sys, frequencies) -> np.ndarray:
    """Complex response at ``s = j w`` for each angular frequency ``w``.

    Returns shape ``(len(w),)`` for a :class:`RationalTransfer` and
    ``(len(w), p, m)`` for state-space models and transfer matrices.  Exact
    dead times are honoured for rational models and transfer matrices.
    """
    w = np.atleast_1d(np.asarray(frequencies, dtype=float))
    if isinstance(sys, RationalTransfer):
        return sys(1j * w)
    if isinstance(sys, TransferMatrix):
        return np.stack([sys(1j * wk) for wk in w])
    if isinstance(sys, StateSpaceModel):
        if sys.n_states == 0:
            return np.broadcast_to(sys.D.astype(complex), (w.size, *sys.D.shape)).copy()
        # diagonalize once when A is well conditioned, else solve per frequency
        lam, V = np.linalg.eig(sys.A)
        if np.linalg.cond(V) < 1e8:
            CV = sys.C @ V
            ViB = np.linalg.solve(V, sys.B.astype(complex))
            out = np.einsum("pi,wi,im->wpm", CV, 1.0 / (1j * w[:, None] - lam[None, :]), ViB)
            return out + sys.D
        return np.stack([sys(1j * wk) for wk in w])
    raise TypeError(f"unsupported system type {type(sys).__name__}")


def _step_map(A, B, h):
    """Exact one-step map for a constant input: x+ = M x + N u."""
    n, m = B.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n], aug[:n, n:] = A, B
    E = linalg.expm(h * aug)
    return E[:n, :n], E[:n, n:]


def _fastest_time_constant(A: np.ndarray) -> float:
    lam = np.abs(eigenvalues(A))
    lam = lam[lam > 0]
    return 1.0 / lam.max() if lam.size else math.inf


def step_response(sys, horizon: float, dt: float | None = None):
    """Unit step response, exact at the sample points for any step size.

    Parameters
    ----------
    sys : RationalTransfer or StateSpaceModel
    horizon : float
        End time in seconds.
    dt : float, optional
        Step size; defaults to a tenth of the fastest time constant, at
        most a hundredth of the horizon.

    Returns
    -------
    t, y : ndarray
        ``y`` has shape ``(len(t),)`` for a transfer function and
        ``(len(t), p, m)`` for a state-space model (one column per input).
        A dead time on a transfer function is applied as an exact shift.
    """
    delay = 0.0
    siso = isinstance(sys, RationalTransfer)
    if siso:
        delay = sys.delay
        ss = realize(sys.rational)
    elif isinstance(sys, StateSpaceModel):
        ss = sys
    else:
        raise TypeError(f"unsupported system type {type(sys).__name__}")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if ss.n_states and np.max(eigenvalues(ss.A).real) >= 0:
        warnings.warn("system is not asymptotically stable", RuntimeWarning, stacklevel=2)
    if dt is None:
        tau = _fastest_time_constant(ss.A) if ss.n_states else math.inf
        dt = min(tau / 10, horizon / 100) if math.isfinite(tau) else horizon / 1000
    if dt <= 0:
        raise ValueError("dt must be positive")
    nt = int(math.ceil(horizon / dt - 1e-9)) + 1
    t = np.arange(nt) * dt
    y = np.empty((nt, ss.n_outputs, ss.n_inputs))
    if ss.n_states == 0:
        y[:] = ss.D
    else:
        M, N = _step_map(ss.A, ss.B, dt)
        x = np.zeros((ss.n_states, ss.n_inputs))
        for k in range(nt):
            y[k] = ss.C @ x + ss.D
            x = M @ x + N
    if siso:
        y = y[:, 0, 0]
        if delay:
            y = np.interp(t - delay, t, y, left=0.0)
    return t, y


def eigenvalues(M) -> np.ndarray:
    """Full spectrum of a real square matrix (LAPACK ``geev``)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.size == 0:
        return np.array([], dtype=complex)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return np.linalg.eigvals(M).astype(complex)
