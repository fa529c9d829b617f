"""Polar Newton-Raphson AC power flow and voltage sensitivities.

All quantities are per unit on the grid's base power and each node's
nominal voltage.  Every node except the slack is a PQ node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridModel

__all__ = [
    "PowerFlowError",
    "PowerFlowSolution",
    "SensitivityMatrix",
    "build_admittance",
    "nodal_injections",
    "solve",
    "sensitivity",
]


class PowerFlowError(RuntimeError):
    """Non-convergence or a singular Jacobian."""


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    node_ids: tuple[str, ...]
    vm: np.ndarray
    va: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iterations: int
    max_mismatch: float

    @property
    def voltage(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "max_mismatch_pu": self.max_mismatch,
            "nodes": [
                {"id": n, "u_pu": float(u), "angle_rad": float(a), "p_pu": float(p), "q_pu": float(q)}
                for n, u, a, p, q in zip(self.node_ids, self.vm, self.va, self.p, self.q)
            ],
        }


@dataclass(frozen=True, eq=False)
class SensitivityMatrix:
    """``entries[i, j]``: p.u. voltage change at DER i per p.u. injection at DER j."""

    entries: np.ndarray
    der_order: tuple[str, ...]

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.entries, dtype=float))
        n = len(self.der_order)
        if e.shape != (n, n):
            raise ValueError(f"sensitivity shape {e.shape} does not match {n} DERs")
        if not np.all(np.isfinite(e)):
            raise ValueError("sensitivity has non-finite entries")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "der_order", tuple(self.der_order))

    def scaled(self, factor: float) -> SensitivityMatrix:
        return SensitivityMatrix(self.entries * factor, self.der_order)

    def to_json(self) -> dict:
        return {"der_order": list(self.der_order), "entries": self.entries.tolist()}


def build_admittance(grid: GridModel) -> np.ndarray:
    """Dense nodal admittance matrix in p.u., rows in ``grid.nodes`` order.

    Lines are pi-equivalents with half the charging susceptance at each
    end; impedances are converted with the from-node's nominal voltage.
    Transformers carry the off-nominal tap ratio on the HV side.
    """
    n = len(grid.nodes)
    Y = np.zeros((n, n), dtype=complex)
    sb = grid.base_power
    for b in grid.branches:
        i, k = grid.node_index(b.from_node), grid.node_index(b.to_node)
        z_base = grid.nodes[i].vn ** 2 / sb
        z = complex(b.resistance, b.reactance) / z_base
        if z == 0:
            raise ValueError(f"branch {b.id}: zero impedance")
        y = 1.0 / z
        ysh = 0.5j * b.shunt_susceptance * 1e-6 * z_base
        Y[i, i] += y + ysh
        Y[k, k] += y + ysh
        Y[i, k] -= y
        Y[k, i] -= y
    for t in grid.transformers:
        i, k = grid.node_index(t.hv_node), grid.node_index(t.lv_node)
        zk = t.short_circuit_voltage / 100.0 * sb / t.rated_power
        r = t.ohmic_part / 100.0 * sb / t.rated_power
        y = 1.0 / complex(r, np.sqrt(max(zk * zk - r * r, 0.0)))
        a = t.ratio
        Y[i, i] += y / a**2
        Y[k, k] += y
        Y[i, k] -= y / a
        Y[k, i] -= y / a
    return Y


def nodal_injections(grid: GridModel, der_p=None, der_q=None) -> np.ndarray:
    """Specified complex injections per node (p.u.), generation positive.

    ``der_p`` and ``der_q`` override the DER outputs (p.u., DER order);
    by default each DER feeds its operating power at zero reactive power.
    """
    sb = grid.base_power
    s = np.zeros(len(grid.nodes), dtype=complex)
    for ld in grid.loads:
        s[grid.node_index(ld.node)] -= complex(ld.active_power, ld.reactive_power) / sb
    p = [d.operating_power / sb for d in grid.ders] if der_p is None else der_p
    q = np.zeros(len(grid.ders)) if der_q is None else der_q
    for d, pk, qk in zip(grid.ders, p, q):
        s[grid.node_index(d.node)] += complex(pk, qk)
    return s


def _jacobian(Y, V, pv_idx):
    """Full Jacobian of [P; Q] w.r.t. [angle; magnitude] restricted to pv_idx."""
    I = Y @ V
    Vn = V / np.abs(V)
    dS_dva = 1j * np.diag(V) @ np.conj(np.diag(I) - Y @ np.diag(V))
    dS_dvm = np.diag(V) @ np.conj(Y @ np.diag(Vn)) + np.diag(np.conj(I) * Vn)
    sub = np.ix_(pv_idx, pv_idx)
    return np.block(
        [
            [dS_dva.real[sub], dS_dvm.real[sub]],
            [dS_dva.imag[sub], dS_dvm.imag[sub]],
        ]
    )


def solve(
    grid: GridModel,
    tolerance: float = 1e-8,
    max_iterations: int = 50,
    *,
    der_p=None,
    der_q=None,
    start: PowerFlowSolution | None = None,
    Y: np.ndarray | None = None,
) -> PowerFlowSolution:
    """Solve the AC power flow.

    Parameters
    ----------
    grid : GridModel
    tolerance : float
        Largest admissible nodal P/Q mismatch in p.u.
    max_iterations : int
    der_p, der_q : array_like, optional
        DER active/reactive injections in p.u. (DER order).
    start : PowerFlowSolution, optional
        Warm start; flat start otherwise.
    """
    if Y is None:
        Y = build_admittance(grid)
    n = len(grid.nodes)
    slack = grid.node_index(grid.slack.id)
    u_set = grid.slack.u_set if grid.slack.u_set is not None else 1.0
    pq = np.array([i for i in range(n) if i != slack], dtype=int)
    s_spec = nodal_injections(grid, der_p, der_q)

    if start is not None:
        vm, va = start.vm.copy(), start.va.copy()
    else:
        vm, va = np.ones(n), np.zeros(n)
    vm[slack], va[slack] = u_set, 0.0
    V = vm * np.exp(1j * va)

    def mismatch(V):
        s = V * np.conj(Y @ V)
        d = s_spec - s
        return np.concatenate([d.real[pq], d.imag[pq]])

    f = mismatch(V)
    err = np.max(np.abs(f)) if f.size else 0.0
    it = 0
    while err > tolerance:
        if it >= max_iterations:
            raise PowerFlowError(f"no convergence in {max_iterations} iterations (mismatch {err:.3e})")
        J = _jacobian(Y, V, pq)
        try:
            dx = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            raise PowerFlowError("singular Jacobian") from None
        m = len(pq)
        va[pq] += dx[:m]
        vm[pq] += dx[m:]
        if np.any(vm <= 0) or not np.all(np.isfinite(vm)):
            raise PowerFlowError("voltage magnitude collapsed during iteration")
        V = vm * np.exp(1j * va)
        f = mismatch(V)
        err = np.max(np.abs(f))
        it += 1
    s = V * np.conj(Y @ V)
    return PowerFlowSolution(
        tuple(nd.id for nd in grid.nodes), np.abs(V), np.angle(V), s.real, s.imag, it, float(err)
    )


def sensitivity(grid: GridModel, solution: PowerFlowSolution, wrt: str = "q") -> SensitivityMatrix:
    """DER-node voltage sensitivities from the inverse converged Jacobian.

    ``wrt="q"`` gives dU_i/dQ_j (the K_Q matrix), ``wrt="p"`` gives
    dU_i/dP_j.  DERs at the slack node see and cause no voltage change.
    """
    if wrt not in ("q", "p"):
        raise ValueError("wrt must be 'q' or 'p'")
    Y = build_admittance(grid)
    n = len(grid.nodes)
    slack = grid.node_index(grid.slack.id)
    pq = [i for i in range(n) if i != slack]
    m = len(pq)
    J = _jacobian(Y, solution.voltage, np.array(pq, dtype=int))
    try:
        Jinv = np.linalg.inv(J)
    except np.linalg.LinAlgError:
        raise PowerFlowError("singular Jacobian") from None
    pos = {node: k for k, node in enumerate(pq)}
    col_off = m if wrt == "q" else 0
    nd = len(grid.ders)
    K = np.zeros((nd, nd))
    for a, da in enumerate(grid.ders):
        ia = pos.get(grid.node_index(da.node))
        if ia is None:
            continue
        for b, db in enumerate(grid.ders):
            ib = pos.get(grid.node_index(db.node))
            if ib is None:
                continue
            K[a, b] = Jinv[m + ia, col_off + ib]
    return SensitivityMatrix(K, tuple(grid.der_ids))
