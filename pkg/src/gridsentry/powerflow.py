"""Bus admittance matrix, AC power-flow Jacobian and a Newton-Raphson solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .case_model import BusType, CaseData
from .state import StateVector

__all__ = [
    "Jacobian",
    "PowerFlowError",
    "YBus",
    "build_ybus",
    "compute_jacobian",
    "power_injections",
    "scheduled_injections",
    "solve_powerflow",
]


class PowerFlowError(RuntimeError):
    """Newton-Raphson failed, or the state is unusable for the Jacobian."""

    def __init__(self, message: str, mismatch: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class YBus:
    Y: np.ndarray

    @property
    def G(self) -> np.ndarray:
        return self.Y.real

    @property
    def B(self) -> np.ndarray:
        return self.Y.imag

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    def __getitem__(self, idx):
        return self.Y[idx]


def build_ybus(case: CaseData) -> YBus:
    """Assemble Y with the standard pi-model (taps, phase shifts, charging, bus shunts).

    Out-of-service branches contribute nothing.
    """
    n = case.N
    Y = np.zeros((n, n), dtype=complex)
    for br in case.in_service_branches:
        f, t = case.index_of(br.from_bus), case.index_of(br.to_bus)
        ys = 1.0 / complex(br.r, br.x)
        tap = br.tap_ratio * np.exp(1j * br.phase_shift)
        ytt = ys + 0.5j * br.b
        Y[f, f] += ytt / (tap * np.conj(tap))
        Y[t, t] += ytt
        Y[f, t] += -ys / np.conj(tap)
        Y[t, f] += -ys / tap
    for k, bus in enumerate(case.buses):
        Y[k, k] += complex(bus.Gs, bus.Bs) / case.base_MVA
    return YBus(Y)


def power_injections(ybus: YBus, theta: np.ndarray, vm: np.ndarray) -> np.ndarray:
    """Complex bus injections ``S = V * conj(Y V)`` in p.u."""
    V = vm * np.exp(1j * theta)
    return V * np.conj(ybus.Y @ V)


def scheduled_injections(case: CaseData) -> np.ndarray:
    """Net scheduled complex injection per bus (generation minus load), p.u."""
    S = np.array([-complex(b.Pd, b.Qd) for b in case.buses])
    for gen in case.generators:
        if gen.in_service:
            S[case.index_of(gen.bus)] += complex(gen.Pg, gen.Qg)
    return S / case.base_MVA


def _dS_dV(Y: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of S with respect to voltage angle and magnitude (full N x N)."""
    I = Y @ V
    diagV = np.diag(V)
    dS_dVa = 1j * diagV @ np.conj(np.diag(I) - Y @ diagV)
    Vnorm = V / np.abs(V)
    dS_dVm = diagV @ np.conj(Y @ np.diag(Vnorm)) + np.conj(np.diag(I)) @ np.diag(Vnorm)
    return dS_dVa, dS_dVm


@dataclass(frozen=True, eq=False)
class Jacobian:
    """Power-flow Jacobian at ``state``.

    The ``full_*`` arrays are N x N, differentiating every bus injection
    with respect to every bus angle or magnitude. The reduced blocks follow
    the state layout: P rows and angle columns drop the slack bus, Q rows
    and magnitude columns keep all buses.
    """

    full_dP_dtheta: np.ndarray
    full_dP_dV: np.ndarray
    full_dQ_dtheta: np.ndarray
    full_dQ_dV: np.ndarray
    state: StateVector

    @property
    def slack(self) -> int:
        return self.state.slack

    def _drop(self, block, rows: bool, cols: bool):
        if rows:
            block = np.delete(block, self.slack, axis=0)
        if cols:
            block = np.delete(block, self.slack, axis=1)
        return block

    @property
    def dP_dtheta(self) -> np.ndarray:
        return self._drop(self.full_dP_dtheta, True, True)

    @property
    def dP_dV(self) -> np.ndarray:
        return self._drop(self.full_dP_dV, True, False)

    @property
    def dQ_dtheta(self) -> np.ndarray:
        return self._drop(self.full_dQ_dtheta, False, True)

    @property
    def dQ_dV(self) -> np.ndarray:
        return self.full_dQ_dV

    def matrix(self) -> np.ndarray:
        """The (2N-1) x (2N-1) matrix of d[P_nonslack, Q_all] / d(state)."""
        return np.block([[self.dP_dtheta, self.dP_dV], [self.dQ_dtheta, self.dQ_dV]])


def compute_jacobian(case: CaseData, state: StateVector, ybus: YBus | None = None) -> Jacobian:
    if state.n_bus != case.N:
        raise ValueError(f"state is for {state.n_bus} buses, case has {case.N}")
    if not np.all(np.isfinite(state.values)):
        raise PowerFlowError(f"non-finite state entries at t={state.t}")
    if np.any(state.vm <= 0):
        raise PowerFlowError(f"non-positive voltage magnitude at t={state.t}")
    ybus = build_ybus(case) if ybus is None else ybus
    V = state.vm * np.exp(1j * state.theta)
    dS_dVa, dS_dVm = _dS_dV(ybus.Y, V)
    return Jacobian(
        full_dP_dtheta=dS_dVa.real,
        full_dP_dV=dS_dVm.real,
        full_dQ_dtheta=dS_dVa.imag,
        full_dQ_dV=dS_dVm.imag,
        state=state,
    )


def solve_powerflow(case: CaseData, tol: float = 1e-8, max_iter: int = 30,
                    ybus: YBus | None = None) -> StateVector:
    """Newton-Raphson from flat start; PV-bus reactive limits are not enforced.

    Converged when the largest P/Q mismatch is at most ``tol`` p.u.
    """
    ybus = build_ybus(case) if ybus is None else ybus
    n = case.N
    slack = case.slack
    types = [b.bus_type for b in case.buses]
    pv = [k for k in range(n) if types[k] is BusType.PV]
    pq = [k for k in range(n) if types[k] is BusType.PQ]
    pvpq = sorted(pv + pq)

    vm = np.ones(n)
    for k, bus in enumerate(case.buses):
        if types[k] is not BusType.PQ:
            vm[k] = bus.Vm
    for gen in case.generators:
        k = case.index_of(gen.bus)
        if gen.in_service and types[k] is not BusType.PQ:
            vm[k] = gen.Vg
    theta = np.zeros(n)
    theta[slack] = case.buses[slack].Va

    S_sched = scheduled_injections(case)

    def mismatch(theta, vm):
        dS = power_injections(ybus, theta, vm) - S_sched
        return np.concatenate([dS.real[pvpq], dS.imag[pq]])

    F = mismatch(theta, vm)
    norm = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise PowerFlowError(f"power flow did not converge in {max_iter} iterations "
                                 f"(max mismatch {norm:.3e} p.u.)", mismatch=norm, iterations=it)
        it += 1
        V = vm * np.exp(1j * theta)
        dS_dVa, dS_dVm = _dS_dV(ybus.Y, V)
        J = np.block([
            [dS_dVa.real[np.ix_(pvpq, pvpq)], dS_dVm.real[np.ix_(pvpq, pq)]],
            [dS_dVa.imag[np.ix_(pq, pvpq)], dS_dVm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise PowerFlowError(f"singular Jacobian at iteration {it}", mismatch=norm, iterations=it) from None
        theta[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        F = mismatch(theta, vm)
        norm = np.max(np.abs(F))
        if not np.isfinite(norm):
            raise PowerFlowError(f"power flow diverged at iteration {it}", mismatch=norm, iterations=it)

    return StateVector.from_polar(theta, vm, slack)
