"""Linear state evolution ``x_t = F_t x_{t-1} + w_t`` with a least-squares ``F_t``.

``F_t`` is block diagonal: an angle block ``A`` ((N-1) x (N-1)) and a
magnitude block ``B`` (N x N). Each row of a block is fitted by least
squares against the lagged sub-vectors of the last ``M`` transitions.
"""

from __future__ import annotations

import csv
import enum
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .case_model import CaseData
from .powerflow import solve_powerflow
from .state import StateVector

__all__ = [
    "Bootstrap",
    "DivergentStateError",
    "NoiseModel",
    "RankDeficientError",
    "SimulationError",
    "StateHistory",
    "StateVector",
    "TransitionMatrix",
    "estimate_transition",
    "simulate",
    "step",
    "read_trajectory",
    "write_trajectory",
]

DEFAULT_VM_BOUNDS = (0.2, 2.0)


class DivergentStateError(FloatingPointError):
    """A step produced non-finite values, i.e. the transition matrix blew up."""


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, block: str, rank: int, columns: int):
        super().__init__(f"regressor for block {block} is rank deficient (rank {rank} < {columns})")
        self.block = block
        self.rank = rank
        self.columns = columns


class SimulationError(RuntimeError):
    def __init__(self, t: int, cause: Exception):
        super().__init__(f"t={t}: {cause}")
        self.t = t
        self.cause = cause


@dataclass
class NoiseModel:
    """I.i.d. zero-mean Gaussian process noise with a reproducible stream."""

    variance: float = 1.0
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"noise variance must be positive, got {self.variance}")
        self.reset()

    def reset(self) -> None:
        self._rng = np.random.default_rng(self.seed)

    def draw(self, size: int) -> np.ndarray:
        return self._rng.normal(0.0, np.sqrt(self.variance), size)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        for name in ("A", "B"):
            block = np.array(getattr(self, name), dtype=float)
            if block.ndim != 2 or block.shape[0] != block.shape[1]:
                raise ValueError(f"block {name} must be square, got {block.shape}")
            block.setflags(write=False)
            object.__setattr__(self, name, block)
        if self.B.shape[0] != self.A.shape[0] + 1:
            raise ValueError(f"block sizes {self.A.shape} and {self.B.shape} do not match an N-bus state")

    @classmethod
    def identity(cls, n_bus: int) -> "TransitionMatrix":
        return cls(np.eye(n_bus - 1), np.eye(n_bus))

    @classmethod
    def from_full(cls, F: np.ndarray) -> "TransitionMatrix":
        """Split a (2N-1) x (2N-1) matrix; cross blocks are discarded."""
        F = np.asarray(F, dtype=float)
        na = (F.shape[0] - 1) // 2
        return cls(F[:na, :na], F[na:, na:])

    @property
    def F(self) -> np.ndarray:
        na, nb = self.A.shape[0], self.B.shape[0]
        F = np.zeros((na + nb, na + nb))
        F[:na, :na] = self.A
        F[na:, na:] = self.B
        return F

    @property
    def dim(self) -> int:
        return self.A.shape[0] + self.B.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        na = self.A.shape[0]
        return np.concatenate([self.A @ x[:na], self.B @ x[na:]])


def step(F: TransitionMatrix, x_prev: StateVector, noise: NoiseModel,
         vm_bounds: tuple[float, float] = DEFAULT_VM_BOUNDS) -> StateVector:
    """One transition; magnitudes outside ``vm_bounds`` are clipped and counted."""
    if F.dim != len(x_prev):
        raise ValueError(f"transition has dimension {F.dim}, state has {len(x_prev)}")
    x = F.apply(x_prev.values) + noise.draw(F.dim)
    if not np.all(np.isfinite(x)):
        raise DivergentStateError(f"non-finite state at t={x_prev.t + 1}")
    na = F.A.shape[0]
    lo, hi = vm_bounds
    vm = x[na:]
    clamped = int(np.count_nonzero((vm < lo) | (vm > hi)))
    x[na:] = np.clip(vm, lo, hi)
    return x_prev.with_values(x, t=x_prev.t + 1, clamped=clamped)


class StateHistory:
    """The ``M + 1`` most recent states, i.e. ``M`` consecutive transitions."""

    def __init__(self, window: int, n_bus: int | None = None):
        if n_bus is not None and window < 2 * n_bus - 1:
            raise ValueError(f"window M={window} is below 2N-1={2 * n_bus - 1}")
        if window < 1:
            raise ValueError("window must be positive")
        self.window = window
        self._states: deque[StateVector] = deque(maxlen=window + 1)

    def push(self, state: StateVector) -> None:
        if self._states:
            last = self._states[-1]
            if state.t != last.t + 1:
                raise ValueError(f"non-consecutive timestamps {last.t} -> {state.t}")
            if len(state) != len(last):
                raise ValueError("state dimension changed")
        self._states.append(state)

    @property
    def full(self) -> bool:
        return len(self._states) == self.window + 1

    def __len__(self) -> int:
        return len(self._states)

    def __iter__(self) -> Iterator[StateVector]:
        return iter(self._states)

    def matrix(self) -> np.ndarray:
        """States as rows, oldest first."""
        return np.vstack([s.values for s in self._states])


def _fit_block(lagged: np.ndarray, current: np.ndarray, block: str) -> np.ndarray:
    # rows of the returned matrix are the per-row least-squares solutions
    coef, _, rank, _ = np.linalg.lstsq(lagged, current, rcond=None)
    if rank < lagged.shape[1]:
        raise RankDeficientError(block, int(rank), lagged.shape[1])
    return coef.T


def estimate_transition(history: StateHistory | Sequence[StateVector] | np.ndarray) -> TransitionMatrix:
    """Least-squares block-diagonal transition matrix over the history window.

    Row ``i`` of ``A`` minimises ``sum_s (theta_s[i] - A[i] . theta_{s-1})^2``
    over the window, and likewise for ``B`` on the magnitudes. Solved with an
    SVD-based least-squares routine rather than explicit normal equations.
    """
    if isinstance(history, StateHistory):
        if not history.full:
            raise ValueError(f"history holds {len(history)} states, needs {history.window + 1}")
        X = history.matrix()
    elif isinstance(history, np.ndarray):
        X = np.asarray(history, dtype=float)
    else:
        X = np.vstack([s.values for s in history])
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two states")
    na = (X.shape[1] - 1) // 2
    lagged, current = X[:-1], X[1:]
    A = _fit_block(lagged[:, :na], current[:, :na], "A")
    B = _fit_block(lagged[:, na:], current[:, na:], "B")
    return TransitionMatrix(A, B)


class Bootstrap(enum.Enum):
    IDENTITY = "identity"


def simulate(case: CaseData, T: int, M: int | None = None, noise: NoiseModel | None = None,
             bootstrap: Bootstrap = Bootstrap.IDENTITY, x0: StateVector | None = None,
             flat_start: bool = False,
             vm_bounds: tuple[float, float] = DEFAULT_VM_BOUNDS) -> Iterator[tuple[StateVector, TransitionMatrix]]:
    """Yield ``(x_t, F_t)`` for ``t = 1..T``.

    ``F_t`` is the identity until the window holds ``M`` transitions, and the
    least-squares estimate over the last ``M`` transitions afterwards. ``x0``
    defaults to the solved power flow, or the flat state with ``flat_start``.
    """
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    n = case.N
    M = 2 * n - 1 if M is None else M
    noise = NoiseModel() if noise is None else noise
    if x0 is None:
        x0 = StateVector.flat(n, case.slack) if flat_start else solve_powerflow(case)
    history = StateHistory(M, n)
    history.push(x0)
    identity = TransitionMatrix.identity(n)
    x = x0
    for t in range(x0.t + 1, x0.t + T + 1):
        try:
            F = estimate_transition(history) if history.full else identity
            x = step(F, x, noise, vm_bounds)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            raise SimulationError(t, exc) from exc
        history.push(x)
        yield x, F


def trajectory_header(case: CaseData) -> list[str]:
    ids = case.bus_ids
    angles = [f"theta_{i}" for k, i in enumerate(ids) if k != case.slack]
    return ["t", *angles, *(f"V_{i}" for i in ids)]


def write_trajectory(path: str | Path, case: CaseData, states: Sequence[StateVector], config: dict | None = None) -> None:
    """CSV of states (12 significant digits) plus a ``.json`` sidecar with ``config``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_NONE)
        writer.writerow(trajectory_header(case))
        for s in states:
            writer.writerow([s.t, *(f"{v:.12g}" for v in s.values)])
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"case": case.name, "slack": case.bus_ids[case.slack], **(config or {})},
                                  indent=2, sort_keys=True) + "\n")


def read_trajectory(path: str | Path, slack: int, slack_angle: float = 0.0) -> list[StateVector]:
    """States written by :func:`write_trajectory` or a run's ``trajectory.csv``."""
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return [StateVector(r[1:], slack=slack, slack_angle=slack_angle, t=int(r[0])) for r in rows]
