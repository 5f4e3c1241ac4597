"""The system state vector ``[angles of non-slack buses, all voltage magnitudes]``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["StateVector"]


@dataclass(frozen=True, eq=False)
class StateVector:
    """State of an ``N``-bus system at time ``t``.

    ``values`` has length ``2N - 1``: the ``N - 1`` angles (radians) of the
    non-slack buses in internal bus order, then the ``N`` voltage magnitudes
    (p.u.). The slack angle is not a state; it is carried as ``slack_angle``.
    ``clamped`` counts magnitudes clipped when the state was produced.
    """

    values: np.ndarray
    slack: int
    slack_angle: float = 0.0
    t: int = 0
    clamped: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size % 2 != 1 or values.size < 3:
            raise ValueError(f"state length must be 2N-1 with N >= 2, got {values.shape}")
        if not 0 <= self.slack < self.n_bus:
            raise ValueError(f"slack index {self.slack} out of range for N={self.n_bus}")

    @classmethod
    def from_polar(cls, theta: np.ndarray, vm: np.ndarray, slack: int, t: int = 0) -> "StateVector":
        """Pack full-length angle and magnitude vectors (both of length N)."""
        theta = np.asarray(theta, dtype=float)
        vm = np.asarray(vm, dtype=float)
        if theta.shape != vm.shape or theta.ndim != 1:
            raise ValueError("theta and vm must be 1-D arrays of equal length")
        angles = np.delete(theta, slack)
        return cls(np.concatenate([angles, vm]), slack=slack, slack_angle=float(theta[slack]), t=t)

    @classmethod
    def flat(cls, n_bus: int, slack: int, t: int = 0) -> "StateVector":
        return cls.from_polar(np.zeros(n_bus), np.ones(n_bus), slack, t)

    @property
    def n_bus(self) -> int:
        return (self.values.size + 1) // 2

    @property
    def angles(self) -> np.ndarray:
        """Non-slack angles, length N - 1."""
        return self.values[: self.n_bus - 1]

    @property
    def vm(self) -> np.ndarray:
        return self.values[self.n_bus - 1:]

    @property
    def theta(self) -> np.ndarray:
        """All N bus angles with the slack angle re-inserted."""
        return np.insert(self.angles, self.slack, self.slack_angle)

    def with_values(self, values: np.ndarray, t: int | None = None, clamped: int = 0) -> "StateVector":
        return StateVector(values, slack=self.slack, slack_angle=self.slack_angle,
                           t=self.t if t is None else t, clamped=clamped)

    def __eq__(self, other):
        if not isinstance(other, StateVector):
            return NotImplemented
        return (self.slack == other.slack and self.slack_angle == other.slack_angle
                and self.t == other.t and np.array_equal(self.values, other.values))

    def __len__(self):
        return self.values.size
