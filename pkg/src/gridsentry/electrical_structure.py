"""Resistance-distance matrices and their binarization into connectivity graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .powerflow import Jacobian

__all__ = [
    "ConnectivityMatrix",
    "ResistanceDistanceMatrix",
    "SingularSensitivityError",
    "connectivity",
    "resistance_distance",
    "sensitivity_matrix_from_jacobian",
]

MAX_CONDITION = 1e12


class SingularSensitivityError(np.linalg.LinAlgError):
    def __init__(self, reference: int, condition: float):
        super().__init__(
            f"grounded sensitivity matrix is singular or ill-conditioned "
            f"(condition estimate {condition:.3e}) with reference node {reference}"
        )
        self.reference = reference
        self.condition = condition


@dataclass(frozen=True, eq=False)
class ResistanceDistanceMatrix:
    E: np.ndarray
    reference_node: int

    @property
    def n(self) -> int:
        return self.E.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.E if dtype is None else self.E.astype(dtype)


@dataclass(frozen=True, eq=False)
class ConnectivityMatrix:
    """Binary, symmetric, unit-diagonal adjacency from the smallest distances.

    ``branch_count`` is the number of off-diagonal pairs kept; it exceeds the
    requested ``K`` only when distances tie at the cut (``tie`` is then set).
    """

    C: np.ndarray
    threshold: float
    branch_count: int
    requested: int
    tie: bool

    @property
    def n(self) -> int:
        return self.C.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.C, 1))
        return list(zip(i.tolist(), j.tolist()))


def resistance_distance(G: np.ndarray, reference: int, reduced: bool = False) -> ResistanceDistanceMatrix:
    """Pairwise resistance distances of the network described by ``G``.

    ``G`` is a Laplacian-like N x N matrix; node ``reference`` is grounded by
    deleting its row and column. With ``reduced=True`` ``G`` is taken to be
    the already-grounded (N-1) x (N-1) matrix and ``reference`` is the index
    the grounded node occupies in the result.

    With ``Ginv`` the inverse of the grounded matrix,
    ``e(i, j) = Ginv[i, i] + Ginv[j, j] - Ginv[i, j] - Ginv[j, i]`` and the
    distance from any node to the reference is ``Ginv[k, k]``.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"G must be square, got shape {G.shape}")
    n = G.shape[0] + 1 if reduced else G.shape[0]
    if not 0 <= reference < n:
        raise ValueError(f"reference node {reference} out of range for {n} nodes")

    Gkk = G if reduced else np.delete(np.delete(G, reference, axis=0), reference, axis=1)
    if Gkk.size == 0:
        raise ValueError("need at least two nodes")
    cond = np.linalg.cond(Gkk)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularSensitivityError(reference, cond)
    Ginv = np.linalg.inv(Gkk)

    gamma = np.diag(Ginv)
    # grouping keeps e(i, j) and e(j, i) bitwise equal
    Ekk = (gamma[:, None] + gamma[None, :]) - (Ginv + Ginv.T)
    np.fill_diagonal(Ekk, 0.0)

    E = np.zeros((n, n))
    keep = np.delete(np.arange(n), reference)
    E[np.ix_(keep, keep)] = Ekk
    E[reference, keep] = gamma
    E[keep, reference] = gamma
    E.setflags(write=False)
    return ResistanceDistanceMatrix(E, reference)


def sensitivity_matrix_from_jacobian(J: Jacobian, symmetric: bool = True) -> np.ndarray:
    """The N x N angle-sensitivity matrix from the dP/dtheta block.

    The raw block (``symmetric=False``, slack row and column included) has
    zero row sums but is not symmetric away from a lossless flat state: the
    ``G_ij sin(theta_ij)`` loss terms are antisymmetric. By default those are
    dropped, leaving the Laplacian with branch weights
    ``V_i V_j B_ij cos(theta_ij)``. Those weights are nonnegative for
    nonnegative reactance and angle differences below 90 degrees, which is
    what makes the resulting distances a metric. Both forms coincide for a
    lossless network at flat start.
    """
    H = np.array(J.full_dP_dtheta, dtype=float)
    if not symmetric:
        return H
    L = (H + H.T) / 2
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


def connectivity(E: ResistanceDistanceMatrix | np.ndarray, K: int) -> ConnectivityMatrix:
    """Keep the ``K`` electrically closest bus pairs as edges.

    Pairs tied with the K-th smallest distance are all kept. The diagonal is
    set to one so that a PMU observes its own bus.
    """
    D = np.asarray(E.E if isinstance(E, ResistanceDistanceMatrix) else E, dtype=float)
    n = D.shape[0]
    n_pairs = n * (n - 1) // 2
    if not 0 < K <= n_pairs:
        raise ValueError(f"K must be in [1, {n_pairs}], got {K}")

    iu, ju = np.triu_indices(n, 1)
    upper = D[iu, ju]
    order = np.sort(upper, kind="stable")
    cut = order[K - 1]
    larger = order[order > cut]
    tau = float(larger[0]) if larger.size else np.inf

    keep = upper < tau
    C = np.zeros((n, n), dtype=np.int8)
    C[iu[keep], ju[keep]] = 1
    C = C | C.T
    np.fill_diagonal(C, 1)
    count = int(keep.sum())
    C.setflags(write=False)
    return ConnectivityMatrix(C=C, threshold=tau, branch_count=count, requested=K, tie=count > K)
