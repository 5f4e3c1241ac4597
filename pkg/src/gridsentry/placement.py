"""Minimum PMU placement for complete observability.

The problem ``min sum(d) s.t. C d >= 1, d binary`` is a set cover: bus ``i``
is observed when some selected bus ``j`` has ``C[i, j] = 1``. It is solved
exactly by branch and bound over integer bitmasks.

Among optimal placements the one returned is canonical: its sorted tuple of
bus indices is lexicographically smallest, the same order in which
:func:`solve_exhaustive` enumerates candidates of equal size.
"""

from __future__ import annotations

import enum
import io
import json
import time
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import IO, Union

import numpy as np

from .electrical_structure import ConnectivityMatrix

__all__ = [
    "PlacementProblem",
    "PlacementSolution",
    "Proof",
    "problem_from_csv",
    "problem_from_json",
    "problem_to_csv",
    "problem_to_json",
    "solve",
    "solve_exhaustive",
    "verify",
]

DEFAULT_TIMEOUT = 60.0
EXHAUSTIVE_MAX_N = 24


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


@dataclass(frozen=True, eq=False)
class PlacementProblem:
    """Binary observability matrix ``C`` with a unit diagonal (always feasible)."""

    C: np.ndarray

    def __post_init__(self):
        C = np.array(self.C, dtype=np.int8)
        if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] == 0:
            raise ValueError(f"C must be a non-empty square matrix, got shape {C.shape}")
        if not np.isin(C, (0, 1)).all():
            raise ValueError("C must be binary")
        if not (np.diag(C) == 1).all():
            raise ValueError("C must have a unit diagonal")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @classmethod
    def from_connectivity(cls, conn: ConnectivityMatrix) -> "PlacementProblem":
        return cls(conn.C)

    @classmethod
    def from_edges(cls, n: int, edges) -> "PlacementProblem":
        C = np.eye(n, dtype=np.int8)
        for i, j in edges:
            C[i, j] = C[j, i] = 1
        return cls(C)

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def symmetric(self) -> bool:
        return bool((self.C == self.C.T).all())

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.C | self.C.T, 1))
        return list(zip(i.tolist(), j.tolist()))

    def row_masks(self) -> list[int]:
        """For each bus, the set of buses whose PMU would observe it."""
        return [sum(1 << int(j) for j in np.flatnonzero(row)) for row in self.C]

    def col_masks(self) -> list[int]:
        """For each candidate PMU site, the set of buses it observes."""
        return [sum(1 << int(i) for i in np.flatnonzero(col)) for col in self.C.T]


class Proof(enum.Enum):
    BRANCH_AND_BOUND = "BranchAndBound"
    EXHAUSTIVE = "Exhaustive"


@dataclass(frozen=True, eq=False)
class PlacementSolution:
    d: np.ndarray
    count: int
    proof: Proof | None
    nodes: int = 0
    elapsed: float = 0.0
    timed_out: bool = False
    stats: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.proof is not None

    @property
    def buses(self) -> list[int]:
        return np.flatnonzero(self.d).tolist()


def verify(problem: PlacementProblem, d) -> tuple[bool, list[int]]:
    """Check ``C d >= 1``; returns the flag and the unobserved bus indices."""
    d = np.asarray(d)
    if d.shape != (problem.n,):
        raise ValueError(f"d must have length {problem.n}, got shape {d.shape}")
    covered = problem.C.astype(np.int64) @ (d != 0).astype(np.int64)
    uncovered = np.flatnonzero(covered < 1).tolist()
    return not uncovered, uncovered


def _as_vector(n: int, chosen) -> np.ndarray:
    d = np.zeros(n, dtype=np.int8)
    d[list(chosen)] = 1
    return d


def solve_exhaustive(problem: PlacementProblem) -> PlacementSolution:
    """Enumerate placements by size, then lexicographically; return the first feasible."""
    n = problem.n
    if n > EXHAUSTIVE_MAX_N:
        raise ValueError(f"exhaustive enumeration limited to N <= {EXHAUSTIVE_MAX_N}, got {n}")
    start = time.perf_counter()
    cols = problem.col_masks()
    full = (1 << n) - 1
    tried = 0
    for k in range(n + 1):
        for combo in combinations(range(n), k):
            tried += 1
            covered = 0
            for j in combo:
                covered |= cols[j]
            if covered == full:
                return PlacementSolution(_as_vector(n, combo), k, Proof.EXHAUSTIVE, nodes=tried,
                                         elapsed=time.perf_counter() - start)
    raise AssertionError("unreachable: the all-ones placement is feasible")


class _Timeout(Exception):
    pass


class _CoverSearch:
    """Depth-first branch and bound for ``min |S|`` with ``S`` covering ``rows``.

    Branches on the uncovered row with the fewest remaining candidates;
    sibling branches exclude the candidates already tried, so each cover is
    reached at most once. The bound is the size of a greedy packing of
    uncovered rows with pairwise disjoint candidate sets.
    """

    def __init__(self, row_masks: list[int], col_masks: list[int], deadline: float):
        self.rows = row_masks
        self.cols = col_masks
        self.deadline = deadline
        self.nodes = 0

    def lower_bound(self, uncovered: int, allowed: int) -> int:
        cands = sorted(((self.rows[i] & allowed).bit_count(), self.rows[i] & allowed) for i in _bits(uncovered))
        used = 0
        bound = 0
        for _, cand in cands:
            if not cand & used:
                bound += 1
                used |= cand
        return bound

    def run(self, uncovered: int, allowed: int, best: int, stop_at: int = -1):
        """Best cover strictly smaller than ``best`` (list of columns) or None.

        Returns as soon as a cover of size ``<= stop_at`` is found.
        """
        self.best_size = best
        self.best_set = None
        self.stop_at = stop_at
        self._found = False
        self._node(uncovered, allowed, [])
        return self.best_set

    def _node(self, uncovered: int, allowed: int, chosen: list[int]) -> None:
        self.nodes += 1
        if self.nodes & 1023 == 0 and time.perf_counter() > self.deadline:
            raise _Timeout
        if not uncovered:
            if len(chosen) < self.best_size:
                self.best_size = len(chosen)
                self.best_set = list(chosen)
                if self.best_size <= self.stop_at:
                    self._found = True
            return
        depth = len(chosen)
        if depth + 1 >= self.best_size:
            return

        # most constrained row
        pick, pick_cands, pick_count = -1, 0, 1 << 30
        for i in _bits(uncovered):
            cand = self.rows[i] & allowed
            c = cand.bit_count()
            if c < pick_count:
                pick, pick_cands, pick_count = i, cand, c
                if c <= 1:
                    break
        if pick_count == 0:
            return
        if pick_count > 1 and depth + self.lower_bound(uncovered, allowed) >= self.best_size:
            return

        order = sorted(_bits(pick_cands), key=lambda j: (-(self.cols[j] & uncovered).bit_count(), j))
        for j in order:
            chosen.append(j)
            self._node(uncovered & ~self.cols[j], allowed, chosen)
            chosen.pop()
            if self._found or depth + 1 >= self.best_size:
                return
            allowed &= ~(1 << j)


def _greedy(cols: list[int], target: int) -> list[int]:
    """Largest-coverage-first cover of ``target``, with redundant picks removed."""
    chosen = []
    uncovered = target
    while uncovered:
        j = max(range(len(cols)), key=lambda j: ((cols[j] & uncovered).bit_count(), -j))
        chosen.append(j)
        uncovered &= ~cols[j]
    for j in sorted(chosen, reverse=True):
        rest = 0
        for k in chosen:
            if k != j:
                rest |= cols[k]
        if rest & target == target:
            chosen.remove(j)
    return sorted(chosen)


def _reduce(rows: list[int], cols: list[int], live_rows: int, live_cols: int) -> tuple[int, int]:
    """Drop dominated rows and columns; optimal size is unchanged."""
    changed = True
    while changed:
        changed = False
        row_ids = list(_bits(live_rows))
        cand = {i: rows[i] & live_cols for i in row_ids}
        for i in row_ids:
            for j in row_ids:
                if i != j and (live_rows >> j) & 1 and (live_rows >> i) & 1:
                    # covering j forces covering i when cand(j) is a subset of cand(i)
                    if cand[j] & ~cand[i] == 0 and (cand[j] != cand[i] or j < i):
                        live_rows &= ~(1 << i)
                        changed = True
                        break
        col_ids = list(_bits(live_cols))
        cover = {j: cols[j] & live_rows for j in col_ids}
        for i in col_ids:
            for j in col_ids:
                if i != j and (live_cols >> j) & 1 and (live_cols >> i) & 1:
                    if cover[i] & ~cover[j] == 0 and (cover[i] != cover[j] or j < i):
                        live_cols &= ~(1 << i)
                        changed = True
                        break
    return live_rows, live_cols


def _completion(search: _CoverSearch, rows_left: int, cols_left: int, budget: int) -> list[int] | None:
    """Any cover of ``rows_left`` from ``cols_left`` with at most ``budget`` columns."""
    live_rows, live_cols = _reduce(search.rows, search.cols, rows_left, cols_left)
    if search.lower_bound(live_rows, live_cols) > budget:
        return None
    return search.run(live_rows, live_cols, budget + 1, stop_at=budget)


def solve(problem: PlacementProblem, timeout: float = DEFAULT_TIMEOUT) -> PlacementSolution:
    """Provably minimal placement, canonical among ties.

    Phase one finds the optimal count on a dominance-reduced problem, seeded
    with a greedy cover. Phase two fixes buses in index order, keeping bus
    ``i`` whenever some optimal placement still contains it. On timeout the
    best placement found is returned with ``proof=None``.
    """
    start = time.perf_counter()
    deadline = start + timeout
    n = problem.n
    rows, cols = problem.row_masks(), problem.col_masks()
    full = (1 << n) - 1

    greedy = _greedy(cols, full)
    witness = greedy
    search = _CoverSearch(rows, cols, deadline)
    stats = {"greedy": len(greedy)}

    try:
        live_rows, live_cols = _reduce(rows, cols, full, full)
        stats["reduced_rows"] = live_rows.bit_count()
        stats["reduced_cols"] = live_cols.bit_count()
        better = search.run(live_rows, live_cols, len(greedy))
        stats["phase1_nodes"] = search.nodes
        if better is not None:
            # the reduced optimum also covers the dropped rows
            witness = sorted(better)
        k = len(witness)

        fixed: list[int] = []
        uncovered = full
        member = set(witness)
        for i in range(n):
            if not uncovered:
                break
            if i in member:
                fixed.append(i)
                uncovered &= ~cols[i]
                continue
            rest = uncovered & ~cols[i]
            budget = k - len(fixed) - 1
            if not rest:
                completion = []
            elif budget <= 0:
                continue
            else:
                later = full & ~((1 << (i + 1)) - 1)
                completion = _completion(search, rest, later, budget)
                if completion is None:
                    continue
            fixed.append(i)
            uncovered = rest
            member = set(fixed) | set(completion)
        witness = sorted(fixed)
        stats["nodes"] = search.nodes
        proof = Proof.BRANCH_AND_BOUND
        timed_out = False
    except _Timeout:
        stats["nodes"] = search.nodes
        proof = None
        timed_out = True
        if search.best_set is not None and search.stop_at < 0 and len(search.best_set) < len(witness):
            witness = sorted(search.best_set)

    d = _as_vector(n, witness)
    return PlacementSolution(d, len(witness), proof, nodes=search.nodes,
                             elapsed=time.perf_counter() - start, timed_out=timed_out, stats=stats)


# ---------------------------------------------------------------------------
# import / export

PathOrStream = Union[str, Path, IO[str]]


def _open_text(target: PathOrStream, mode: str):
    if isinstance(target, (str, Path)):
        return open(target, mode, newline="")
    return _NoClose(target)


class _NoClose:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        return False


def problem_to_csv(problem: PlacementProblem, target: PathOrStream) -> None:
    """``C`` as N lines of comma-separated 0/1 values, LF line endings."""
    with _open_text(target, "w") as fh:
        for row in problem.C:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def problem_from_csv(source: PathOrStream) -> PlacementProblem:
    with _open_text(source, "r") as fh:
        text = fh.read()
    return PlacementProblem(np.loadtxt(io.StringIO(text), delimiter=",", dtype=np.int8, ndmin=2))


def problem_to_json(problem: PlacementProblem, solution: PlacementSolution | None = None) -> str:
    """``{n, edges, solution}``; edges are 0-based index pairs ``i < j``."""
    if not problem.symmetric:
        raise ValueError("JSON export needs a symmetric C")
    doc = {"n": problem.n, "edges": [list(e) for e in problem.edges()]}
    if solution is not None:
        doc["solution"] = {"d": solution.d.astype(int).tolist(), "count": solution.count,
                           "optimal": solution.optimal}
    return json.dumps(doc)


def problem_from_json(text: str) -> tuple[PlacementProblem, dict | None]:
    doc = json.loads(text)
    problem = PlacementProblem.from_edges(int(doc["n"]), doc.get("edges", []))
    return problem, doc.get("solution")
