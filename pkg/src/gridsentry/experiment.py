"""End-to-end runs: simulate states, derive electrical structure, place PMUs per step."""

from __future__ import annotations

import csv
import json
import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .case_model import CaseData, CaseError, bundled_case, read_case
from .electrical_structure import connectivity, resistance_distance, sensitivity_matrix_from_jacobian
from .placement import PlacementProblem, PlacementSolution, solve, verify
from .powerflow import build_ybus, compute_jacobian, solve_powerflow
from .state import StateVector
from .state_dynamics import DEFAULT_VM_BOUNDS, NoiseModel, SimulationError, simulate, trajectory_header

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "PipelineError",
    "StepRecord",
    "compare_topological",
    "load_experiment_case",
    "run_experiment",
    "structure_at",
]


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, t: int, stage: str, cause: Exception):
        super().__init__(f"step {t}, stage {stage}: {cause}")
        self.t = t
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    case: str
    format: str | None = None
    steps: int = 100
    window: int | None = None
    sigma2: float = 1.0
    seed: int = 0
    branches: int | None = None
    vm_min: float = DEFAULT_VM_BOUNDS[0]
    vm_max: float = DEFAULT_VM_BOUNDS[1]
    out: str | None = None
    strict: bool = False
    flat_start: bool = False
    timeout: float = 60.0

    def validate(self) -> None:
        for name in ("steps", "sigma2", "vm_min", "vm_max", "timeout"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("window", "branches"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.vm_min >= self.vm_max:
            raise ConfigError(f"empty voltage clamp range [{self.vm_min}, {self.vm_max}]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def resolved(self, case: CaseData) -> dict:
        """The config with defaults filled in from the case, as written to config.json."""
        doc = asdict(self)
        doc["window"] = self.window or 2 * case.N - 1
        doc["branches"] = self.branches or case.K
        doc["N"] = case.N
        doc["K"] = case.K
        doc["case_name"] = case.name
        return doc


@dataclass
class StepRecord:
    t: int
    count: int
    d: list[int]
    branch_count: int
    tie: bool
    clamped: int
    optimal: bool
    nodes: int
    solve_seconds: float


@dataclass
class ExperimentReport:
    config: dict
    records: list[StepRecord] = field(default_factory=list)
    status: str = "ok"

    @property
    def counts(self) -> list[int]:
        return [r.count for r in self.records]

    def summary(self) -> dict:
        counts = self.counts
        configs = [tuple(r.d) for r in self.records]
        pairs = [
            [a.t, b.t]
            for k, a in enumerate(self.records)
            for b in self.records[k + 1:]
            if a.count == b.count and a.d != b.d
        ]
        out = {"status": self.status, "steps": len(self.records)}
        if counts:
            mode, freq = Counter(counts).most_common(1)[0]
            out.update(
                min_count=min(counts),
                max_count=max(counts),
                mode_count=mode,
                mode_frequency=freq / len(counts),
                distinct_configurations=len(set(configs)),
                consecutive_changes=sum(1 for a, b in zip(configs, configs[1:]) if a != b),
                equal_count_different_config_pairs=len(pairs),
                equal_count_different_config=pairs,
                timeouts=sum(1 for r in self.records if not r.optimal),
                tie_steps=sum(1 for r in self.records if r.tie),
                clamp_events=sum(r.clamped for r in self.records),
            )
        return out

    @property
    def timeouts(self) -> int:
        return sum(1 for r in self.records if not r.optimal)


def load_experiment_case(spec: str, format: str | None = None, strict: bool = False) -> CaseData:
    """A case from a file path, or a bundled case name such as ``case14``/``ieee118``."""
    path = Path(spec)
    if path.is_file():
        return read_case(path, format, strict=strict)
    if not path.suffix:
        try:
            return bundled_case(spec)
        except CaseError:
            pass
    raise ConfigError(f"case file not found: {spec}")


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def structure_at(case: CaseData, state: StateVector, K: int | None = None, ybus=None):
    """Resistance-distance and connectivity matrices at one state."""
    J = compute_jacobian(case, state, ybus)
    E = resistance_distance(sensitivity_matrix_from_jacobian(J), case.slack)
    return E, connectivity(E, K or case.K)


class _Writers:
    """Incrementally flushed CSV outputs of a run."""

    def __init__(self, out: Path, case: CaseData):
        self.files = {
            name: open(out / name, "w", newline="")
            for name in ("counts.csv", "placements.csv", "trajectory.csv")
        }
        self.csv = {
            name: csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_NONE)
            for name, fh in self.files.items()
        }
        self.csv["counts.csv"].writerow(["t", "count"])
        self.csv["placements.csv"].writerow(["t", *(f"d_{i}" for i in case.bus_ids)])
        self.csv["trajectory.csv"].writerow(trajectory_header(case))

    def state(self, x: StateVector) -> None:
        self.csv["trajectory.csv"].writerow([x.t, *map(_fmt, x.values)])
        self.files["trajectory.csv"].flush()

    def record(self, rec: StepRecord) -> None:
        self.csv["counts.csv"].writerow([rec.t, rec.count])
        self.csv["placements.csv"].writerow([rec.t, *rec.d])
        for name in ("counts.csv", "placements.csv"):
            self.files[name].flush()

    def close(self) -> None:
        for fh in self.files.values():
            fh.close()


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Simulate ``config.steps`` states and solve the placement at each one.

    With ``config.out`` set, writes ``config.json``, ``counts.csv``,
    ``placements.csv``, ``trajectory.csv`` (+ ``trajectory.json``) and
    ``summary.json``. A failing step leaves the rows written so far plus a
    ``FAILED`` marker, then raises :class:`PipelineError`.
    """
    config.validate()
    case = load_experiment_case(config.case, config.format, config.strict)
    resolved = config.resolved(case)
    if resolved["window"] < 2 * case.N - 1:
        raise ConfigError(f"window {resolved['window']} is below 2N-1 = {2 * case.N - 1}")
    n_pairs = case.N * (case.N - 1) // 2
    if resolved["branches"] > n_pairs:
        raise ConfigError(f"branches {resolved['branches']} exceeds N(N-1)/2 = {n_pairs}")

    report = ExperimentReport(config=resolved)
    out = Path(config.out) if config.out else None
    writers = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "FAILED").unlink(missing_ok=True)
        _write_json(out / "config.json", resolved)
        _write_json(out / "trajectory.json", {"case": case.name, "slack": case.bus_ids[case.slack],
                                              "slack_angle": case.buses[case.slack].Va, **resolved})
        writers = _Writers(out, case)

    ybus = build_ybus(case)
    noise = NoiseModel(config.sigma2, config.seed)
    K = resolved["branches"]
    started = time.perf_counter()
    t, stage = 0, "initial state"
    try:
        x0 = StateVector.flat(case.N, case.slack) if config.flat_start else solve_powerflow(case, ybus=ybus)
        steps = simulate(case, config.steps, resolved["window"], noise, x0=x0,
                         vm_bounds=(config.vm_min, config.vm_max))
        while True:
            stage = "simulate"
            try:
                x, _ = next(steps)
            except StopIteration:
                break
            t = x.t
            if writers:
                writers.state(x)
            stage = "structure"
            _, C = structure_at(case, x, K, ybus)
            stage = "placement"
            problem = PlacementProblem.from_connectivity(C)
            sol: PlacementSolution = solve(problem, timeout=config.timeout)
            ok, missing = verify(problem, sol.d)
            if not ok:
                raise AssertionError(f"placement leaves buses {missing} unobserved")
            rec = StepRecord(
                t=t, count=sol.count, d=sol.d.astype(int).tolist(), branch_count=C.branch_count,
                tie=C.tie, clamped=x.clamped, optimal=sol.optimal, nodes=sol.nodes,
                solve_seconds=sol.elapsed,
            )
            report.records.append(rec)
            if writers:
                writers.record(rec)
            if not sol.optimal:
                log.warning("step %d: placement solver timed out, count %d not proven", t, sol.count)
    except Exception as exc:
        report.status = "failed"
        if isinstance(exc, SimulationError):
            t = exc.t
        err = PipelineError(t, stage, exc)
        if out is not None:
            writers.close()
            (out / "FAILED").write_text(f"{err}\n")
            _write_json(out / "summary.json", {**report.summary(), "error": str(err)})
        raise err from exc

    if out is not None:
        writers.close()
        summary = report.summary()
        summary["elapsed_seconds"] = round(time.perf_counter() - started, 3)
        _write_json(out / "summary.json", summary)
    return report


@dataclass
class TopologyReport:
    case_name: str
    count: int
    d: list[int]
    buses: list[int]
    optimal: bool
    nodes: int


def compare_topological(config: ExperimentConfig) -> TopologyReport:
    """Static placement on the physical network (adjacency plus unit diagonal)."""
    case = load_experiment_case(config.case, config.format, config.strict)
    problem = PlacementProblem.from_edges(case.N, case.edges())
    sol = solve(problem, timeout=config.timeout)
    return TopologyReport(
        case_name=case.name,
        count=sol.count,
        d=sol.d.astype(int).tolist(),
        buses=[case.bus_ids[k] for k in sol.buses],
        optimal=sol.optimal,
        nodes=sol.nodes,
    )


def write_matrix_csv(path: Path, M: np.ndarray, integer: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        for row in M:
            fh.write(",".join(str(int(v)) if integer else _fmt(v) for v in row) + "\n")
