"""Power-system case data: buses, branches and generators.

Two input formats are understood:

* the numeric-matrix subset of MATPOWER ``.m`` case files
  (``mpc.baseMVA``, ``mpc.bus``, ``mpc.branch``, ``mpc.gen``);
* a native JSON layout, documented in the README::

    {"name": ..., "base_MVA": 100.0,
     "buses": [{"id", "type", "Pd", "Qd", "Gs", "Bs", "Vm", "Va_deg", "base_kV"}],
     "branches": [{"from", "to", "r", "x", "b", "tap", "shift_deg", "status"}],
     "generators": [{"bus", "Pg", "Qg", "Vg", "status"}]}

``generators`` is optional in JSON. Without it every bus injects ``-Pd``
and regulated buses hold their ``Vm``.
"""

from __future__ import annotations

import enum
import io
import json
import math
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import IO, Union

__all__ = [
    "Branch",
    "BranchStatus",
    "Bus",
    "BusType",
    "CaseData",
    "CaseError",
    "CaseFormat",
    "CaseSyntaxError",
    "Generator",
    "NegativeReactanceWarning",
    "bundled_case",
    "case_to_json",
    "internal_index",
    "load_case",
    "read_case",
]

BUNDLED_CASES = ("case14", "case30", "case39", "case57", "case118")


class CaseError(ValueError):
    """Invalid or inconsistent case data."""


class CaseSyntaxError(CaseError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class NegativeReactanceWarning(UserWarning):
    """An in-service branch has x < 0; resistance distances may not form a metric."""


class CaseFormat(enum.Enum):
    MATPOWER = "m"
    JSON = "json"

    @classmethod
    def parse(cls, value: Union[str, "CaseFormat"]) -> "CaseFormat":
        if isinstance(value, CaseFormat):
            return value
        key = value.lower().lstrip(".")
        if key in ("m", "matpower", "matpowerm"):
            return cls.MATPOWER
        if key in ("json", "nativejson"):
            return cls.JSON
        raise CaseError(f"unknown case format {value!r}")


class BusType(enum.Enum):
    SLACK = "Slack"
    PV = "PV"
    PQ = "PQ"

    @classmethod
    def from_matpower(cls, code: float) -> "BusType":
        mapping = {1: cls.PQ, 2: cls.PV, 3: cls.SLACK}
        if code not in mapping:
            raise CaseError(f"unsupported MATPOWER bus type {code:g}")
        return mapping[int(code)]

    @classmethod
    def from_label(cls, label) -> "BusType":
        if isinstance(label, (int, float)) and not isinstance(label, bool):
            return cls.from_matpower(label)
        for member in cls:
            if str(label).lower() in (member.value.lower(), member.name.lower()):
                return member
        if str(label).lower() in ("ref", "reference", "swing"):
            return cls.SLACK
        raise CaseError(f"unknown bus type {label!r}")


class BranchStatus(enum.Enum):
    IN_SERVICE = "InService"
    OUT_OF_SERVICE = "OutOfService"

    @classmethod
    def from_label(cls, label) -> "BranchStatus":
        if isinstance(label, bool):
            return cls.IN_SERVICE if label else cls.OUT_OF_SERVICE
        if isinstance(label, (int, float)):
            return cls.IN_SERVICE if label != 0 else cls.OUT_OF_SERVICE
        for member in cls:
            if str(label).lower() in (member.value.lower(), member.name.lower()):
                return member
        if str(label).lower() in ("in", "on"):
            return cls.IN_SERVICE
        if str(label).lower() in ("out", "off"):
            return cls.OUT_OF_SERVICE
        raise CaseError(f"unknown branch status {label!r}")


@dataclass(frozen=True)
class Bus:
    id: int
    bus_type: BusType
    Pd: float = 0.0
    Qd: float = 0.0
    Gs: float = 0.0
    Bs: float = 0.0
    Vm: float = 1.0
    Va_deg: float = 0.0
    base_kV: float = 0.0

    @property
    def Va(self) -> float:
        """Voltage angle in radians."""
        return math.radians(self.Va_deg)


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tap_ratio: float = 1.0
    shift_deg: float = 0.0
    status: BranchStatus = BranchStatus.IN_SERVICE

    @property
    def phase_shift(self) -> float:
        """Phase shift in radians."""
        return math.radians(self.shift_deg)

    @property
    def in_service(self) -> bool:
        return self.status is BranchStatus.IN_SERVICE


@dataclass(frozen=True)
class Generator:
    bus: int
    Pg: float = 0.0
    Qg: float = 0.0
    Vg: float = 1.0
    in_service: bool = True


@dataclass(frozen=True)
class CaseData:
    """Validated, immutable network description.

    Bus order is the order of ``buses``; internal index ``k`` refers to
    ``buses[k]``. Use :func:`internal_index` to map external bus numbers.
    """

    name: str
    base_MVA: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...] = ()
    warnings: tuple[str, ...] = ()
    negative_reactance: bool = False
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {bus.id: k for k, bus in enumerate(self.buses)})

    @property
    def N(self) -> int:
        return len(self.buses)

    @property
    def K(self) -> int:
        return sum(1 for br in self.branches if br.in_service)

    @property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(bus.id for bus in self.buses)

    @property
    def slack(self) -> int:
        """Internal index of the slack bus."""
        return next(k for k, bus in enumerate(self.buses) if bus.bus_type is BusType.SLACK)

    @property
    def in_service_branches(self) -> tuple[Branch, ...]:
        return tuple(br for br in self.branches if br.in_service)

    def index_of(self, external_id: int) -> int:
        return internal_index(self, external_id)

    def edges(self) -> list[tuple[int, int]]:
        """Distinct undirected in-service bus pairs as internal indices, sorted."""
        pairs = set()
        for br in self.in_service_branches:
            i, j = self._index[br.from_bus], self._index[br.to_bus]
            pairs.add((min(i, j), max(i, j)))
        return sorted(pairs)

    @property
    def is_connected(self) -> bool:
        parent = list(range(self.N))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in self.edges():
            parent[find(i)] = find(j)
        return len({find(k) for k in range(self.N)}) == 1


def internal_index(case: CaseData, external_id: int) -> int:
    """Dense 0-based index of an external bus number."""
    try:
        return case._index[int(external_id)]
    except (KeyError, ValueError, TypeError):
        raise CaseError(f"unknown bus id {external_id}") from None


# ---------------------------------------------------------------------------
# validation


def _validate(name, base_MVA, buses, branches, generators, strict) -> CaseData:
    if not base_MVA > 0:
        raise CaseError(f"base_MVA must be positive, got {base_MVA}")
    if len(buses) < 2:
        raise CaseError(f"a case needs at least 2 buses, got {len(buses)}")

    seen = set()
    for bus in buses:
        if bus.id in seen:
            raise CaseError(f"duplicate bus id {bus.id}")
        seen.add(bus.id)
        if bus.id <= 0:
            raise CaseError(f"bus ids must be positive, got {bus.id}")
        if not bus.Vm > 0:
            raise CaseError(f"bus {bus.id}: Vm must be positive, got {bus.Vm}")
        # MATPOWER cases leave base_kV at 0 when unknown
        if bus.base_kV < 0:
            raise CaseError(f"bus {bus.id}: negative base_kV {bus.base_kV}")

    slack = [bus.id for bus in buses if bus.bus_type is BusType.SLACK]
    if not slack:
        raise CaseError("no slack bus")
    if len(slack) > 1:
        raise CaseError(f"multiple slack buses: {slack}")

    notes = []
    negative = False
    for k, br in enumerate(branches):
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                raise CaseError(f"branch {k + 1}: unknown bus id {end}")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {k + 1}: from_bus equals to_bus ({br.from_bus})")
        if not br.tap_ratio > 0:
            raise CaseError(f"branch {k + 1}: tap ratio must be positive, got {br.tap_ratio}")
        if not br.in_service:
            continue
        if br.r == 0 and br.x == 0:
            raise CaseError(f"branch {k + 1} ({br.from_bus}-{br.to_bus}): zero series impedance")
        if br.x < 0:
            msg = f"branch {k + 1} ({br.from_bus}-{br.to_bus}): negative series reactance x={br.x}"
            if strict:
                raise CaseError(msg)
            negative = True
            notes.append(msg)
            warnings.warn(msg, NegativeReactanceWarning, stacklevel=3)

    for gen in generators:
        if gen.bus not in seen:
            raise CaseError(f"generator at unknown bus id {gen.bus}")

    case = CaseData(
        name=name,
        base_MVA=float(base_MVA),
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
        warnings=tuple(notes),
        negative_reactance=negative,
    )
    if not case.is_connected:
        msg = "network is not connected"
        notes.append(msg)
        warnings.warn(msg, UserWarning, stacklevel=3)
        object.__setattr__(case, "warnings", tuple(notes))
    return case


# ---------------------------------------------------------------------------
# MATPOWER subset

_NAME = re.compile(r"[A-Za-z_]\w*")
_FUNCTION = re.compile(r"function\s+(?:\w+\s*=\s*)?([A-Za-z_]\w*)\s*;?\s*$")
_ASSIGN = re.compile(r"mpc\.([A-Za-z_]\w*)\s*=\s*")

# MATPOWER column positions (0-based)
_BUS_COLS = dict(BUS_I=0, BUS_TYPE=1, PD=2, QD=3, GS=4, BS=5, VM=7, VA=8, BASE_KV=9)
_BRANCH_COLS = dict(F_BUS=0, T_BUS=1, BR_R=2, BR_X=3, BR_B=4, TAP=8, SHIFT=9, BR_STATUS=10)
_GEN_COLS = dict(GEN_BUS=0, PG=1, QG=2, VG=5, GEN_STATUS=7)


def _strip_comment(line: str) -> str:
    quoted = False
    for pos, ch in enumerate(line):
        if ch == "'":
            quoted = not quoted
        elif ch == "%" and not quoted:
            return line[:pos]
    return line


def _parse_number(token: str, lineno: int, col: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise CaseSyntaxError(f"invalid number {token!r}", lineno, col) from None


def _matrix_rows(text: str, lineno: int, offset: int) -> list[list[float]]:
    rows = []
    for segment_match in re.finditer(r"[^;]+", text):
        row = []
        for tok in re.finditer(r"[^\s,]+", segment_match.group()):
            col = offset + segment_match.start() + tok.start() + 1
            row.append(_parse_number(tok.group(), lineno, col))
        if row:
            rows.append(row)
    return rows


def _parse_matpower(text: str) -> dict:
    """Return a dict of mpc fields: floats, strings, matrices (lists of rows)."""
    fields: dict = {}
    lines = text.splitlines()
    lineno = 0
    while lineno < len(lines):
        raw = lines[lineno]
        lineno += 1
        line = _strip_comment(raw)
        stripped = line.strip()
        if not stripped:
            continue
        indent = len(line) - len(line.lstrip())

        m = _FUNCTION.match(stripped)
        if m:
            fields.setdefault("__name__", m.group(1))
            continue
        if stripped in ("end", "return"):
            continue

        m = _ASSIGN.match(stripped)
        if not m:
            raise CaseSyntaxError(f"unsupported statement {stripped[:40]!r}", lineno, indent + 1)
        key = m.group(1)
        rest = stripped[m.end():]
        rest_col = indent + m.end()
        start_line = lineno

        if rest.startswith("["):
            rows = []
            body, col = rest[1:], rest_col + 1
            while True:
                close = body.find("]")
                chunk = body if close < 0 else body[:close]
                rows.extend(_matrix_rows(chunk, lineno, col))
                if close >= 0:
                    tail = body[close + 1:].strip()
                    if tail not in ("", ";"):
                        raise CaseSyntaxError(f"unexpected {tail!r} after matrix", lineno, col + close + 2)
                    break
                if lineno >= len(lines):
                    raise CaseSyntaxError(f"unterminated matrix mpc.{key}", start_line, rest_col + 1)
                body = _strip_comment(lines[lineno])
                col = 0
                lineno += 1
            widths = {len(r) for r in rows}
            if len(widths) > 1:
                raise CaseSyntaxError(f"mpc.{key} is not rectangular (row widths {sorted(widths)})", start_line, rest_col + 1)
            fields[key] = rows
        elif rest.startswith("{"):
            # cell arrays (bus names) are accepted and kept as raw strings
            items = []
            body = rest[1:]
            while True:
                close = body.find("}")
                chunk = body if close < 0 else body[:close]
                items.extend(re.findall(r"'([^']*)'", chunk))
                if close >= 0:
                    break
                if lineno >= len(lines):
                    raise CaseSyntaxError(f"unterminated cell array mpc.{key}", start_line, rest_col + 1)
                body = _strip_comment(lines[lineno])
                lineno += 1
            fields[key] = items
        elif rest.startswith("'"):
            m2 = re.match(r"'([^']*)'\s*;?\s*$", rest)
            if not m2:
                raise CaseSyntaxError("malformed string literal", lineno, rest_col + 1)
            fields[key] = m2.group(1)
        else:
            m2 = re.match(r"([^;\s]+)\s*;?\s*$", rest)
            if not m2:
                raise CaseSyntaxError(f"unsupported expression {rest[:40]!r}", lineno, rest_col + 1)
            fields[key] = _parse_number(m2.group(1), lineno, rest_col + 1)
    return fields


def _require_matrix(fields: dict, key: str, min_cols: int) -> list[list[float]]:
    if key not in fields:
        raise CaseError(f"missing mpc.{key}")
    rows = fields[key]
    if not isinstance(rows, list) or (rows and not isinstance(rows[0], list)):
        raise CaseError(f"mpc.{key} must be a numeric matrix")
    if rows and len(rows[0]) < min_cols:
        raise CaseError(f"mpc.{key} has {len(rows[0])} columns, need at least {min_cols}")
    return rows


def _case_from_matpower(text: str, strict: bool) -> CaseData:
    fields = _parse_matpower(text)
    base = fields.get("baseMVA")
    if not isinstance(base, float):
        raise CaseError("missing scalar mpc.baseMVA")

    c = _BUS_COLS
    buses = []
    for row in _require_matrix(fields, "bus", c["BASE_KV"] + 1):
        if row[c["BUS_I"]] != int(row[c["BUS_I"]]):
            raise CaseError(f"non-integer bus id {row[c['BUS_I']]}")
        buses.append(Bus(
            id=int(row[c["BUS_I"]]),
            bus_type=BusType.from_matpower(row[c["BUS_TYPE"]]),
            Pd=row[c["PD"]], Qd=row[c["QD"]], Gs=row[c["GS"]], Bs=row[c["BS"]],
            Vm=row[c["VM"]], Va_deg=row[c["VA"]], base_kV=row[c["BASE_KV"]],
        ))

    c = _BRANCH_COLS
    branches = []
    for row in _require_matrix(fields, "branch", c["BR_STATUS"] + 1):
        tap = row[c["TAP"]]
        branches.append(Branch(
            from_bus=int(row[c["F_BUS"]]), to_bus=int(row[c["T_BUS"]]),
            r=row[c["BR_R"]], x=row[c["BR_X"]], b=row[c["BR_B"]],
            tap_ratio=tap if tap != 0 else 1.0,
            shift_deg=row[c["SHIFT"]],
            status=BranchStatus.from_label(row[c["BR_STATUS"]]),
        ))

    c = _GEN_COLS
    generators = []
    if "gen" in fields:
        for row in _require_matrix(fields, "gen", c["GEN_STATUS"] + 1):
            generators.append(Generator(
                bus=int(row[c["GEN_BUS"]]), Pg=row[c["PG"]], Qg=row[c["QG"]],
                Vg=row[c["VG"]], in_service=row[c["GEN_STATUS"]] > 0,
            ))

    return _validate(fields.get("__name__", "case"), base, buses, branches, generators, strict)


# ---------------------------------------------------------------------------
# native JSON


def _case_from_json(text: str, strict: bool) -> CaseData:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise CaseError("JSON case must be an object")
    try:
        buses = [
            Bus(
                id=int(b["id"]), bus_type=BusType.from_label(b["type"]),
                Pd=float(b.get("Pd", 0.0)), Qd=float(b.get("Qd", 0.0)),
                Gs=float(b.get("Gs", 0.0)), Bs=float(b.get("Bs", 0.0)),
                Vm=float(b.get("Vm", 1.0)), Va_deg=float(b.get("Va_deg", 0.0)),
                base_kV=float(b.get("base_kV", 0.0)),
            )
            for b in doc["buses"]
        ]
        branches = [
            Branch(
                from_bus=int(br["from"]), to_bus=int(br["to"]),
                r=float(br["r"]), x=float(br["x"]), b=float(br.get("b", 0.0)),
                tap_ratio=float(br.get("tap", 1.0)) or 1.0,
                shift_deg=float(br.get("shift_deg", 0.0)),
                status=BranchStatus.from_label(br.get("status", "InService")),
            )
            for br in doc["branches"]
        ]
        generators = [
            Generator(
                bus=int(g["bus"]), Pg=float(g.get("Pg", 0.0)), Qg=float(g.get("Qg", 0.0)),
                Vg=float(g.get("Vg", 1.0)), in_service=BranchStatus.from_label(g.get("status", 1)) is BranchStatus.IN_SERVICE,
            )
            for g in doc.get("generators", [])
        ]
        name = str(doc.get("name", "case"))
        base = float(doc.get("base_MVA", 100.0))
    except KeyError as exc:
        raise CaseError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CaseError):
            raise
        raise CaseError(f"malformed JSON case: {exc}") from None
    return _validate(name, base, buses, branches, generators, strict)


def case_to_json(case: CaseData, indent: int | None = 2) -> str:
    doc = {
        "name": case.name,
        "base_MVA": case.base_MVA,
        "buses": [
            {"id": b.id, "type": b.bus_type.value, "Pd": b.Pd, "Qd": b.Qd, "Gs": b.Gs, "Bs": b.Bs,
             "Vm": b.Vm, "Va_deg": b.Va_deg, "base_kV": b.base_kV}
            for b in case.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b,
             "tap": br.tap_ratio, "shift_deg": br.shift_deg, "status": br.status.value}
            for br in case.branches
        ],
        "generators": [
            {"bus": g.bus, "Pg": g.Pg, "Qg": g.Qg, "Vg": g.Vg, "status": int(g.in_service)}
            for g in case.generators
        ],
    }
    return json.dumps(doc, indent=indent)


# ---------------------------------------------------------------------------
# entry points

Source = Union[bytes, str, IO[bytes], IO[str]]


def load_case(source: Source, format: Union[str, CaseFormat], strict: bool = False) -> CaseData:
    """Parse and validate a case from raw bytes, text or an open stream.

    Negative series reactance on an in-service branch warns and sets
    ``CaseData.negative_reactance``; with ``strict=True`` it raises.
    """
    fmt = CaseFormat.parse(format)
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError:
            source = source.decode("latin-1")
    if fmt is CaseFormat.MATPOWER:
        return _case_from_matpower(source, strict)
    return _case_from_json(source, strict)


def read_case(path: Union[str, Path], format: Union[str, CaseFormat, None] = None,
              strict: bool = False) -> CaseData:
    """Load a case file; the format defaults to the file suffix (``.m`` or ``.json``)."""
    path = Path(path)
    if format is None:
        format = path.suffix or "m"
    with open(path, "rb") as fh:
        return load_case(fh, format, strict=strict)


def bundled_case(name: str) -> CaseData:
    """One of the packaged MATPOWER cases: ``case14`` (or ``ieee14``, ``14``) up to ``case118``."""
    key = str(name).lower().removeprefix("ieee").removeprefix("case").lstrip("-_")
    fname = f"case{key}.m"
    if fname[:-2] not in BUNDLED_CASES:
        raise CaseError(f"no bundled case {name!r}; available: {', '.join(BUNDLED_CASES)}")
    data = resources.files("gridsentry").joinpath("data").joinpath(fname).read_bytes()
    return load_case(io.BytesIO(data), CaseFormat.MATPOWER)
