"""Grid data model: case records, case-file ingestion, admittance, area partitions.

Conventions
-----------
* Loads and generator set-points are stored in physical units (MW / MVAr),
  exactly as they appear in case files.  Everything downstream of the data
  model works in per-unit on ``base_mva``; the conversion happens when a
  :class:`~gridloop.powerflow.Disturbance` or input vector is built.
* Branch shunt/charging values and bus shunts are per-unit.
* A branch MVA rating (MATPOWER ``rateA``) is converted at parse time to a
  current-magnitude limit at 1.0 p.u. voltage, so output constraints stay
  linear in the measured current magnitudes.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import re
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import (
    DisconnectedArea,
    DisconnectedGraph,
    MalformedTable,
    MultipleSlack,
    UnassignedBus,
    UnknownBusReference,
)

log = logging.getLogger(__name__)


class BusKind(enum.Enum):
    SLACK = "Slack"
    PV = "PV"
    PQ = "PQ"


@dataclass(frozen=True)
class Bus:
    """A single network node."""

    id: int
    kind: BusKind
    p_load: float   # MW
    q_load: float   # MVAr
    shunt_g: float  # p.u.
    shunt_b: float  # p.u.
    v_min: float    # p.u.
    v_max: float    # p.u.
    base_kv: float  # kV

    def __post_init__(self):
        if self.v_min <= 0:
            raise ValueError(f"bus {self.id}: v_min must be positive, got {self.v_min}")
        if self.v_min > self.v_max:
            raise ValueError(f"bus {self.id}: v_min {self.v_min} exceeds v_max {self.v_max}")


@dataclass(frozen=True)
class Branch:
    """A line or transformer between two buses."""

    from_bus: int
    to_bus: int
    r: float              # p.u.
    x: float              # p.u.
    b_charging: float     # p.u. (total line charging)
    current_limit: float  # p.u., 0 = unlimited
    tap_ratio: float = 1.0
    phase_shift: float = 0.0  # rad
    in_service: bool = True

    def __post_init__(self):
        if self.r < 0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: r must be >= 0")
        if self.x == 0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: x must be nonzero")
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch endpoints coincide at bus {self.from_bus}")
        if self.current_limit < 0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: negative current limit")

    def admittance_terms(self) -> tuple[complex, complex, complex, complex]:
        """Two-port admittance entries (yff, yft, ytf, ytt), ignoring status."""
        y = 1.0 / complex(self.r, self.x)
        ysh = 0.5j * self.b_charging
        tau = self.tap_ratio if self.tap_ratio != 0 else 1.0
        shift = complex(math.cos(self.phase_shift), math.sin(self.phase_shift))
        yff = (y + ysh) / (tau * tau)
        yft = -y / (tau * shift.conjugate())
        ytf = -y / (tau * shift)
        ytt = y + ysh
        return yff, yft, ytf, ytt


@dataclass(frozen=True)
class Generator:
    """A generating unit; controllable units are the curtailable renewables."""

    bus: int
    p_set: float   # MW
    q_set: float   # MVAr
    p_min: float   # MW
    p_max: float   # MW
    q_min: float   # MVAr
    q_max: float   # MVAr
    v_set: float   # p.u., used when the unit sits on a PV or slack bus
    controllable: bool = False
    p_available: float = 0.0   # MW, renewable headroom
    cost_curtail: float = 0.0  # currency / MW^2
    cost_q: float = 0.0        # currency / MVAr^2

    def __post_init__(self):
        if not (self.p_min <= self.p_set <= self.p_max):
            raise ValueError(
                f"generator at bus {self.bus}: p_set {self.p_set} outside "
                f"[{self.p_min}, {self.p_max}]"
            )
        if not (self.q_min <= self.q_set <= self.q_max):
            raise ValueError(
                f"generator at bus {self.bus}: q_set {self.q_set} outside "
                f"[{self.q_min}, {self.q_max}]"
            )
        if self.p_available < 0:
            raise ValueError(f"generator at bus {self.bus}: negative p_available")


@dataclass(frozen=True)
class GridCase:
    """A validated static network description."""

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]

    def __post_init__(self):
        # Accept lists for convenience, store tuples so the case stays hashable.
        if isinstance(self.buses, list):
            object.__setattr__(self, "buses", tuple(self.buses))
        if isinstance(self.branches, list):
            object.__setattr__(self, "branches", tuple(self.branches))
        if isinstance(self.generators, list):
            object.__setattr__(self, "generators", tuple(self.generators))
        _validate_case(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    def bus_positions(self) -> dict[int, int]:
        """Map bus id -> row position in the bus table."""
        return {b.id: i for i, b in enumerate(self.buses)}

    def slack_position(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)


def _adjacency(case: GridCase) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {b.id: set() for b in case.buses}
    for br in case.branches:
        if br.in_service:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
    return adj


def _reachable(adj: dict[int, set[int]], start: int, allowed: set[int]) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        node = stack.pop()
        for nxt in adj[node]:
            if nxt in allowed and nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def _validate_case(case: GridCase) -> None:
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise MalformedTable("duplicate bus ids in case")
    id_set = set(ids)

    n_slack = sum(1 for b in case.buses if b.kind is BusKind.SLACK)
    if n_slack != 1:
        raise MultipleSlack(f"expected exactly one slack bus, found {n_slack}")

    for br in case.branches:
        if br.from_bus not in id_set or br.to_bus not in id_set:
            raise UnknownBusReference(
                f"branch {br.from_bus}-{br.to_bus} references a missing bus"
            )
    for gen in case.generators:
        if gen.bus not in id_set:
            raise UnknownBusReference(f"generator references missing bus {gen.bus}")

    if case.n_bus > 1:
        adj = _adjacency(case)
        seen = _reachable(adj, ids[0], id_set)
        if seen != id_set:
            missing = sorted(id_set - seen)
            raise DisconnectedGraph(
                f"buses {missing} are not connected to bus {ids[0]} over "
                "in-service branches"
            )


# ---------------------------------------------------------------------------
# MATPOWER-style ingestion
# ---------------------------------------------------------------------------

# Standard column counts; extra columns beyond these are tolerated.
_BUS_COLS = 13
_GEN_COLS = 10
_BRANCH_COLS = 13

_TYPE_TO_KIND = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}


def _strip_comment(line: str) -> str:
    return line.split("%", 1)[0]


def _parse_tables(text: str) -> dict[str, object]:
    """Extract ``mpc.<name> = ...;`` scalar and matrix assignments."""
    clean = "\n".join(_strip_comment(line) for line in text.splitlines())
    tables: dict[str, object] = {}
    for m in re.finditer(r"mpc\.(\w+)\s*=\s*(\[[^\]]*\]|[^;\[]+);", clean, re.DOTALL):
        name, body = m.group(1), m.group(2).strip()
        if body.startswith("["):
            rows = []
            for raw in re.split(r"[;\n]", body[1:-1]):
                parts = raw.split()
                if parts:
                    try:
                        rows.append([float(v) for v in parts])
                    except ValueError as exc:
                        raise MalformedTable(f"table {name}: non-numeric row {raw!r}") from exc
            tables[name] = rows
        else:
            try:
                tables[name] = float(body)
            except ValueError:
                tables[name] = body.strip("'\"")
    return tables


def parse_matpower_case(text) -> GridCase:
    """Parse a MATPOWER-style case into a validated :class:`GridCase`.

    Parameters
    ----------
    text : str or file-like
        Case text containing ``baseMVA`` plus ``bus``, ``gen`` and ``branch``
        numeric tables with the standard column order.

    Raises
    ------
    MalformedTable, UnknownBusReference, MultipleSlack, DisconnectedGraph
    """
    if hasattr(text, "read"):
        text = text.read()
    tables = _parse_tables(text)

    for required in ("baseMVA", "bus", "gen", "branch"):
        if required not in tables:
            raise MalformedTable(f"case is missing mpc.{required}")
    base = float(tables["baseMVA"])  # type: ignore[arg-type]
    if base <= 0:
        raise MalformedTable(f"baseMVA must be positive, got {base}")

    known = {"version", "baseMVA", "bus", "gen", "branch", "gencost", "bus_name"}
    for extra in sorted(set(tables) - known):
        log.warning("ignoring unknown MATPOWER field mpc.%s", extra)

    buses = []
    bus_kind: dict[int, BusKind] = {}
    for row in tables["bus"]:  # type: ignore[union-attr]
        if len(row) < _BUS_COLS:
            raise MalformedTable(f"bus row has {len(row)} columns, expected >= {_BUS_COLS}")
        if len(row) > _BUS_COLS:
            log.warning("bus row for bus %d: ignoring %d extra columns",
                        int(row[0]), len(row) - _BUS_COLS)
        bus_type = int(row[1])
        if bus_type not in _TYPE_TO_KIND:
            raise MalformedTable(f"bus {int(row[0])}: unsupported bus type {bus_type}")
        bus = Bus(
            id=int(row[0]),
            kind=_TYPE_TO_KIND[bus_type],
            p_load=row[2],
            q_load=row[3],
            shunt_g=row[4] / base,
            shunt_b=row[5] / base,
            v_min=row[12],
            v_max=row[11],
            base_kv=row[9],
        )
        buses.append(bus)
        bus_kind[bus.id] = bus.kind

    generators = []
    for row in tables["gen"]:  # type: ignore[union-attr]
        if len(row) < _GEN_COLS:
            raise MalformedTable(f"gen row has {len(row)} columns, expected >= {_GEN_COLS}")
        if int(row[7]) == 0:
            log.info("dropping out-of-service generator at bus %d", int(row[0]))
            continue
        gen_bus = int(row[0])
        # Units on PQ buses are the curtailable renewables; PV/slack machines
        # keep their dispatch and are treated as part of the disturbance.
        controllable = bus_kind.get(gen_bus) is BusKind.PQ
        pg = row[1]
        generators.append(Generator(
            bus=gen_bus,
            p_set=pg,
            q_set=row[2],
            p_min=min(row[9], pg),
            p_max=max(row[8], pg),
            q_min=row[4],
            q_max=row[3],
            v_set=row[5] if row[5] > 0 else 1.0,
            controllable=controllable,
            p_available=max(pg, 0.0) if controllable else 0.0,
            cost_curtail=1.0 if controllable else 0.0,
            cost_q=0.01 if controllable else 0.0,
        ))

    branches = []
    for row in tables["branch"]:  # type: ignore[union-attr]
        if len(row) < _BRANCH_COLS:
            raise MalformedTable(
                f"branch row has {len(row)} columns, expected >= {_BRANCH_COLS}"
            )
        branches.append(Branch(
            from_bus=int(row[0]),
            to_bus=int(row[1]),
            r=row[2],
            x=row[3],
            b_charging=row[4],
            current_limit=row[5] / base,   # rateA MVA -> current at 1.0 p.u. voltage
            tap_ratio=row[8] if row[8] != 0 else 1.0,
            phase_shift=math.radians(row[9]),
            in_service=int(row[10]) != 0,
        ))

    return GridCase(base_mva=base, buses=tuple(buses),
                    branches=tuple(branches), generators=tuple(generators))


# ---------------------------------------------------------------------------
# Canonical JSON schema
# ---------------------------------------------------------------------------

_BUS_FIELDS = ("id", "kind", "p_load", "q_load", "shunt_g", "shunt_b",
               "v_min", "v_max", "base_kv")
_BRANCH_FIELDS = ("from_bus", "to_bus", "r", "x", "b_charging", "current_limit",
                  "tap_ratio", "phase_shift", "in_service")
_GEN_FIELDS = ("bus", "p_set", "q_set", "p_min", "p_max", "q_min", "q_max",
               "v_set", "controllable", "p_available", "cost_curtail", "cost_q")


def _json_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, BusKind):
        return json.dumps(v.value)
    return json.dumps(v)


def _json_record(obj, field_names) -> str:
    parts = [f'"{name}": {_json_value(getattr(obj, name))}' for name in field_names]
    return "{" + ", ".join(parts) + "}"


def emit_json_case(case: GridCase) -> str:
    """Serialize a case to canonical JSON.

    Floats are printed with 17 significant digits so that
    ``parse_json_case(emit_json_case(c))`` reproduces ``c`` field-for-field
    and re-emission is byte-identical.
    """
    lines = ["{"]
    lines.append(f'  "base_mva": {_json_value(case.base_mva)},')
    for key, records, fields_ in (("buses", case.buses, _BUS_FIELDS),
                                  ("branches", case.branches, _BRANCH_FIELDS),
                                  ("generators", case.generators, _GEN_FIELDS)):
        lines.append(f'  "{key}": [')
        for i, rec in enumerate(records):
            comma = "," if i + 1 < len(records) else ""
            lines.append(f"    {_json_record(rec, fields_)}{comma}")
        comma = "," if key != "generators" else ""
        lines.append(f"  ]{comma}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def parse_json_case(text) -> GridCase:
    """Parse canonical JSON produced by :func:`emit_json_case`."""
    if hasattr(text, "read"):
        text = text.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedTable(f"invalid JSON case: {exc}") from exc

    def need(mapping, key, where):
        if key not in mapping:
            raise MalformedTable(f"{where} is missing field {key!r}")
        return mapping[key]

    for key in ("base_mva", "buses", "branches", "generators"):
        need(doc, key, "case")

    buses = tuple(
        Bus(id=int(need(b, "id", "bus")),
            kind=BusKind(need(b, "kind", "bus")),
            p_load=float(need(b, "p_load", "bus")),
            q_load=float(need(b, "q_load", "bus")),
            shunt_g=float(need(b, "shunt_g", "bus")),
            shunt_b=float(need(b, "shunt_b", "bus")),
            v_min=float(need(b, "v_min", "bus")),
            v_max=float(need(b, "v_max", "bus")),
            base_kv=float(need(b, "base_kv", "bus")))
        for b in doc["buses"]
    )
    branches = tuple(
        Branch(from_bus=int(need(r, "from_bus", "branch")),
               to_bus=int(need(r, "to_bus", "branch")),
               r=float(need(r, "r", "branch")),
               x=float(need(r, "x", "branch")),
               b_charging=float(need(r, "b_charging", "branch")),
               current_limit=float(need(r, "current_limit", "branch")),
               tap_ratio=float(need(r, "tap_ratio", "branch")),
               phase_shift=float(need(r, "phase_shift", "branch")),
               in_service=bool(need(r, "in_service", "branch")))
        for r in doc["branches"]
    )
    generators = tuple(
        Generator(bus=int(need(g, "bus", "generator")),
                  p_set=float(need(g, "p_set", "generator")),
                  q_set=float(need(g, "q_set", "generator")),
                  p_min=float(need(g, "p_min", "generator")),
                  p_max=float(need(g, "p_max", "generator")),
                  q_min=float(need(g, "q_min", "generator")),
                  q_max=float(need(g, "q_max", "generator")),
                  v_set=float(need(g, "v_set", "generator")),
                  controllable=bool(need(g, "controllable", "generator")),
                  p_available=float(need(g, "p_available", "generator")),
                  cost_curtail=float(need(g, "cost_curtail", "generator")),
                  cost_q=float(need(g, "cost_q", "generator")))
        for g in doc["generators"]
    )
    return GridCase(base_mva=float(doc["base_mva"]), buses=buses,
                    branches=branches, generators=generators)


# ---------------------------------------------------------------------------
# Admittance matrix
# ---------------------------------------------------------------------------

def build_admittance(case: GridCase) -> sp.csr_matrix:
    """Build the complex bus admittance matrix (n_bus x n_bus, sparse CSR).

    Out-of-service branches contribute nothing; bus shunts sit on the
    diagonal.  Structural nonzeros are one diagonal entry per bus plus two
    off-diagonal entries per distinct in-service branch pair.
    """
    pos = case.bus_positions()
    n = case.n_bus
    rows: list[int] = list(range(n))
    cols: list[int] = list(range(n))
    vals: list[complex] = [complex(b.shunt_g, b.shunt_b) for b in case.buses]

    for br in case.branches:
        if not br.in_service:
            continue
        f, t = pos[br.from_bus], pos[br.to_bus]
        yff, yft, ytf, ytt = br.admittance_terms()
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [yff, yft, ytf, ytt]

    y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)
    return y.tocsr()


# ---------------------------------------------------------------------------
# Area partitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AreaPartition:
    """Assignment of buses to control areas, with derived index sets.

    ``controllable_by_area[i]`` lists generator-table indices of controllable
    units belonging to area ``i + 1``; ``tie_lines`` lists branch-table
    indices whose endpoints lie in distinct areas.
    """

    n_areas: int
    bus_area: dict[int, int]
    controllable_by_area: tuple[tuple[int, ...], ...]
    tie_lines: tuple[int, ...]

    @classmethod
    def build(cls, case: GridCase, bus_area: dict[int, int],
              n_areas: int | None = None) -> "AreaPartition":
        """Construct and validate a partition for ``case``."""
        bus_area = {int(k): int(v) for k, v in bus_area.items()}
        for bus in case.buses:
            if bus.id not in bus_area:
                raise UnassignedBus(f"bus {bus.id} has no area assignment")
        areas = sorted(set(bus_area.values()))
        if n_areas is None:
            n_areas = len(areas)
        if areas != list(range(1, n_areas + 1)):
            raise UnassignedBus(
                f"area indices must be 1..{n_areas}, got {areas}"
            )

        adj = _adjacency(case)
        for a in areas:
            members = {b for b, aa in bus_area.items() if aa == a}
            start = next(iter(sorted(members)))
            if _reachable(adj, start, members) != members:
                raise DisconnectedArea(f"area {a} does not induce a connected subgraph")

        controllable = tuple(
            tuple(g for g, gen in enumerate(case.generators)
                  if gen.controllable and bus_area[gen.bus] == a)
            for a in range(1, n_areas + 1)
        )
        ties = tuple(
            i for i, br in enumerate(case.branches)
            if bus_area[br.from_bus] != bus_area[br.to_bus]
        )
        return cls(n_areas=n_areas, bus_area=bus_area,
                   controllable_by_area=controllable, tie_lines=ties)

    @classmethod
    def single_area(cls, case: GridCase) -> "AreaPartition":
        return cls.build(case, {b.id: 1 for b in case.buses}, n_areas=1)


def validate_partition(case: GridCase, partition: AreaPartition) -> tuple[int, ...]:
    """Re-validate a partition against a case; returns the tie-line indices."""
    rebuilt = AreaPartition.build(case, partition.bus_area, partition.n_areas)
    return rebuilt.tie_lines


def area_output_indices(case: GridCase, partition: AreaPartition) -> list[np.ndarray]:
    """Global output indices observed by each area.

    The global output ordering is all bus voltage magnitudes (bus-table
    order) followed by all branch current magnitudes (branch-table order).
    An area observes the voltages of its own buses and the currents of every
    branch with at least one endpoint inside the area, so tie-line currents
    appear in the output sets of both adjacent areas.
    """
    n_bus = case.n_bus
    out: list[np.ndarray] = []
    for a in range(1, partition.n_areas + 1):
        idx = [i for i, b in enumerate(case.buses) if partition.bus_area[b.id] == a]
        idx += [n_bus + i for i, br in enumerate(case.branches)
                if partition.bus_area[br.from_bus] == a
                or partition.bus_area[br.to_bus] == a]
        out.append(np.asarray(idx, dtype=int))
    return out
