"""Network model: MATPOWER case parsing and branch/bus admittance matrices."""
from __future__ import annotations

import gzip
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class CaseError(ValueError):
    """Base class for case-file problems."""


class ParseError(CaseError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class ValidationError(CaseError):
    pass


@dataclass(frozen=True)
class BusRecord:
    id: int
    type: int
    Gs: float
    Bs: float
    Vm: float
    Va: float
    base_kV: float


@dataclass(frozen=True)
class BranchRecord:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tau: float = 1.0
    shift: float = 0.0
    status: bool = True
    row: int = 0  # 1-based row in the case branch table; external branch id


@dataclass(frozen=True, eq=False)
class Network:
    buses: tuple[BusRecord, ...]
    branches: tuple[BranchRecord, ...]
    base_MVA: float
    name: str = ""
    id_map: dict[int, int] = field(default=None, repr=False)  # bus id -> internal index

    def __post_init__(self):
        if self.id_map is None:
            object.__setattr__(self, "id_map", {b.id: i for i, b in enumerate(self.buses)})
        _validate(self)

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def l(self) -> int:  # noqa: E743
        return len(self.branches)

    @cached_property
    def from_idx(self) -> np.ndarray:
        return np.array([self.id_map[br.from_bus] for br in self.branches], dtype=np.int64)

    @cached_property
    def to_idx(self) -> np.ndarray:
        return np.array([self.id_map[br.to_bus] for br in self.branches], dtype=np.int64)

    @cached_property
    def branch_row_map(self) -> dict[int, int]:
        return {br.row: k for k, br in enumerate(self.branches)}

    @cached_property
    def admittances(self) -> tuple[sp.csc_matrix, sp.csc_matrix, sp.csc_matrix]:
        return build_admittances(self)

    @property
    def Ybus(self) -> sp.csc_matrix:
        return self.admittances[0]

    @property
    def Yf(self) -> sp.csc_matrix:
        return self.admittances[1]

    @property
    def Yt(self) -> sp.csc_matrix:
        return self.admittances[2]

    @cached_property
    def Vm(self) -> np.ndarray:
        return np.array([b.Vm for b in self.buses])

    @cached_property
    def Va(self) -> np.ndarray:
        """Stored bus angles in radians."""
        return np.deg2rad([b.Va for b in self.buses])


def _validate(net: Network) -> None:
    if not net.base_MVA > 0:
        raise ValidationError(f"baseMVA must be positive, got {net.base_MVA}")
    if len(net.id_map) != len(net.buses):
        raise ValidationError("duplicate bus ids")
    for b in net.buses:
        if b.Vm is not None and not b.Vm > 0:
            raise ValidationError(f"bus {b.id}: Vm must be positive")
    for br in net.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in net.id_map:
                raise ValidationError(f"branch row {br.row} references unknown bus {end}")
        if br.r == 0 and br.x == 0:
            raise ValidationError(f"branch row {br.row} has zero impedance")
    n = len(net.buses)
    if n == 0:
        raise ValidationError("network has no buses")
    f = [net.id_map[br.from_bus] for br in net.branches]
    t = [net.id_map[br.to_bus] for br in net.branches]
    graph = sp.coo_matrix((np.ones(len(f)), (f, t)), shape=(n, n))
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp > 1:
        raise ValidationError(f"in-service network is disconnected ({ncomp} components)")


_ASSIGN_MATRIX = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\[(.*)$")
_ASSIGN_SCALAR = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([^;\[\{]+);?\s*$")
_ASSIGN_CELL = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\{")

BUS_COLS = 13
BRANCH_COLS = 11


def _parse_tables(text: str) -> tuple[dict[str, str], dict[str, list[tuple[int, list[float]]]]]:
    scalars: dict[str, str] = {}
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    current: str | None = None
    in_cell = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0]
        if in_cell:
            if "}" in line:
                in_cell = False
            continue
        if current is None:
            m = _ASSIGN_MATRIX.match(line)
            if m:
                current = m.group(1)
                tables[current] = []
                line = m.group(2)
            elif _ASSIGN_CELL.match(line):
                in_cell = "}" not in line
                continue
            else:
                m = _ASSIGN_SCALAR.match(line)
                if m:
                    scalars[m.group(1)] = m.group(2).strip().strip("'\"")
                continue
        closed = "]" in line
        if closed:
            line = line.split("]", 1)[0]
        for chunk in line.split(";"):
            tokens = chunk.replace(",", " ").split()
            if not tokens:
                continue
            try:
                row = [float(tok) for tok in tokens]
            except ValueError:
                raise ParseError(f"non-numeric entry in mpc.{current}: {chunk.strip()!r}", lineno) from None
            tables[current].append((lineno, row))
        if closed:
            current = None
    if current is not None:
        raise ParseError(f"unterminated table mpc.{current}")
    return scalars, tables


def parse_case(text: str, name: str = "") -> Network:
    """Parse MATPOWER case text into a :class:`Network`.

    Generator, cost and DC-line tables are read but discarded; out-of-service
    branches are dropped.
    """
    scalars, tables = _parse_tables(text)
    if "baseMVA" not in scalars:
        raise ParseError("missing mpc.baseMVA")
    try:
        base_mva = float(scalars["baseMVA"])
    except ValueError:
        raise ParseError(f"bad baseMVA value {scalars['baseMVA']!r}") from None
    for key in ("bus", "branch"):
        if key not in tables:
            raise ParseError(f"missing mpc.{key} table")

    buses = []
    for lineno, row in tables["bus"]:
        if len(row) < BUS_COLS:
            raise ParseError(f"bus row has {len(row)} columns, need {BUS_COLS}", lineno)
        if row[0] != int(row[0]) or row[0] <= 0:
            raise ParseError(f"bus id must be a positive integer, got {row[0]}", lineno)
        buses.append(BusRecord(id=int(row[0]), type=int(row[1]), Gs=row[4], Bs=row[5],
                               Vm=row[7], Va=row[8], base_kV=row[9]))

    branches = []
    for k, (lineno, row) in enumerate(tables["branch"], start=1):
        if len(row) < BRANCH_COLS:
            raise ParseError(f"branch row has {len(row)} columns, need {BRANCH_COLS}", lineno)
        if row[10] == 0:
            continue
        tau = row[8] if row[8] != 0 else 1.0
        branches.append(BranchRecord(from_bus=int(row[0]), to_bus=int(row[1]), r=row[2], x=row[3],
                                     b=row[4], tau=tau, shift=row[9], status=True, row=k))

    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate bus ids")
    return Network(buses=tuple(buses), branches=tuple(branches), base_MVA=base_mva, name=name)


def load_case(path_or_name: str | Path) -> Network:
    """Load a case from a path, or by name from the bundled data directory."""
    path = Path(path_or_name)
    if not path.exists():
        data = resources.files("phasesync_se") / "data"
        for suffix in ("", ".m", ".m.gz"):
            candidate = data / f"{path_or_name}{suffix}"
            if candidate.is_file():
                path = Path(str(candidate))
                break
        else:
            raise FileNotFoundError(f"no case file or bundled case named {path_or_name!r}")
    if path.suffix == ".gz":
        with gzip.open(path, "rt", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = path.read_text(encoding="utf-8", errors="replace")
    name = path.name.split(".")[0]
    return parse_case(text, name=name)


def branch_blocks(net: Network) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-branch pi-model admittances (y_ff, y_ft, y_tf, y_tt)."""
    r = np.array([br.r for br in net.branches])
    x = np.array([br.x for br in net.branches])
    b = np.array([br.b for br in net.branches])
    tau = np.array([br.tau for br in net.branches])
    shift = np.deg2rad([br.shift for br in net.branches])
    ys = 1.0 / (r + 1j * x)
    t = tau * np.exp(1j * shift)
    ytt = ys + 1j * b / 2
    yff = ytt / (t * np.conj(t))
    yft = -ys / np.conj(t)
    ytf = -ys / t
    return yff, yft, ytf, ytt


def incidence(net: Network) -> tuple[sp.csc_matrix, sp.csc_matrix]:
    """From/to selector matrices Df, Dt (l x n) with Df[k, alpha(k)] = 1."""
    rows = np.arange(net.l)
    ones = np.ones(net.l)
    Df = sp.csc_matrix((ones, (rows, net.from_idx)), shape=(net.l, net.n))
    Dt = sp.csc_matrix((ones, (rows, net.to_idx)), shape=(net.l, net.n))
    return Df, Dt


def build_admittances(net: Network) -> tuple[sp.csc_matrix, sp.csc_matrix, sp.csc_matrix]:
    """Return (Ybus, Yf, Yt) as complex CSC matrices."""
    n, l = net.n, net.l
    yff, yft, ytf, ytt = branch_blocks(net)
    f, t = net.from_idx, net.to_idx
    rows = np.r_[np.arange(l), np.arange(l)]
    Yf = sp.csc_matrix((np.r_[yff, yft], (rows, np.r_[f, t])), shape=(l, n))
    Yt = sp.csc_matrix((np.r_[ytf, ytt], (rows, np.r_[f, t])), shape=(l, n))
    ysh = np.array([complex(bus.Gs, bus.Bs) for bus in net.buses]) / net.base_MVA
    Df, Dt = incidence(net)
    Ybus = (Df.T @ Yf + Dt.T @ Yt + sp.diags(ysh)).tocsc()
    out = []
    for M in (Ybus, Yf, Yt):
        M.sum_duplicates()
        M.eliminate_zeros()
        M.sort_indices()
        out.append(M)
    return tuple(out)
