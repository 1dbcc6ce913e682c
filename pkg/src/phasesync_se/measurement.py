"""Quadratic measurement functions, Hermitian measurement matrices and the PSSE cost.

Complex power measurements are always stored as one record carrying a complex
value and a single weight, so real/reactive pairs share their weight by
construction.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .netmodel import Network


class Kind(str, enum.Enum):
    VM2 = "vm2"
    BUS_PQ = "bus_pq"
    BRANCH_PQ_FROM = "branch_pq_from"
    BRANCH_PQ_TO = "branch_pq_to"
    PHASOR = "phasor"

    @property
    def is_complex(self) -> bool:
        return self is not Kind.VM2

    @property
    def on_branch(self) -> bool:
        return self in (Kind.BRANCH_PQ_FROM, Kind.BRANCH_PQ_TO)


KIND_ORDER = (Kind.VM2, Kind.BUS_PQ, Kind.BRANCH_PQ_FROM, Kind.BRANCH_PQ_TO, Kind.PHASOR)


class MeasurementError(ValueError):
    pass


@dataclass(frozen=True)
class Measurement:
    kind: Kind
    index: int  # internal 0-based bus or branch index
    value: complex | float
    weight: float = 1.0
    sigma: float | None = None

    def __post_init__(self):
        if not self.weight >= 0:
            raise MeasurementError(f"weight must be nonnegative, got {self.weight}")
        if self.sigma is not None and not self.sigma >= 0:
            raise MeasurementError(f"sigma must be nonnegative, got {self.sigma}")


@dataclass(frozen=True)
class Group:
    """Array view of all measurements of one kind."""
    index: np.ndarray
    value: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return len(self.index)


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    network: Network
    measurements: tuple[Measurement, ...]
    rng_seed: int | None = None
    reference: int = 0  # bus whose angle is zero for phasor measurements

    def __post_init__(self):
        object.__setattr__(self, "measurements", tuple(self.measurements))
        seen = set()
        net = self.network
        for m in self.measurements:
            limit = net.l if m.kind.on_branch else net.n
            if not 0 <= m.index < limit:
                raise MeasurementError(f"{m.kind.value} index {m.index} out of range")
            key = (m.kind, m.index)
            if key in seen:
                raise MeasurementError(f"duplicate {m.kind.value} measurement at index {m.index}")
            seen.add(key)
        if not 0 <= self.reference < net.n:
            raise MeasurementError(f"reference bus {self.reference} out of range")

    def __len__(self):
        return len(self.measurements)

    @property
    def m(self) -> int:
        """Number of real scalar measurements."""
        return sum(2 if meas.kind.is_complex else 1 for meas in self.measurements)

    @cached_property
    def groups(self) -> dict[Kind, Group]:
        out = {}
        for kind in KIND_ORDER:
            ms = [m for m in self.measurements if m.kind is kind]
            dtype = float if kind is Kind.VM2 else complex
            out[kind] = Group(index=np.array([m.index for m in ms], dtype=np.int64),
                              value=np.array([m.value for m in ms], dtype=dtype),
                              weight=np.array([m.weight for m in ms], dtype=float))
        return out


# --------------------------------------------------------------------------- evaluation

def bus_injections(net: Network, v: np.ndarray) -> np.ndarray:
    return v * np.conj(net.Ybus @ v)


def branch_flows(net: Network, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sf = v[net.from_idx] * np.conj(net.Yf @ v)
    st = v[net.to_idx] * np.conj(net.Yt @ v)
    return sf, st


def evaluate(net: Network, v: np.ndarray, kind: Kind, index: int) -> complex | float:
    """Evaluate one measurement function at the complex voltage ``v``."""
    v = np.asarray(v, dtype=complex)
    if v.shape != (net.n,):
        raise MeasurementError(f"voltage vector has shape {v.shape}, expected ({net.n},)")
    kind = Kind(kind)
    limit = net.l if kind.on_branch else net.n
    if not 0 <= index < limit:
        raise IndexError(f"{kind.value} index {index} out of range")
    if kind is Kind.VM2:
        return float(abs(v[index]) ** 2)
    if kind is Kind.BUS_PQ:
        return complex(v[index] * np.conj(net.Ybus[index, :] @ v).item())
    if kind is Kind.BRANCH_PQ_FROM:
        return complex(v[net.from_idx[index]] * np.conj(net.Yf[index, :] @ v).item())
    if kind is Kind.BRANCH_PQ_TO:
        return complex(v[net.to_idx[index]] * np.conj(net.Yt[index, :] @ v).item())
    return complex(v[index])


def evaluate_group(net: Network, v: np.ndarray, kind: Kind, index: np.ndarray) -> np.ndarray:
    """Vectorised :func:`evaluate` over many indices of one kind (phasors unreferenced)."""
    if kind is Kind.VM2:
        return np.abs(v[index]) ** 2
    if kind is Kind.BUS_PQ:
        return bus_injections(net, v)[index]
    if kind is Kind.BRANCH_PQ_FROM:
        return branch_flows(net, v)[0][index]
    if kind is Kind.BRANCH_PQ_TO:
        return branch_flows(net, v)[1][index]
    return v[index]


def hermitian_A(net: Network, kind: Kind, index: int, part: str | None = None) -> sp.csr_matrix:
    """Hermitian matrix A with v^H A v equal to one real scalar measurement.

    ``part`` selects "P" (real) or "Q" (imaginary) for complex power kinds.
    """
    kind = Kind(kind)
    n = net.n
    if kind is Kind.PHASOR:
        raise MeasurementError("phasor measurements are linear, not quadratic")
    if kind is Kind.VM2:
        return sp.csr_matrix(([1.0 + 0j], ([index], [index])), shape=(n, n))
    if kind is Kind.BUS_PQ:
        Y, col = net.Ybus, index
    elif kind is Kind.BRANCH_PQ_FROM:
        Y, col = net.Yf, int(net.from_idx[index])
    else:
        Y, col = net.Yt, int(net.to_idx[index])
    row = Y[index, :].tocoo()
    # M = Y^H e_k e_col^T: column `col` holds conj(Y[k, :])
    M = sp.csr_matrix((np.conj(row.data), (row.col, np.full(row.nnz, col))), shape=(n, n))
    MH = M.conj().T
    if part == "P":
        A = (M + MH) / 2
    elif part == "Q":
        A = (M - MH) / 2j
    else:
        raise MeasurementError("part must be 'P' or 'Q' for complex power measurements")
    A = A.tocsr()
    A.sum_duplicates()
    return A


def scalar_measurements(mset: MeasurementSet) -> list[tuple[Kind, int, str | None, float, float]]:
    """Expand a set into real scalars: (kind, index, part, value, weight)."""
    out = []
    for m in mset.measurements:
        if m.kind is Kind.VM2:
            out.append((m.kind, m.index, None, float(m.value), m.weight))
        elif m.kind is Kind.PHASOR:
            out.append((m.kind, m.index, "re", complex(m.value).real, m.weight))
            out.append((m.kind, m.index, "im", complex(m.value).imag, m.weight))
        else:
            out.append((m.kind, m.index, "P", complex(m.value).real, m.weight))
            out.append((m.kind, m.index, "Q", complex(m.value).imag, m.weight))
    return out


# --------------------------------------------------------------------------- cost

def referenced(v: np.ndarray, reference: int) -> np.ndarray:
    """Rotate ``v`` so that v[reference] is real and nonnegative."""
    ph = v[reference]
    if ph == 0:
        return v
    return v * (abs(ph) / ph)


def residuals(net: Network, v: np.ndarray, mset: MeasurementSet) -> dict[Kind, np.ndarray]:
    """Unweighted residuals h(v) - b per kind (complex for complex kinds)."""
    v = np.asarray(v, dtype=complex)
    out = {}
    g = mset.groups
    if len(g[Kind.VM2]):
        out[Kind.VM2] = np.abs(v[g[Kind.VM2].index]) ** 2 - g[Kind.VM2].value
    if len(g[Kind.BUS_PQ]):
        out[Kind.BUS_PQ] = bus_injections(net, v)[g[Kind.BUS_PQ].index] - g[Kind.BUS_PQ].value
    if len(g[Kind.BRANCH_PQ_FROM]) or len(g[Kind.BRANCH_PQ_TO]):
        sf, st = branch_flows(net, v)
        if len(g[Kind.BRANCH_PQ_FROM]):
            out[Kind.BRANCH_PQ_FROM] = sf[g[Kind.BRANCH_PQ_FROM].index] - g[Kind.BRANCH_PQ_FROM].value
        if len(g[Kind.BRANCH_PQ_TO]):
            out[Kind.BRANCH_PQ_TO] = st[g[Kind.BRANCH_PQ_TO].index] - g[Kind.BRANCH_PQ_TO].value
    if len(g[Kind.PHASOR]):
        vr = referenced(v, mset.reference)
        out[Kind.PHASOR] = vr[g[Kind.PHASOR].index] - g[Kind.PHASOR].value
    return out


def cost(net: Network, v: np.ndarray, mset: MeasurementSet) -> float:
    """Weighted least-squares cost sum_i w_i |h_i(v) - b_i|^2."""
    total = 0.0
    for kind, r in residuals(net, v, mset).items():
        total += float(np.sum(mset.groups[kind].weight * np.abs(r) ** 2))
    return total


# --------------------------------------------------------------------------- simulation

@dataclass(frozen=True)
class MeasurementPlan:
    """Which measurements to take: True (all), False (none) or explicit indices."""
    vm2: bool | Sequence[int] = True
    bus_pq: bool | Sequence[int] = True
    branch_from: bool | Sequence[int] = False
    branch_to: bool | Sequence[int] = False
    phasor: bool | Sequence[int] = False

    @classmethod
    def bus(cls) -> "MeasurementPlan":
        """Complete PQV bus set: |v|^2 and complex injection at every bus."""
        return cls()

    @classmethod
    def full(cls) -> "MeasurementPlan":
        """All bus and branch measurements (both ends)."""
        return cls(branch_from=True, branch_to=True)

    @classmethod
    def named(cls, name: str) -> "MeasurementPlan":
        plans = {"bus": cls.bus, "all": cls.full}
        if name not in plans:
            raise ValueError(f"unknown plan {name!r}; expected one of {sorted(plans)}")
        return plans[name]()

    def indices(self, net: Network) -> dict[Kind, np.ndarray]:
        def sel(spec, size):
            if spec is True:
                return np.arange(size)
            if spec is False:
                return np.arange(0)
            return np.asarray(sorted(set(spec)), dtype=np.int64)
        return {Kind.VM2: sel(self.vm2, net.n), Kind.BUS_PQ: sel(self.bus_pq, net.n),
                Kind.BRANCH_PQ_FROM: sel(self.branch_from, net.l),
                Kind.BRANCH_PQ_TO: sel(self.branch_to, net.l), Kind.PHASOR: sel(self.phasor, net.n)}


def simulate(net: Network, v_gnd: np.ndarray, plan: MeasurementPlan, sigma_noise: float,
             seed: int | np.random.Generator | None, *, vm_sigma: float = 0.0,
             vm_values: np.ndarray | None = None, mle_weights: bool = False,
             reference: int = 0) -> MeasurementSet:
    """Simulate noisy measurements of ``v_gnd``.

    Every real scalar of the power and phasor measurements receives its own
    N(0, sigma_noise^2) draw. Squared-magnitude measurements are exact unless
    ``vm_sigma`` > 0, or are replaced wholesale by ``vm_values`` (squared).
    Weights are 1 unless ``mle_weights`` is set, in which case w = sigma^-2.
    """
    if sigma_noise < 0 or vm_sigma < 0:
        raise ValueError("noise standard deviations must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    v_gnd = np.asarray(v_gnd, dtype=complex)
    idx = plan.indices(net)
    vr = referenced(v_gnd, reference)
    out: list[Measurement] = []
    for kind in KIND_ORDER:
        ix = idx[kind]
        if len(ix) == 0:
            continue
        exact = evaluate_group(net, vr if kind is Kind.PHASOR else v_gnd, kind, ix)
        sigma = vm_sigma if kind is Kind.VM2 else sigma_noise
        if kind is Kind.VM2:
            values = exact.astype(float)
            if vm_values is not None:
                values = np.asarray(vm_values, dtype=float)[ix]
            if sigma > 0:
                values = values + sigma * rng.standard_normal(len(ix))
        else:
            values = exact.astype(complex)
            if sigma > 0:
                noise = rng.standard_normal((2, len(ix)))
                values = values + sigma * (noise[0] + 1j * noise[1])
        if mle_weights:
            if sigma == 0:
                raise ValueError(f"MLE weights need a positive sigma for {kind.value}")
            weight = sigma ** -2
        else:
            weight = 1.0
        for i, val in zip(ix, values):
            out.append(Measurement(kind, int(i), val.item(), weight, sigma))
    s = seed if isinstance(seed, (int, np.integer)) else None
    return MeasurementSet(net, tuple(out), rng_seed=s, reference=reference)


# --------------------------------------------------------------------------- file IO

_SPLIT = {"bus_p": ("bus_pq", 0), "bus_q": ("bus_pq", 1),
          "branch_p_from": ("branch_pq_from", 0), "branch_q_from": ("branch_pq_from", 1),
          "branch_p_to": ("branch_pq_to", 0), "branch_q_to": ("branch_pq_to", 1)}


def _same_weight(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-9 * max(abs(a), abs(b))


def measurements_from_records(net: Network, records: Iterable[dict], reference: int = 0) -> MeasurementSet:
    """Build a set from JSON-style records keyed by external bus/branch ids.

    Split real/reactive rows (``bus_p``/``bus_q`` and the branch analogues) are
    merged; halves must both be present and carry equal weights.
    """
    out: list[Measurement] = []
    halves: dict[tuple[str, int], list] = {}
    for pos, rec in enumerate(records):
        try:
            typ = rec["type"]
            ext = int(rec["index"])
            value = rec["value"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MeasurementError(f"record {pos}: malformed ({exc})") from None
        weight = float(rec.get("weight", 1.0))
        sigma = rec.get("sigma")
        sigma = None if sigma is None else float(sigma)
        if typ in _SPLIT:
            full, part = _SPLIT[typ]
            slot = halves.setdefault((full, ext), [None, None])
            if slot[part] is not None:
                raise MeasurementError(f"record {pos}: duplicate {typ} at {ext}")
            slot[part] = (float(value), weight, sigma)
            continue
        try:
            kind = Kind(typ)
        except ValueError:
            raise MeasurementError(f"record {pos}: unknown measurement type {typ!r}") from None
        idx = _internal_index(net, kind, ext, pos)
        if kind is Kind.VM2:
            val = float(value)
        elif isinstance(value, (list, tuple)):
            val = complex(float(value[0]), float(value[1]))
        else:
            val = complex(value)
        out.append(Measurement(kind, idx, val, weight, sigma))
    for (full, ext), (p, q) in halves.items():
        if p is None or q is None:
            raise MeasurementError(f"{full} at {ext}: real and reactive parts must come in pairs")
        if not _same_weight(p[1], q[1]):
            raise MeasurementError(f"{full} at {ext}: P and Q weights differ ({p[1]} vs {q[1]})")
        kind = Kind(full)
        out.append(Measurement(kind, _internal_index(net, kind, ext, None), complex(p[0], q[0]), p[1], p[2]))
    return MeasurementSet(net, tuple(out), reference=reference)


def _internal_index(net: Network, kind: Kind, ext: int, pos) -> int:
    table = net.branch_row_map if kind.on_branch else net.id_map
    if ext not in table:
        what = "branch" if kind.on_branch else "bus"
        raise MeasurementError(f"record {pos}: unknown {what} id {ext}")
    return table[ext]


def measurements_to_records(mset: MeasurementSet) -> list[dict]:
    net = mset.network
    out = []
    for m in mset.measurements:
        ext = net.branches[m.index].row if m.kind.on_branch else net.buses[m.index].id
        value = float(m.value) if m.kind is Kind.VM2 else [complex(m.value).real, complex(m.value).imag]
        rec = {"type": m.kind.value, "index": ext, "value": value, "weight": m.weight}
        if m.sigma is not None:
            rec["sigma"] = m.sigma
        out.append(rec)
    return out


def load_measurements(path, net: Network, reference: int = 0) -> MeasurementSet:
    with open(path, encoding="utf-8") as fh:
        return measurements_from_records(net, json.load(fh), reference=reference)


def save_measurements(path, mset: MeasurementSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(measurements_to_records(mset), fh, indent=1)
