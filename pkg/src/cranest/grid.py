"""DC power-grid measurement model on a bus/branch case.

Physics (lossless DC approximation, angles in radians, powers in per-unit):

* branch flow   ``P_rk = -b_rk (theta_r - theta_k)`` with ``b_rk`` the branch
  series susceptance (negative for an inductive line, ``b = -1/x``),
* bus injection ``P_r = -sum_{k in N_r} b_rk (theta_r - theta_k)``,
* angle reading ``theta_r`` directly.

The state vector holds the angles of all non-reference buses in ascending bus
order; the reference angle is identically zero and its column is dropped from
every measurement row.

Case files are whitespace-delimited text with ``#`` comments and three
sections::

    BUS                      # id  rect_row  rect_col
    1 0 0
    ...
    BRANCH                   # from  to  susceptance
    1 2 -16.666666666666668
    ...
    REF                      # reference bus id
    1

``rect_row``/``rect_col`` place each bus inside a coarse rectangular partition
of the unit square (used to co-locate the bus's field devices); the shipped
IEEE 30-bus case uses a 4x4 partition approximating the standard one-line
diagram layout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import sparse

from .oracle import is_observable
from .seeds import spawn_rng
from .validation import as_vector, check_positive_scalar

__all__ = [
    "Bus",
    "Branch",
    "GridCase",
    "CaseFileError",
    "MeasurementKind",
    "MeasurementSpec",
    "MeasurementConfig",
    "ConfigGenerationError",
    "load_case",
    "ieee30",
    "candidate_pool",
    "build_measurement_matrix",
    "generate_config",
    "generate_true_state",
    "simulate_measurements",
    "branch_flows",
    "bus_injections",
    "dc_power_flow",
    "reference_kind_rms",
    "normalization_constants",
    "IEEE30_KIND_RMS",
    "IEEE30_INJECTIONS",
]


class CaseFileError(ValueError):
    """Malformed case file; message carries the offending line number."""


@dataclass(frozen=True)
class Bus:
    id: int
    rect_row: int
    rect_col: int


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    susceptance: float


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    reference_bus: int

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        object.__setattr__(self, "_bus_by_id", {b.id: b for b in self.buses})
        # state ordering: non-reference buses ascending
        state_buses = [i for i in sorted(ids) if i != self.reference_bus]
        object.__setattr__(self, "_state_index", {b: k for k, b in enumerate(state_buses)})
        adj: dict[int, list[tuple[int, float]]] = {i: [] for i in ids}
        for br in self.branches:
            adj[br.from_bus].append((br.to_bus, br.susceptance))
            adj[br.to_bus].append((br.from_bus, br.susceptance))
        object.__setattr__(self, "_adjacency", {i: tuple(sorted(v)) for i, v in adj.items()})

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def n_states(self) -> int:
        return len(self.buses) - 1

    def bus(self, bus_id: int) -> Bus:
        return self._bus_by_id[bus_id]

    def state_index(self, bus_id: int) -> int | None:
        """Column of a bus angle in the state vector; None for the reference."""
        if bus_id == self.reference_bus:
            return None
        return self._state_index[bus_id]

    def state_bus_ids(self) -> list[int]:
        return sorted(self._state_index, key=self._state_index.get)

    def neighbors_of(self, bus_id: int) -> tuple[tuple[int, float], ...]:
        return self._adjacency[bus_id]

    def full_angles(self, state: np.ndarray) -> np.ndarray:
        """Expand a state vector to per-bus angles (reference pinned to 0)."""
        state = as_vector(state, self.n_states, "state")
        theta = np.zeros(self.n_buses, dtype=state.dtype)
        order = sorted(b.id for b in self.buses)
        for pos, bus_id in enumerate(order):
            idx = self.state_index(bus_id)
            if idx is not None:
                theta[pos] = state[idx]
        return theta

    def bus_position(self, bus_id: int) -> int:
        """Position of a bus in ascending-id order (for full-angle vectors)."""
        order = sorted(b.id for b in self.buses)
        return order.index(bus_id)


# -- case file parsing --------------------------------------------------------


def load_case(path) -> GridCase:
    """Parse a case file; raises :class:`CaseFileError` with line numbers."""
    text = Path(path).read_text()
    section = None
    buses: list[Bus] = []
    branches: list[Branch] = []
    ref: int | None = None
    seen_pairs: dict[tuple[int, int], int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.upper() in ("BUS", "BRANCH", "REF"):
            section = line.upper()
            continue
        parts = line.split()
        try:
            if section == "BUS":
                if len(parts) != 3:
                    raise ValueError("expected: id rect_row rect_col")
                buses.append(Bus(int(parts[0]), int(parts[1]), int(parts[2])))
            elif section == "BRANCH":
                if len(parts) != 3:
                    raise ValueError("expected: from to susceptance")
                branches.append(Branch(int(parts[0]), int(parts[1]), float(parts[2])))
            elif section == "REF":
                if len(parts) != 1:
                    raise ValueError("expected a single bus id")
                ref = int(parts[0])
            else:
                raise ValueError("data before any section header")
        except ValueError as err:
            raise CaseFileError(f"line {lineno}: {err}") from None

    ids = [b.id for b in buses]
    if not buses:
        raise CaseFileError("case file declares no buses")
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise CaseFileError(f"duplicate bus ids {dup}")
    id_set = set(ids)
    for br in branches:
        if br.from_bus not in id_set or br.to_bus not in id_set:
            raise CaseFileError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
        if br.from_bus == br.to_bus:
            raise CaseFileError(f"branch {br.from_bus}-{br.to_bus} is a self-loop")
        if br.susceptance == 0 or not math.isfinite(br.susceptance):
            raise CaseFileError(f"branch {br.from_bus}-{br.to_bus} must have a finite nonzero susceptance")
        key = (min(br.from_bus, br.to_bus), max(br.from_bus, br.to_bus))
        if key in seen_pairs:
            raise CaseFileError(f"duplicate branch {key[0]}-{key[1]}")
        seen_pairs[key] = 1
    if ref is None:
        raise CaseFileError("missing REF section")
    if ref not in id_set:
        raise CaseFileError(f"reference bus {ref} is not declared in the BUS section")

    # connectivity: breadth-first flood from the reference bus
    adj: dict[int, set[int]] = {i: set() for i in ids}
    for br in branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    seen = {ref}
    frontier = [ref]
    while frontier:
        frontier = [v for u in frontier for v in adj[u] if v not in seen and not seen.add(v)]
    unreachable = sorted(id_set - seen)
    if unreachable:
        raise CaseFileError(f"buses {unreachable} are not connected to the reference bus")

    return GridCase(tuple(buses), tuple(branches), ref)


def ieee30() -> GridCase:
    """The shipped IEEE 30-bus case (30 buses, 41 branches, N = 29)."""
    with resources.as_file(resources.files("cranest.data").joinpath("ieee30.grid")) as p:
        return load_case(p)


# -- measurement model --------------------------------------------------------


class MeasurementKind(str, enum.Enum):
    FLOW = "flow"
    INJECTION = "injection"
    ANGLE = "angle"


@dataclass(frozen=True)
class MeasurementSpec:
    """One measured quantity.

    ``location`` is ``(from_bus, to_bus)`` for a directed branch flow and a
    bus id for injections and angle readings.  ``sigma_n`` is optional device
    noise metadata; when ``None`` the simulation-time noise level applies.
    """

    kind: MeasurementKind
    location: tuple[int, int] | int
    sigma_n: float | None = None

    def __post_init__(self):
        if self.sigma_n is not None:
            check_positive_scalar(self.sigma_n, "sigma_n")

    def bus(self) -> int:
        """The bus whose field device produces this measurement."""
        if self.kind is MeasurementKind.FLOW:
            return self.location[0]
        return self.location


@dataclass(frozen=True)
class MeasurementConfig:
    specs: tuple[MeasurementSpec, ...]

    @property
    def n_measurements(self) -> int:
        return len(self.specs)

    def redundancy(self, case: GridCase) -> float:
        return len(self.specs) / case.n_states


def _validate_spec(case: GridCase, spec: MeasurementSpec):
    if spec.kind is MeasurementKind.FLOW:
        f, t = spec.location
        pair = (min(f, t), max(f, t))
        branch_pairs = {(min(b.from_bus, b.to_bus), max(b.from_bus, b.to_bus)) for b in case.branches}
        if pair not in branch_pairs:
            raise ValueError(f"flow measurement on non-existent branch {f}-{t}")
    elif spec.kind is MeasurementKind.INJECTION:
        if spec.location not in {b.id for b in case.buses}:
            raise ValueError(f"injection measurement at unknown bus {spec.location}")
    elif spec.kind is MeasurementKind.ANGLE:
        if spec.location not in {b.id for b in case.buses}:
            raise ValueError(f"angle measurement at unknown bus {spec.location}")
        if spec.location == case.reference_bus:
            raise ValueError("angle measurement at the reference bus carries no information")
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown measurement kind {spec.kind!r}")


def _branch_susceptance(case: GridCase, f: int, t: int) -> float:
    for other, b in case.neighbors_of(f):
        if other == t:
            return b
    raise KeyError(f"no branch {f}-{t}")


def _row_coeffs(case: GridCase, spec: MeasurementSpec) -> dict[int, float]:
    """State-column coefficients of one measurement row (reference dropped)."""
    coeffs: dict[int, float] = {}

    def add(bus_id: int, value: float):
        idx = case.state_index(bus_id)
        if idx is not None:
            coeffs[idx] = coeffs.get(idx, 0.0) + value

    if spec.kind is MeasurementKind.FLOW:
        f, t = spec.location
        b = _branch_susceptance(case, f, t)
        add(f, -b)
        add(t, b)
    elif spec.kind is MeasurementKind.INJECTION:
        r = spec.location
        for k, b in case.neighbors_of(r):
            add(r, -b)
            add(k, b)
    else:  # ANGLE
        add(spec.location, 1.0)
    return {k: v for k, v in coeffs.items() if v != 0.0}


def build_measurement_matrix(case: GridCase, config: MeasurementConfig) -> sparse.csr_array:
    """Sparse (M, N) matrix mapping the state to the measured quantities."""
    rows, cols, vals = [], [], []
    for j, spec in enumerate(config.specs):
        _validate_spec(case, spec)
        for col, val in sorted(_row_coeffs(case, spec).items()):
            rows.append(j)
            cols.append(col)
            vals.append(val)
    return sparse.csr_array(
        (np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))),
        shape=(config.n_measurements, case.n_states),
    )


def candidate_pool(case: GridCase) -> list[MeasurementSpec]:
    """Every measurable quantity, in deterministic order.

    Branch flows in both directions (branch order), injections at every bus
    (ascending), angles at every non-reference bus (ascending).
    """
    pool: list[MeasurementSpec] = []
    for br in case.branches:
        pool.append(MeasurementSpec(MeasurementKind.FLOW, (br.from_bus, br.to_bus)))
        pool.append(MeasurementSpec(MeasurementKind.FLOW, (br.to_bus, br.from_bus)))
    for bus_id in sorted(b.id for b in case.buses):
        pool.append(MeasurementSpec(MeasurementKind.INJECTION, bus_id))
    for bus_id in sorted(b.id for b in case.buses):
        if bus_id != case.reference_bus:
            pool.append(MeasurementSpec(MeasurementKind.ANGLE, bus_id))
    return pool


class ConfigGenerationError(RuntimeError):
    """Rejection sampling could not find an observable configuration."""


def generate_config(
    case: GridCase,
    redundancy: float,
    seed,
    *,
    max_attempts: int = 1000,
    rank_tol_scale: float = 1e3,
) -> MeasurementConfig:
    """Draw ``M = round(redundancy * N)`` distinct measurements, rejecting
    unobservable draws.

    The draw is uniform without replacement from :func:`candidate_pool`; the
    same seed always yields the same configuration.
    """
    check_positive_scalar(redundancy, "redundancy")
    pool = candidate_pool(case)
    m = int(round(redundancy * case.n_states))
    if m < 1:
        raise ValueError(f"redundancy {redundancy} yields an empty configuration")
    if m > len(pool):
        raise ValueError(f"requested {m} measurements but the candidate pool has only {len(pool)}")
    rng = spawn_rng(seed)
    for _ in range(max_attempts):
        idx = rng.choice(len(pool), size=m, replace=False)
        config = MeasurementConfig(tuple(pool[i] for i in idx))
        a = build_measurement_matrix(case, config)
        if is_observable(a.toarray(), rank_tol_scale=rank_tol_scale).observable:
            return config
    raise ConfigGenerationError(
        f"no observable configuration with M={m} found in {max_attempts} attempts"
    )


# -- physics evaluators (used for brute-force cross-checks) -------------------


def branch_flows(case: GridCase, state: np.ndarray) -> np.ndarray:
    """Directed flows ``P_{from,to}`` for every branch, in branch order."""
    theta = case.full_angles(np.asarray(state, dtype=float))
    out = np.empty(case.n_branches)
    for i, br in enumerate(case.branches):
        tf = theta[case.bus_position(br.from_bus)]
        tt = theta[case.bus_position(br.to_bus)]
        out[i] = -br.susceptance * (tf - tt)
    return out


def bus_injections(case: GridCase, state: np.ndarray) -> np.ndarray:
    """Net injections at every bus (ascending id order)."""
    theta = case.full_angles(np.asarray(state, dtype=float))
    order = sorted(b.id for b in case.buses)
    out = np.zeros(case.n_buses)
    for pos, bus_id in enumerate(order):
        acc = 0.0
        tr = theta[pos]
        for k, b in case.neighbors_of(bus_id):
            acc += -b * (tr - theta[case.bus_position(k)])
        out[pos] = acc
    return out


def dc_power_flow(case: GridCase, injections_by_bus: dict[int, float]) -> np.ndarray:
    """Solve the reduced DC power-flow system for the non-reference angles."""
    n = case.n_states
    b_red = np.zeros((n, n))
    p = np.zeros(n)
    for bus_id, inj in injections_by_bus.items():
        idx = case.state_index(bus_id)
        if idx is not None:
            p[idx] = inj
    for br in case.branches:
        f, t, b = br.from_bus, br.to_bus, br.susceptance
        fi, ti = case.state_index(f), case.state_index(t)
        if fi is not None:
            b_red[fi, fi] += -b
        if ti is not None:
            b_red[ti, ti] += -b
        if fi is not None and ti is not None:
            b_red[fi, ti] += b
            b_red[ti, fi] += b
    return np.linalg.solve(b_red, p)


#: synthetic balanced dispatch for the shipped 30-bus case (per-unit on a
#: 100 MVA base): the standard load schedule, generation at the conventional
#: generator buses scaled to balance exactly.
IEEE30_INJECTIONS: dict[int, float] = {
    1: 1.314, 2: 0.383, 3: -0.024, 4: -0.076, 5: -0.572, 7: -0.228, 8: -0.05,
    10: -0.058, 11: 0.15, 12: -0.112, 13: 0.15, 14: -0.062, 15: -0.082,
    16: -0.035, 17: -0.09, 18: -0.032, 19: -0.095, 20: -0.022, 21: -0.175,
    23: -0.032, 24: -0.087, 26: -0.035, 29: -0.024, 30: -0.106,
}


def generate_true_state(case: GridCase, seed, *, mode: str = "uniform",
                        low: float = -0.5, high: float = 0.5,
                        injections: dict[int, float] | None = None) -> np.ndarray:
    """Ground-truth angle vector (length N).

    ``uniform`` draws each non-reference angle i.i.d. from [low, high];
    ``powerflow`` solves the DC power flow for an injection profile (defaults
    to the shipped dispatch) and is deterministic.
    """
    if mode == "uniform":
        rng = spawn_rng(seed)
        return rng.uniform(low, high, size=case.n_states)
    if mode == "powerflow":
        return dc_power_flow(case, injections if injections is not None else IEEE30_INJECTIONS)
    raise ValueError(f"unknown true-state mode {mode!r}")


def simulate_measurements(case: GridCase, config: MeasurementConfig, s_true, sigma_n, seed,
                          *, matrix=None) -> np.ndarray:
    """Measured vector ``x = A s_true + n`` with i.i.d. ``N(0, sigma_n^2)`` noise.

    ``matrix`` may supply a pre-built (possibly rescaled) measurement matrix;
    otherwise it is built from the configuration.
    """
    sigma_n = check_positive_scalar(sigma_n, "sigma_n", allow_zero=True)
    a = build_measurement_matrix(case, config) if matrix is None else matrix
    s_true = as_vector(s_true, case.n_states, "s_true")
    clean = a @ s_true
    rng = spawn_rng(seed)
    return clean + rng.normal(0.0, sigma_n, size=config.n_measurements)


# -- transmit-scale normalization ---------------------------------------------


def reference_kind_rms(case: GridCase, n_samples: int = 100_000, seed: int = 314159) -> dict[MeasurementKind, float]:
    """Reference-ensemble RMS of each measurement kind.

    The ensemble draws states uniformly from [-0.5, 0.5]^N and evaluates every
    branch flow, every injection, and every non-reference angle; one RMS
    constant per kind is returned.  Constants for the shipped case are frozen
    in :data:`IEEE30_KIND_RMS`.
    """
    pool = candidate_pool(case)
    pool_by_kind = {
        kind: [s for s in pool if s.kind is kind and (kind is not MeasurementKind.FLOW or s.location[0] == min(s.location))]
        for kind in MeasurementKind
    }
    rng = spawn_rng(seed)
    states = rng.uniform(-0.5, 0.5, size=(n_samples, case.n_states))
    out = {}
    for kind, specs in pool_by_kind.items():
        a = build_measurement_matrix(case, MeasurementConfig(tuple(specs)))
        vals = states @ a.T.toarray()
        out[kind] = float(np.sqrt(np.mean(vals**2)))
    return out


#: frozen output of ``reference_kind_rms(ieee30())`` (seed 314159, 1e5 samples);
#: the angle value sits at the analytic RMS of U[-0.5, 0.5], 1/sqrt(12) ~ 0.2887
IEEE30_KIND_RMS: dict[MeasurementKind, float] = {
    MeasurementKind.FLOW: 5.069548102209638,
    MeasurementKind.INJECTION: 10.894796462862834,
    MeasurementKind.ANGLE: 0.2886850169266109,
}


def normalization_constants(config: MeasurementConfig, kind_rms: dict[MeasurementKind, float]) -> np.ndarray:
    """Per-measurement normalization constants (the kind RMS of each row)."""
    out = np.array([kind_rms[s.kind] for s in config.specs], dtype=float)
    if np.any(~np.isfinite(out)) or np.any(out <= 0):
        raise ValueError("normalization constants must be finite and > 0")
    return out
