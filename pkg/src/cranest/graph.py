"""Bi-layer factor graph for linear state estimation behind a noisy linear channel.

The generative chain is ``x = A s + n`` (measurements of the state) followed by
``y = H x + m`` (aggregated reception of the transmitted measurements).  The
graph has three variable layers and five factor families:

* ``S``   state variables (length N),
* ``X``   measurement variables (length M),
* ``Y``   received-symbol variables (length L),
* ``F_A`` one factor per measurement row, encoding ``a_j . s - x_j + n_j = 0``
  (observation 0, coefficient -1 on ``x_j``, noise ``sigma_n^2``),
* ``F_H`` one factor per receiver row over the ``x`` it hears; because the
  received value is known, the Y variable is collapsed into the factor, which
  carries observation ``y_i`` and noise ``sigma_m^2`` directly,
* ``F_Y`` degree-1 observation injectors on the Y nodes.  They document the
  full layered layout and appear in exports/counts but exchange no runtime
  messages (their information already lives on ``F_H``),
* ``F_X`` degree-1 virtual factors on the X nodes (uninformative unless a
  weak prior is configured),
* ``F_S`` degree-1 prior factors ``N(0, sigma_s^2)`` on the state nodes.

A second, single-layer layout ("estimation") is available for the no-channel
case: the measurements are observed directly, so each ``F_A`` factor carries
``x_j`` as its observation and the X/Y layers disappear.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import sparse

from .messages import FactorCoeffs
from .validation import as_sparse_matrix, as_vector, check_positive_scalar, check_variances, is_complex_dtype

__all__ = [
    "NodeKind",
    "NodeId",
    "FactorGraph",
    "GraphViolation",
    "build_bilayer_graph",
    "build_estimation_graph",
    "graph_diameter",
]

#: coefficients with magnitude below this are dropped at build time so the
#: message kernel never divides by a vanishing pivot
COEFF_CUTOFF = 1e-12


class NodeKind(enum.IntEnum):
    """Node families; enum order fixes the canonical node ordering."""

    S = 0
    X = 1
    Y = 2
    F_H = 3
    F_A = 4
    F_Y = 5
    F_X = 6
    F_S = 7


VARIABLE_KINDS = frozenset({NodeKind.S, NodeKind.X, NodeKind.Y})
FACTOR_KINDS = frozenset({NodeKind.F_H, NodeKind.F_A, NodeKind.F_Y, NodeKind.F_X, NodeKind.F_S})


@dataclass(frozen=True, order=True)
class NodeId:
    kind: NodeKind
    index: int

    def __repr__(self):
        return f"{self.kind.name}[{self.index}]"


def _s(i):
    return NodeId(NodeKind.S, i)


def _x(j):
    return NodeId(NodeKind.X, j)


def _y(i):
    return NodeId(NodeKind.Y, i)


@dataclass(frozen=True)
class GraphViolation:
    node: NodeId | None
    message: str


@dataclass
class FactorGraph:
    """Container for the factor set plus derived adjacency.

    The constructor is deliberately permissive (tests build broken graphs to
    exercise :meth:`validate`); use :func:`build_bilayer_graph` /
    :func:`build_estimation_graph` for checked construction.
    """

    n_states: int
    n_measurements: int
    n_rrh: int
    field_mode: str  # "real" | "complex"
    prior_var_s: float
    factors: dict[NodeId, FactorCoeffs]
    prior_x: tuple[float, float] | None = None
    layout: str = "bilayer"  # "bilayer" | "estimation"
    build_stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self._var_adj: dict[NodeId, list[NodeId]] = {}
        for fid in sorted(self.factors):
            for vid in self.factors[fid].coeffs:
                self._var_adj.setdefault(vid, []).append(fid)
        for lst in self._var_adj.values():
            lst.sort()

    # -- structure queries ------------------------------------------------

    def variable_ids(self) -> list[NodeId]:
        """All variable nodes in canonical (kind, index) order."""
        out = [_s(k) for k in range(self.n_states)]
        if self.layout == "bilayer":
            out += [_x(j) for j in range(self.n_measurements)]
            out += [_y(i) for i in range(self.n_rrh)]
        return out

    def factor_ids(self) -> list[NodeId]:
        return sorted(self.factors)

    def runtime_factor_ids(self) -> list[NodeId]:
        """Factors that exchange messages (the F_Y injectors are notational)."""
        return [fid for fid in sorted(self.factors) if fid.kind != NodeKind.F_Y]

    def neighbors(self, node: NodeId) -> list[NodeId]:
        """Incident nodes of either a factor or a variable, index-sorted."""
        if node.kind in FACTOR_KINDS:
            try:
                return sorted(self.factors[node].coeffs)
            except KeyError:
                raise KeyError(f"unknown factor node {node!r}") from None
        if node.kind in VARIABLE_KINDS:
            known = {v for v in self.variable_ids()}
            if node not in known:
                raise KeyError(f"unknown variable node {node!r}")
            return list(self._var_adj.get(node, []))
        raise KeyError(f"unknown node {node!r}")

    @property
    def n_edges(self) -> int:
        """Message-bearing edges (excludes the degree-1 F_Y injector edges)."""
        return sum(self.factors[fid].degree for fid in self.runtime_factor_ids())

    @property
    def n_edges_full(self) -> int:
        """All edges of the layered layout, F_Y injector edges included."""
        return sum(c.degree for c in self.factors.values())

    # -- validation --------------------------------------------------------

    def validate(self) -> list[GraphViolation]:
        """Structural audit; returns an empty list for a well-formed graph."""
        bad: list[GraphViolation] = []

        def complain(node, msg):
            bad.append(GraphViolation(node, msg))

        expected_counts = {
            NodeKind.F_S: self.n_states,
            NodeKind.F_A: self.n_measurements,
        }
        if self.layout == "bilayer":
            expected_counts.update({NodeKind.F_H: self.n_rrh, NodeKind.F_Y: self.n_rrh, NodeKind.F_X: self.n_measurements})
        counts = {k: 0 for k in FACTOR_KINDS}
        for fid in self.factors:
            if fid.kind not in FACTOR_KINDS:
                complain(fid, "factor table contains a non-factor node")
                continue
            counts[fid.kind] += 1
        for kind, want in expected_counts.items():
            if counts.get(kind, 0) != want:
                complain(None, f"expected {want} {kind.name} factors, found {counts.get(kind, 0)}")

        n, m, l = self.n_states, self.n_measurements, self.n_rrh
        for fid, fac in sorted(self.factors.items()):
            for vid in fac.coeffs:
                if not isinstance(vid, NodeId) or vid.kind not in VARIABLE_KINDS:
                    complain(fid, f"edge endpoint {vid!r} is not a variable node")
                elif (
                    (vid.kind is NodeKind.S and not 0 <= vid.index < n)
                    or (vid.kind is NodeKind.X and not 0 <= vid.index < m)
                    or (vid.kind is NodeKind.Y and not 0 <= vid.index < l)
                ):
                    complain(fid, f"edge endpoint {vid!r} is out of range")
            if fac.noise_var < 0:
                complain(fid, "negative noise variance")
            kinds = {vid.kind for vid in fac.coeffs}
            if fid.kind is NodeKind.F_S:
                if fac.degree != 1 or set(fac.coeffs) != {_s(fid.index)}:
                    complain(fid, "state prior must have degree 1 on its own state node")
                if fac.observation is None:
                    complain(fid, "state prior must carry an observation (the prior mean)")
            elif fid.kind is NodeKind.F_X:
                if fac.degree != 1 or set(fac.coeffs) != {_x(fid.index)}:
                    complain(fid, "virtual measurement factor must have degree 1 on its own X node")
            elif fid.kind is NodeKind.F_A:
                if self.layout == "estimation":
                    if kinds - {NodeKind.S}:
                        complain(fid, "estimation-layout measurement factor may touch only state nodes")
                    if fac.observation is None:
                        complain(fid, "estimation-layout measurement factor must observe its measurement")
                else:
                    x_edges = [vid for vid in fac.coeffs if vid.kind is NodeKind.X]
                    if x_edges != [_x(fid.index)]:
                        complain(fid, "measurement factor must touch exactly its own X node")
                    elif fac.coeffs[_x(fid.index)] != -1:
                        complain(fid, "measurement factor must attach to its X node with coefficient -1")
                    if not any(vid.kind is NodeKind.S for vid in fac.coeffs):
                        complain(fid, "measurement factor touches no state node")
                    if kinds - {NodeKind.S, NodeKind.X}:
                        complain(fid, "measurement factor may touch only S and X nodes")
                    if fac.observation != 0:
                        complain(fid, "measurement factor must carry observation 0")
            elif fid.kind is NodeKind.F_H:
                if kinds - {NodeKind.X}:
                    complain(fid, "receiver factor may touch only X nodes (Y is collapsed)")
                if fac.observation is None:
                    complain(fid, "receiver factor must carry its received value")
            elif fid.kind is NodeKind.F_Y:
                if fac.degree != 1 or set(fac.coeffs) != {_y(fid.index)}:
                    complain(fid, "observation injector must have degree 1 on its own Y node")
                if fac.observation is None:
                    complain(fid, "observation injector must carry the received value")

        # per-variable factor multiplicity
        for k in range(n):
            priors = [f for f in self._var_adj.get(_s(k), []) if f.kind is NodeKind.F_S]
            if len(priors) != 1:
                complain(_s(k), f"state node has {len(priors)} prior factors, expected exactly 1")
        if self.layout == "bilayer":
            for j in range(m):
                virt = [f for f in self._var_adj.get(_x(j), []) if f.kind is NodeKind.F_X]
                if len(virt) != 1:
                    complain(_x(j), f"X node has {len(virt)} virtual factors, expected exactly 1")
            for i in range(l):
                inj = [f for f in self._var_adj.get(_y(i), []) if f.kind is NodeKind.F_Y]
                if len(inj) != 1:
                    complain(_y(i), f"Y node has {len(inj)} observation injectors, expected exactly 1")
        return bad

    # -- export ------------------------------------------------------------

    def export_edge_list(self) -> str:
        """Plain-text dump, one line per edge, deterministic ordering.

        Line format: ``factor-kind factor-index variable-kind variable-index
        coefficient``.  Coefficients use 17 significant digits; complex ones
        are written ``re{+/-}imj``.
        """
        out = io.StringIO()
        for fid in self.factor_ids():
            fac = self.factors[fid]
            for vid in sorted(fac.coeffs):
                c = fac.coeffs[vid]
                if isinstance(c, complex):
                    cs = f"{c.real:.17g}{c.imag:+.17g}j"
                else:
                    cs = f"{c:.17g}"
                out.write(f"{fid.kind.name} {fid.index} {vid.kind.name} {vid.index} {cs}\n")
        return out.getvalue()


# -- builders ---------------------------------------------------------------


def _resolve_field_mode(field_mode, *arrays):
    any_complex = any(is_complex_dtype(a) for a in arrays)
    if field_mode is None:
        return "complex" if any_complex else "real"
    if field_mode not in ("real", "complex"):
        raise ValueError(f"field_mode must be 'real' or 'complex', got {field_mode!r}")
    if field_mode == "real" and any_complex:
        raise ValueError("field_mode='real' but the inputs contain complex data")
    return field_mode


def _row_entries(mat: sparse.csr_array, cutoff: float):
    """Yield (row, [(col, coeff)...]) keeping |coeff| >= cutoff; count drops."""
    dropped = 0
    indptr, indices, data = mat.indptr, mat.indices, mat.data
    rows = []
    for r in range(mat.shape[0]):
        ents = []
        for p in range(indptr[r], indptr[r + 1]):
            c = data[p]
            if abs(c) < cutoff:
                dropped += 1
                continue
            ents.append((int(indices[p]), c))
        rows.append(ents)
    return rows, dropped


def _scalar_cast(field_mode):
    return (lambda v: complex(v)) if field_mode == "complex" else (lambda v: float(v))


def build_bilayer_graph(
    A,
    H,
    y,
    sigma_n_sq,
    sigma_m_sq,
    sigma_s_sq,
    *,
    field_mode: str | None = None,
    prior_x: tuple[float, float] | None = None,
    coeff_cutoff: float = COEFF_CUTOFF,
) -> FactorGraph:
    """Assemble the layered graph for ``x = A s + n``, ``y = H x + m``.

    ``sigma_n_sq`` may be a scalar or a length-M vector (per-measurement
    noise); ``sigma_m_sq`` a scalar or length-L vector.  Rows of A or H left
    empty after the coefficient cutoff are rejected: a disconnected
    measurement or receiver carries no usable structure and almost always
    indicates an upstream bug (silent receivers should be filtered out by the
    caller, see the experiment pipeline).
    """
    A = as_sparse_matrix(A, "A")
    H = as_sparse_matrix(H, "H")
    m, n = A.shape
    l, m2 = H.shape
    if m2 != m:
        raise ValueError(f"H has {m2} columns but A has {m} rows; the layers do not chain")
    y = as_vector(y, l, "y")
    field_mode = _resolve_field_mode(field_mode, A, H, y)
    cast = _scalar_cast(field_mode)
    sn = check_variances(sigma_n_sq, m, "sigma_n_sq")
    sm = check_variances(sigma_m_sq, l, "sigma_m_sq")
    ss = check_positive_scalar(sigma_s_sq, "sigma_s_sq")
    if prior_x is not None:
        px_mean, px_var = prior_x
        px_var = check_positive_scalar(px_var, "prior_x variance")

    a_rows, a_dropped = _row_entries(A, coeff_cutoff)
    h_rows, h_dropped = _row_entries(H, coeff_cutoff)
    empty_a = [j for j, ents in enumerate(a_rows) if not ents]
    if empty_a:
        raise ValueError(f"rows {empty_a} of A are entirely zero: those measurements touch no state")
    empty_h = [i for i, ents in enumerate(h_rows) if not ents]
    if empty_h:
        raise ValueError(f"rows {empty_h} of H are entirely zero: those receivers hear nothing")

    factors: dict[NodeId, FactorCoeffs] = {}
    for k in range(n):
        factors[NodeId(NodeKind.F_S, k)] = FactorCoeffs({_s(k): cast(1.0)}, observation=cast(0.0), noise_var=ss)
    for j in range(m):
        if prior_x is None:
            fx = FactorCoeffs({_x(j): cast(1.0)}, observation=None, noise_var=0.0)
        else:
            fx = FactorCoeffs({_x(j): cast(1.0)}, observation=cast(px_mean), noise_var=px_var)
        factors[NodeId(NodeKind.F_X, j)] = fx
        coeffs = {_s(k): cast(c) for k, c in a_rows[j]}
        coeffs[_x(j)] = cast(-1.0)
        factors[NodeId(NodeKind.F_A, j)] = FactorCoeffs(coeffs, observation=cast(0.0), noise_var=float(sn[j]))
    for i in range(l):
        coeffs = {_x(j): cast(c) for j, c in h_rows[i]}
        factors[NodeId(NodeKind.F_H, i)] = FactorCoeffs(coeffs, observation=cast(y[i]), noise_var=float(sm[i]))
        factors[NodeId(NodeKind.F_Y, i)] = FactorCoeffs({_y(i): cast(1.0)}, observation=cast(y[i]), noise_var=0.0)

    graph = FactorGraph(
        n_states=n,
        n_measurements=m,
        n_rrh=l,
        field_mode=field_mode,
        prior_var_s=ss,
        factors=factors,
        prior_x=prior_x,
        layout="bilayer",
        build_stats={"dropped_coefficients": a_dropped + h_dropped, "coeff_cutoff": coeff_cutoff},
    )
    return graph


def build_estimation_graph(
    A,
    x,
    sigma_n_sq,
    sigma_s_sq,
    *,
    field_mode: str | None = None,
    coeff_cutoff: float = COEFF_CUTOFF,
) -> FactorGraph:
    """Single-layer graph for directly observed measurements ``x = A s + n``.

    This is the no-channel layout: each measurement factor carries its
    observed value, and there are no X/Y layers.
    """
    A = as_sparse_matrix(A, "A")
    m, n = A.shape
    x = as_vector(x, m, "x")
    field_mode = _resolve_field_mode(field_mode, A, x)
    cast = _scalar_cast(field_mode)
    sn = check_variances(sigma_n_sq, m, "sigma_n_sq")
    ss = check_positive_scalar(sigma_s_sq, "sigma_s_sq")

    a_rows, dropped = _row_entries(A, coeff_cutoff)
    empty_a = [j for j, ents in enumerate(a_rows) if not ents]
    if empty_a:
        raise ValueError(f"rows {empty_a} of A are entirely zero: those measurements touch no state")

    factors: dict[NodeId, FactorCoeffs] = {}
    for k in range(n):
        factors[NodeId(NodeKind.F_S, k)] = FactorCoeffs({_s(k): cast(1.0)}, observation=cast(0.0), noise_var=ss)
    for j in range(m):
        coeffs = {_s(k): cast(c) for k, c in a_rows[j]}
        factors[NodeId(NodeKind.F_A, j)] = FactorCoeffs(coeffs, observation=cast(x[j]), noise_var=float(sn[j]))

    return FactorGraph(
        n_states=n,
        n_measurements=m,
        n_rrh=0,
        field_mode=field_mode,
        prior_var_s=ss,
        factors=factors,
        layout="estimation",
        build_stats={"dropped_coefficients": dropped, "coeff_cutoff": coeff_cutoff},
    )


def graph_diameter(graph: FactorGraph) -> int:
    """Diameter (in hops) of the message-bearing bipartite graph.

    Computed per connected component by BFS from every node; the maximum
    eccentricity over all components is returned.  Intended for small test
    graphs, not the hot path.
    """
    adj: dict[NodeId, list[NodeId]] = {}
    for fid in graph.runtime_factor_ids():
        for vid in graph.factors[fid].coeffs:
            adj.setdefault(fid, []).append(vid)
            adj.setdefault(vid, []).append(fid)
    best = 0
    for start in adj:
        depth = {start: 0}
        frontier = [start]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if v not in depth:
                        depth[v] = depth[u] + 1
                        nxt.append(v)
            frontier = nxt
        best = max(best, max(depth.values()))
    return best
