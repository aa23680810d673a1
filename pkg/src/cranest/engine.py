"""Synchronous Gaussian belief propagation scheduler.

One full iteration is two half-iterations: every variable->factor message is
recomputed from the previous factor->variable set, then every factor->variable
message from the fresh variable->factor set.  Convergence is declared on the
maximum absolute change of the factor->variable means (the quantities that
define the marginals); optional damping mixes each new factor->variable mean
with its predecessor (``(1-d)*new + d*old``) while precisions are stored
undamped.  Divergence (residual blow-up or a non-finite message) is a
reportable outcome, not an exception, at the :func:`run_to_convergence` level.

The update rules are exactly those of :mod:`cranest.messages`; here they are
applied edge-parallel with numpy segment reductions.  All reductions run in a
fixed order over a fixed edge enumeration (factors in canonical node order,
variables sorted within each factor), so results are bit-reproducible
regardless of how trials are distributed across processes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph import FactorGraph, NodeId, NodeKind
from .messages import GaussianMessage

__all__ = [
    "ScheduleConfig",
    "GbpResult",
    "MessageState",
    "NonFiniteMessageError",
    "initialize_messages",
    "iterate_once",
    "run_to_convergence",
]


class NonFiniteMessageError(ArithmeticError):
    """A message mean or precision left the floats; identifies the edge."""

    def __init__(self, factor: NodeId, variable: NodeId):
        super().__init__(f"non-finite message on edge {factor!r} -> {variable!r}")
        self.factor = factor
        self.variable = variable


@dataclass(frozen=True)
class ScheduleConfig:
    """Iteration budget and stopping rule.

    ``min_iterations`` guards against a spurious first-iteration stop: all
    means start at zero and, on the layered graph, stay exactly zero for one
    iteration while the observation factors' information is still propagating
    inward (precisions move first, means only on the following sweep).
    """

    max_iterations: int = 1000
    tolerance: float = 1e-8
    damping: float = 0.0
    divergence_threshold: float = 1e12
    min_iterations: int = 2

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.tolerance > 0):
            raise ValueError("tolerance must be > 0")
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("damping must lie in [0, 1)")
        if not (self.divergence_threshold > 0):
            raise ValueError("divergence_threshold must be > 0")
        if self.min_iterations < 1:
            raise ValueError("min_iterations must be >= 1")


@dataclass(frozen=True)
class GbpResult:
    """Outcome of a belief-propagation run.

    ``state_means``/``state_variances`` cover the S nodes, ``x_means``/
    ``x_variances`` the X nodes (empty in the estimation layout).  Variables
    whose marginal carries no information are reported with mean 0 (the prior
    mean), variance ``inf``, and are listed in ``uninformative_variables``.
    """

    state_means: np.ndarray
    state_variances: np.ndarray
    x_means: np.ndarray
    x_variances: np.ndarray
    iterations_used: int
    converged: bool
    diverged: bool
    final_residual: float
    uninformative_variables: tuple[NodeId, ...] = ()


class _Compiled:
    """Flat edge/factor arrays for one graph, in canonical deterministic order.

    Edges are factor-major: runtime factors sorted by node id, variables
    sorted within each factor.  ``vperm`` re-sorts edges variable-major for
    the variable half-iteration's segment sums.
    """

    def __init__(self, graph: FactorGraph):
        self.graph = graph
        dtype = np.complex128 if graph.field_mode == "complex" else np.float64
        self.dtype = dtype

        variables = graph.variable_ids()
        # Y nodes exchange no messages; keep only S and X in the flat index.
        variables = [v for v in variables if v.kind is not NodeKind.Y]
        self.variables = variables
        var_flat = {v: i for i, v in enumerate(variables)}
        self.n_vars = len(variables)

        fids = graph.runtime_factor_ids()
        self.factor_nodes = fids
        e_factor, e_var, e_coeff = [], [], []
        f_obs = np.zeros(len(fids), dtype=dtype)
        f_has_obs = np.zeros(len(fids), dtype=bool)
        f_noise = np.zeros(len(fids), dtype=np.float64)
        factor_ptr = [0]
        for fi, fid in enumerate(fids):
            fac = graph.factors[fid]
            if fac.observation is not None and fac.noise_var == 0.0:
                # an exact constraint emits infinite precision, which the
                # exclusive-sum trick (total minus own) cannot represent
                raise ValueError(
                    f"factor {fid!r} observes with zero noise; the synchronous "
                    "engine requires positive noise on observed factors"
                )
            f_noise[fi] = fac.noise_var
            if fac.observation is not None:
                f_obs[fi] = fac.observation
                f_has_obs[fi] = True
            for vid in sorted(fac.coeffs):
                e_factor.append(fi)
                e_var.append(var_flat[vid])
                e_coeff.append(fac.coeffs[vid])
            factor_ptr.append(len(e_factor))
        self.n_edges = len(e_factor)
        self.e_factor = np.asarray(e_factor, dtype=np.int64)
        self.e_var = np.asarray(e_var, dtype=np.int64)
        self.e_coeff = np.asarray(e_coeff, dtype=dtype)
        self.e_abs2 = (self.e_coeff.real**2 + self.e_coeff.imag**2).astype(np.float64)
        self.f_obs = f_obs
        self.f_has_obs = f_has_obs
        self.f_noise = f_noise
        self.factor_ptr = np.asarray(factor_ptr, dtype=np.int64)
        self.f_degree = np.diff(self.factor_ptr)

        # variable-major view: stable sort keeps factor order within a variable
        self.vperm = np.argsort(self.e_var, kind="stable")
        sorted_vars = self.e_var[self.vperm]
        # every S/X variable has at least one incident factor (priors/virtuals)
        starts = np.searchsorted(sorted_vars, np.arange(self.n_vars))
        self.var_starts = starts

    def edge_nodes(self, e: int) -> tuple[NodeId, NodeId]:
        fi = int(self.e_factor[e])
        return self.factor_nodes[fi], self.variables[int(self.e_var[e])]


@dataclass(frozen=True)
class MessageState:
    """Messages on every runtime edge, both directions, in compiled edge order."""

    compiled: _Compiled
    fv_mean: np.ndarray
    fv_prec: np.ndarray
    vf_mean: np.ndarray
    vf_prec: np.ndarray

    def _edge_index(self, factor: NodeId, variable: NodeId) -> int:
        c = self.compiled
        for e in range(c.n_edges):
            if c.edge_nodes(e) == (factor, variable):
                return e
        raise KeyError(f"no runtime edge between {factor!r} and {variable!r}")

    def message_from(self, factor: NodeId, variable: NodeId) -> GaussianMessage:
        """Current factor->variable message on one edge (debug/test lookup)."""
        e = self._edge_index(factor, variable)
        return GaussianMessage(self.fv_mean[e].item(), float(self.fv_prec[e]))

    def message_to(self, factor: NodeId, variable: NodeId) -> GaussianMessage:
        """Current variable->factor message on one edge (debug/test lookup)."""
        e = self._edge_index(factor, variable)
        return GaussianMessage(self.vf_mean[e].item(), float(self.vf_prec[e]))


def initialize_messages(graph: FactorGraph) -> MessageState:
    """Starting point of the schedule.

    Degree-1 factors (priors, direct observations) already know their
    message, so their factor->variable edge starts at the factor's direct
    contribution; every other edge starts uninformative.
    """
    c = _Compiled(graph)
    fv_mean = np.zeros(c.n_edges, dtype=c.dtype)
    fv_prec = np.zeros(c.n_edges, dtype=np.float64)
    deg1 = (c.f_degree == 1) & c.f_has_obs
    if np.any(deg1):
        first_edge = c.factor_ptr[:-1][deg1]
        fv_mean[first_edge] = c.f_obs[deg1] / c.e_coeff[first_edge]
        fv_prec[first_edge] = c.e_abs2[first_edge] / c.f_noise[deg1]
    vf_mean = np.zeros(c.n_edges, dtype=c.dtype)
    vf_prec = np.zeros(c.n_edges, dtype=np.float64)
    return MessageState(c, fv_mean, fv_prec, vf_mean, vf_prec)


def _variable_totals(c: _Compiled, fv_mean, fv_prec):
    """Per-variable sums of incoming precisions and precision-weighted means."""
    wm = fv_prec * fv_mean
    prec_sorted = fv_prec[c.vperm]
    wm_sorted = wm[c.vperm]
    tot_prec = np.add.reduceat(prec_sorted, c.var_starts)
    tot_wm = np.add.reduceat(wm_sorted, c.var_starts)
    return tot_prec, tot_wm, wm


def iterate_once(state: MessageState, graph: FactorGraph, config: ScheduleConfig) -> tuple[MessageState, float]:
    """One synchronous full iteration; returns the new state and the residual.

    Raises :class:`NonFiniteMessageError` if any updated message leaves the
    floats (the caller decides whether that is fatal).
    """
    c = state.compiled
    if c.graph is not graph:
        raise ValueError("message state was initialized for a different graph")

    # ---- variable half: v->f from the previous f->v set (exclusive sums) ----
    tot_prec, tot_wm, wm = _variable_totals(c, state.fv_mean, state.fv_prec)
    vf_prec = tot_prec[c.e_var] - state.fv_prec
    # float sums of non-negatives dominate each addend, so this cannot go negative
    vf_wm = tot_wm[c.e_var] - wm
    informative = vf_prec > 0.0
    vf_mean = np.zeros_like(state.fv_mean)
    np.divide(vf_wm, vf_prec, out=vf_mean, where=informative)

    # ---- factor half: f->v from the fresh v->f set --------------------------
    inv_prec = np.zeros(c.n_edges, dtype=np.float64)
    np.divide(1.0, vf_prec, out=inv_prec, where=informative)
    var_term = c.e_abs2 * inv_prec  # |C|^2 sigma^2 per edge
    cm = c.e_coeff * np.where(informative, vf_mean, 0.0)  # C * m per edge
    uninf = (~informative).astype(np.float64)

    starts = c.factor_ptr[:-1]
    f_var_sum = np.add.reduceat(var_term, starts)
    f_cm_sum = np.add.reduceat(cm, starts)
    f_uninf = np.add.reduceat(uninf, starts)

    others_uninf = f_uninf[c.e_factor] - uninf
    usable = (others_uninf < 0.5) & c.f_has_obs[c.e_factor]
    # spread >= factor noise > 0 for every usable edge (compile-checked)
    spread = c.f_noise[c.e_factor] + (f_var_sum[c.e_factor] - var_term)
    new_prec = np.zeros(c.n_edges, dtype=np.float64)
    np.divide(c.e_abs2, spread, out=new_prec, where=usable)
    residual_num = c.f_obs[c.e_factor] - (f_cm_sum[c.e_factor] - cm)
    new_mean = np.zeros(c.n_edges, dtype=c.dtype)
    np.divide(residual_num, c.e_coeff, out=new_mean, where=usable)

    if config.damping > 0.0:
        new_mean = (1.0 - config.damping) * new_mean + config.damping * state.fv_mean
    new_mean = np.where(new_prec > 0.0, new_mean, 0.0)

    bad = ~(np.isfinite(new_mean) & np.isfinite(new_prec))
    if np.any(bad):
        e = int(np.argmax(bad))
        fid, vid = c.edge_nodes(e)
        raise NonFiniteMessageError(fid, vid)

    residual = float(np.max(np.abs(new_mean - state.fv_mean))) if c.n_edges else 0.0
    new_state = MessageState(c, new_mean, new_prec, vf_mean, vf_prec)
    return new_state, residual


def _marginals(state: MessageState):
    c = state.compiled
    tot_prec, tot_wm, _ = _variable_totals(c, state.fv_mean, state.fv_prec)
    has_info = tot_prec > 0.0
    means = np.zeros(c.n_vars, dtype=c.dtype)
    np.divide(tot_wm, tot_prec, out=means, where=has_info)
    with np.errstate(divide="ignore"):
        variances = np.where(has_info, 1.0 / np.where(has_info, tot_prec, 1.0), np.inf)
    uninformative = tuple(v for v, ok in zip(c.variables, has_info) if not ok)
    n = c.graph.n_states
    return means, variances, uninformative, n


def run_to_convergence(
    graph: FactorGraph,
    config: ScheduleConfig | None = None,
    trace: Callable[[int, float], None] | None = None,
) -> GbpResult:
    """Run the synchronous schedule until the residual drops below tolerance.

    Never raises on numerical blow-up: divergence (residual above the
    configured threshold, or a non-finite message) is reported through the
    ``diverged``/``converged`` flags so sweep drivers can count it.
    ``trace(iteration, residual)`` is invoked after each full iteration.
    """
    config = config or ScheduleConfig()
    state = initialize_messages(graph)
    residual = np.inf
    converged = False
    diverged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        try:
            state, residual = iterate_once(state, graph, config)
        except NonFiniteMessageError:
            diverged = True
            break
        if trace is not None:
            trace(iterations, residual)
        if residual <= config.tolerance and iterations >= config.min_iterations:
            converged = True
            break
        if residual > config.divergence_threshold:
            diverged = True
            break

    means, variances, uninformative, n = _marginals(state)
    return GbpResult(
        state_means=means[:n].copy(),
        state_variances=variances[:n].copy(),
        x_means=means[n:].copy(),
        x_variances=variances[n:].copy(),
        iterations_used=iterations,
        converged=converged,
        diverged=diverged,
        final_residual=float(residual),
        uninformative_variables=uninformative,
    )
