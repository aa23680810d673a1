"""Seeded Monte Carlo experiment drivers and result serialization.

Three drivers share one trial pipeline (measurement configuration -> truth ->
noisy measurements -> device placement -> channel -> received symbols ->
solvers):

* ``fig4``  - RMSE of the through-the-channel estimate against the baseline
  that reads the measurements directly, swept over the measurement noise
  level, summarized as boxplot statistics per noise level.
* ``fig5``  - fraction of trials whose effective observation matrix ``H A``
  is rank-deficient, swept over a (redundancy, receiver-density) grid with
  coupled randomness: within a trial, a denser sweep point literally extends
  the channel matrix of a sparser one by extra rows, so the unobservable
  indicator can only switch off as density grows.
* ``single`` - one fully instrumented trial (topology dump, factor-graph edge
  list, residual trace, estimate-by-estimate comparison against the dense
  closed-form answer).

Every random quantity is keyed by ``(master_seed, experiment, sweep label,
trial, stage, entity index)``, so adding sweep points, growing an experiment,
or changing the parallelism degree never perturbs existing trials.  With a
fixed configuration the emitted files are byte-identical across runs and
worker counts.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .cran import (
    Partition,
    dump_topology,
    gen_channel,
    place_devices,
    scale_measurement_rows,
    transmit,
)
from .engine import ScheduleConfig, run_to_convergence
from .graph import build_bilayer_graph
from .grid import (
    IEEE30_KIND_RMS,
    GridCase,
    build_measurement_matrix,
    generate_config,
    generate_true_state,
    ieee30,
    load_case,
    normalization_constants,
    reference_kind_rms,
    simulate_measurements,
)
from .oracle import baseline_estimate_no_cran, is_observable, mmse_posterior, DenseModel
from .seeds import derive, spawn_rng

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "TrialResult",
    "default_config",
    "parse_config_text",
    "config_from_mapping",
    "load_config",
    "rmse_printed",
    "rmse_conventional",
    "tukey_box",
    "run_fig4_experiment",
    "run_fig5_experiment",
    "run_single",
    "emit_results",
    "parse_results",
    "write_json_record",
]

EXPERIMENTS = ("fig4", "fig5", "single")

FIG4_COLUMNS = (
    "sigma_n", "trial", "observable", "converged", "iterations",
    "rmse_printed", "rmse_conventional", "rmse_cran_vs_truth", "rmse_baseline_vs_truth",
)
FIG4_SUMMARY_COLUMNS = (
    "sigma_n", "n_trials", "n_unobservable", "n_nonconverged", "n_used",
    "whisker_low", "q1", "median", "q3", "whisker_high", "n_outliers", "outliers",
)
FIG5_COLUMNS = (
    "m_over_n", "l_over_m", "m", "l", "trials", "n_unobservable", "fraction_unobservable",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on; all randomness flows from ``master_seed``."""

    experiment: str
    trials: int = 1000
    redundancy: tuple[float, ...] = (3.0,)
    rrh_density: tuple[float, ...] = (1.0,)
    snr_linear: float = 10.0
    sigma_n: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4)
    partition_w: int = 4
    partition_q: int = 4
    alpha: float = 2.0
    d0: float | None = None
    sigma_s_sq: float = 1e4
    max_iterations: int = 3000
    tolerance: float = 1e-9
    damping: float = 0.3
    master_seed: int = 1
    true_state_mode: str = "uniform"
    case: str = "ieee30"
    out: str | None = None
    format: str = "csv"
    n_jobs: int = 1
    spot_check_fraction: float = 0.05

    def __post_init__(self):
        for name in ("redundancy", "rrh_density", "sigma_n"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not (isinstance(self.trials, int) and self.trials >= 1):
            raise ValueError("trials must be an integer >= 1")
        if not self.redundancy or any((not math.isfinite(v)) or v < 1.0 for v in self.redundancy):
            raise ValueError("redundancy must be a non-empty list of values >= 1")
        if not self.rrh_density or any((not math.isfinite(v)) or v <= 0.0 for v in self.rrh_density):
            raise ValueError("rrh_density must be a non-empty list of values > 0")
        if not self.sigma_n:
            raise ValueError("sigma_n must be a non-empty list")
        if any((not math.isfinite(s)) or s <= 0 for s in self.sigma_n):
            raise ValueError("every sigma_n entry must be finite and > 0")
        if not (self.snr_linear > 0 and math.isfinite(self.snr_linear)):
            raise ValueError("snr_linear must be finite and > 0")
        Partition(self.partition_w, self.partition_q)  # bounds check
        if not (self.alpha > 0):
            raise ValueError("alpha must be > 0")
        if self.d0 is not None and not (self.d0 > 0):
            raise ValueError("d0 must be > 0 (or omitted for the cell diagonal)")
        if not (self.sigma_s_sq > 0 and math.isfinite(self.sigma_s_sq)):
            raise ValueError("sigma_s_sq must be finite and > 0")
        ScheduleConfig(self.max_iterations, self.tolerance, self.damping)  # bounds check
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ValueError("master_seed must be a non-negative integer")
        if self.true_state_mode not in ("uniform", "powerflow"):
            raise ValueError("true_state_mode must be 'uniform' or 'powerflow'")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be 'csv' or 'json'")
        if not (isinstance(self.n_jobs, int) and self.n_jobs >= 1):
            raise ValueError("n_jobs must be an integer >= 1")
        if not (0.0 <= self.spot_check_fraction <= 1.0):
            raise ValueError("spot_check_fraction must lie in [0, 1]")
        if self.experiment == "fig4" and (len(self.redundancy) != 1 or len(self.rrh_density) != 1):
            raise ValueError("fig4 sweeps sigma_n only; give single redundancy and rrh_density values")

    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(self.max_iterations, self.tolerance, self.damping)


def default_config(experiment: str) -> ExperimentConfig:
    """Paper-operating-point defaults for each experiment."""
    if experiment == "fig4":
        return ExperimentConfig(experiment="fig4")
    if experiment == "fig5":
        return ExperimentConfig(
            experiment="fig5",
            redundancy=(1.5, 2.0, 2.5, 3.0, 3.4),
            rrh_density=(0.2, 0.4, 0.6, 0.8, 1.0, 1.2),
        )
    if experiment == "single":
        return ExperimentConfig(experiment="single", trials=1, sigma_n=(1e-2,))
    raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")


# -- config file ---------------------------------------------------------------

_LIST_FIELDS = {"redundancy", "rrh_density", "sigma_n"}
_INT_FIELDS = {"trials", "max_iterations", "master_seed", "n_jobs"}
_FLOAT_FIELDS = {"snr_linear", "alpha", "sigma_s_sq", "tolerance", "damping", "spot_check_fraction"}
_STR_FIELDS = {"experiment", "true_state_mode", "case", "out", "format"}


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines to a string mapping; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValueError(f"config line {lineno}: empty key or value")
        if key in out:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def config_from_mapping(mapping: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from string key/values, starting from ``base`` defaults.

    Recognized keys are the dataclass fields, with ``partition = WxQ``
    standing in for the two partition fields and ``d0 = auto`` for the
    sub-rectangle diagonal default.
    """
    mapping = dict(mapping)
    if base is None:
        if "experiment" not in mapping:
            raise ValueError("config must set 'experiment' (fig4 | fig5 | single)")
        base = default_config(mapping["experiment"])
    updates: dict = {}
    for key, value in mapping.items():
        if key == "partition":
            parts = value.lower().split("x")
            if len(parts) != 2:
                raise ValueError(f"partition must look like '4x4', got {value!r}")
            try:
                updates["partition_w"], updates["partition_q"] = int(parts[0]), int(parts[1])
            except ValueError:
                raise ValueError(f"partition must look like '4x4', got {value!r}") from None
            continue
        if key == "d0":
            updates["d0"] = None if value.lower() in ("auto", "none") else _parse_float(key, value)
            continue
        if key in _LIST_FIELDS:
            items = [p.strip() for p in value.split(",") if p.strip()]
            updates[key] = tuple(_parse_float(key, p) for p in items)
        elif key in _INT_FIELDS:
            try:
                updates[key] = int(value)
            except ValueError:
                raise ValueError(f"config key {key!r} must be an integer, got {value!r}") from None
        elif key in _FLOAT_FIELDS:
            updates[key] = _parse_float(key, value)
        elif key in _STR_FIELDS:
            updates[key] = value
        else:
            known = sorted(_LIST_FIELDS | _INT_FIELDS | _FLOAT_FIELDS | _STR_FIELDS | {"partition", "d0"})
            raise ValueError(f"unknown config key {key!r}; known keys: {', '.join(known)}")
    return replace(base, **updates)


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ValueError(f"config key {key!r} must be a number, got {value!r}") from None


def load_config(path) -> ExperimentConfig:
    return config_from_mapping(parse_config_text(Path(path).read_text()))


# -- metrics -------------------------------------------------------------------


def rmse_printed(a, b) -> float:
    """``(1/N) * ||a - b||_2`` — the normalization the result tables report."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b)) / a.shape[0]


def rmse_conventional(a, b) -> float:
    """``||a - b||_2 / sqrt(N)`` — the root of the mean squared error."""
    a = np.asarray(a)
    return rmse_printed(a, b) * math.sqrt(a.shape[0])


def tukey_box(values) -> dict:
    """Five-number boxplot summary with 1.5*IQR whiskers.

    Whiskers end at the most extreme data points inside the fences; anything
    beyond is listed as an outlier.
    """
    vals = np.sort(np.asarray(list(values), dtype=float))
    if vals.size == 0:
        return {"whisker_low": None, "q1": None, "median": None, "q3": None,
                "whisker_high": None, "n_outliers": 0, "outliers": ""}
    q1, med, q3 = (float(q) for q in np.percentile(vals, [25.0, 50.0, 75.0]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = vals[(vals >= lo_fence) & (vals <= hi_fence)]
    outliers = vals[(vals < lo_fence) | (vals > hi_fence)]
    return {
        "whisker_low": float(inside[0]),
        "q1": q1,
        "median": med,
        "q3": q3,
        "whisker_high": float(inside[-1]),
        "n_outliers": int(outliers.size),
        "outliers": ";".join(f"{v:.17g}" for v in outliers),
    }


# -- shared trial pipeline -----------------------------------------------------


@dataclass(frozen=True)
class TrialResult:
    """Per-trial outcome; RMSE fields are set iff observable and converged."""

    trial_index: int
    observable: bool
    converged: bool
    iterations: int
    rmse_cran_vs_baseline: float | None = None
    rmse_cran_vs_truth: float | None = None
    rmse_baseline_vs_truth: float | None = None


@lru_cache(maxsize=8)
def _case_for(ref: str) -> GridCase:
    return ieee30() if ref == "ieee30" else load_case(ref)


@lru_cache(maxsize=8)
def _kind_rms_for(ref: str) -> dict:
    if ref == "ieee30":
        return IEEE30_KIND_RMS
    return reference_kind_rms(_case_for(ref))


def _prepare_measurement_layer(cfg: ExperimentConfig, base, m_over_n: float):
    """Config, scaled matrix, normalization constants for one trial."""
    case = _case_for(cfg.case)
    config = generate_config(case, m_over_n, derive(base, "config"))
    consts = normalization_constants(config, _kind_rms_for(cfg.case))
    a = scale_measurement_rows(build_measurement_matrix(case, config), consts)
    return case, config, a


def _effective_channel(topology_channel):
    """Drop receiver rows that hear nothing (they carry pure noise and no
    structure); returns the reduced matrix and the surviving row count."""
    counts = np.diff(topology_channel.indptr)
    keep = np.flatnonzero(counts > 0)
    if keep.size == topology_channel.shape[0]:
        return topology_channel, topology_channel.shape[0]
    return topology_channel[keep, :], int(keep.size)


def _fig4_trial(cfg: ExperimentConfig, sigma_n: float, trial: int) -> TrialResult:
    base = derive(cfg.master_seed, "fig4", f"sigma_n={sigma_n:.17g}", trial)
    case, config, a = _prepare_measurement_layer(cfg, base, cfg.redundancy[0])
    s_true = generate_true_state(case, derive(base, "truth"), mode=cfg.true_state_mode)
    x = simulate_measurements(case, config, s_true, sigma_n, derive(base, "meas_noise"), matrix=a)

    part = Partition(cfg.partition_w, cfg.partition_q)
    n_rrh = int(round(cfg.rrh_density[0] * config.n_measurements))
    ue, rrh = place_devices(part, case, config, n_rrh, derive(base, "placement"))
    topo = gen_channel(part, ue, rrh, derive(base, "channel"), alpha=cfg.alpha, d0=cfg.d0)
    h, _ = _effective_channel(topo.channel)

    if h.shape[0] == 0 or not is_observable((h @ a).toarray()).observable:
        return TrialResult(trial, observable=False, converged=False, iterations=0)

    y, sigma_m_sq = transmit(h, x, cfg.snr_linear, derive(base, "rx"), noise_scale=sigma_n)
    sigma_n_sq = sigma_n**2
    graph = build_bilayer_graph(a, h, y, sigma_n_sq, sigma_m_sq, cfg.sigma_s_sq)
    result = run_to_convergence(graph, cfg.schedule())
    if not result.converged:
        return TrialResult(trial, observable=True, converged=False, iterations=result.iterations_used)

    if cfg.spot_check_fraction > 0 and spawn_rng(base, "spotcheck").random() < cfg.spot_check_fraction:
        _assert_matches_oracle(a, h, y, sigma_n_sq, sigma_m_sq, cfg.sigma_s_sq, result.state_means, trial)

    baseline = baseline_estimate_no_cran(a, x, sigma_n_sq, cfg.sigma_s_sq)
    return TrialResult(
        trial,
        observable=True,
        converged=True,
        iterations=result.iterations_used,
        rmse_cran_vs_baseline=rmse_printed(result.state_means, baseline),
        rmse_cran_vs_truth=rmse_printed(result.state_means, s_true),
        rmse_baseline_vs_truth=rmse_printed(baseline, s_true),
    )


def _assert_matches_oracle(a, h, y, sigma_n_sq, sigma_m_sq, sigma_s_sq, state_means, trial):
    model = DenseModel(A=a.toarray(), y=y, sigma_n_sq=sigma_n_sq, sigma_s_sq=sigma_s_sq,
                       H=h.toarray(), sigma_m_sq=sigma_m_sq)
    oracle_means, _ = mmse_posterior(model)
    diff = float(np.max(np.abs(state_means - oracle_means)))
    if diff > 1e-6:
        raise RuntimeError(
            f"converged trial {trial} disagrees with the closed-form solve: max abs diff {diff:.3e}"
        )


def _fig4_row(cfg: ExperimentConfig, sigma_n: float, tr: TrialResult) -> dict:
    n = _case_for(cfg.case).n_states
    conv = None if tr.rmse_cran_vs_baseline is None else tr.rmse_cran_vs_baseline * math.sqrt(n)
    return {
        "sigma_n": sigma_n,
        "trial": tr.trial_index,
        "observable": tr.observable,
        "converged": tr.converged,
        "iterations": tr.iterations,
        "rmse_printed": tr.rmse_cran_vs_baseline,
        "rmse_conventional": conv,
        "rmse_cran_vs_truth": tr.rmse_cran_vs_truth,
        "rmse_baseline_vs_truth": tr.rmse_baseline_vs_truth,
    }


def _map_jobs(func, args_list, n_jobs: int):
    """Order-preserving map, serial or across processes; order of results is
    the order of submission either way, so outputs never depend on timing."""
    if n_jobs == 1 or len(args_list) <= 1:
        return [func(*args) for args in args_list]
    workers = min(n_jobs, len(args_list))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(args_list) // (4 * workers))
        return list(pool.map(_star_apply, [(func, args) for args in args_list], chunksize=chunk))


def _star_apply(packed):
    func, args = packed
    return func(*args)


def run_fig4_experiment(cfg: ExperimentConfig) -> tuple[list[dict], list[dict]]:
    """Raw per-trial rows plus per-sigma_n boxplot summaries."""
    if cfg.experiment != "fig4":
        raise ValueError(f"config is for {cfg.experiment!r}, not fig4")
    args = [(cfg, s, t) for s in cfg.sigma_n for t in range(cfg.trials)]
    results = _map_jobs(_fig4_trial, args, cfg.n_jobs)
    rows = [_fig4_row(cfg, s, tr) for (_, s, _), tr in zip(args, results)]

    summaries = []
    for s in cfg.sigma_n:
        here = [tr for (_, sig, _), tr in zip(args, results) if sig == s]
        used = [tr.rmse_cran_vs_baseline for tr in here if tr.observable and tr.converged]
        summary = {
            "sigma_n": s,
            "n_trials": len(here),
            "n_unobservable": sum(not tr.observable for tr in here),
            "n_nonconverged": sum(tr.observable and not tr.converged for tr in here),
            "n_used": len(used),
        }
        summary.update(tukey_box(used))
        summaries.append(summary)
    return rows, summaries


def _fig5_trial(cfg: ExperimentConfig, m_over_n: float, trial: int) -> list[bool]:
    """Observability indicator per density point, with coupled randomness.

    All density points of one trial share the measurement configuration, the
    device placement, and the per-receiver fading streams; the channel at a
    denser point is literally the sparser point's matrix plus extra rows.
    Rank can only grow with extra rows, so the unobservable indicator is
    non-increasing in the receiver count.
    """
    base = derive(cfg.master_seed, "fig5", f"m_over_n={m_over_n:.17g}", trial)
    case, config, a = _prepare_measurement_layer(cfg, base, m_over_n)
    m = config.n_measurements
    l_values = [int(round(lm * m)) for lm in cfg.rrh_density]
    l_max = max(l_values)
    part = Partition(cfg.partition_w, cfg.partition_q)
    ue, rrh = place_devices(part, case, config, l_max, derive(base, "placement"))
    topo = gen_channel(part, ue, rrh, derive(base, "channel"), alpha=cfg.alpha, d0=cfg.d0)
    h_full = topo.channel
    a_dense = a.toarray()
    out = []
    for l in l_values:
        if l == 0:
            out.append(False)
            continue
        effective = h_full[:l, :] @ a_dense
        out.append(bool(is_observable(np.asarray(effective)).observable))
    return out


def run_fig5_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Unobservable fraction per (redundancy, receiver-density) grid point."""
    if cfg.experiment != "fig5":
        raise ValueError(f"config is for {cfg.experiment!r}, not fig5")
    args = [(cfg, mn, t) for mn in cfg.redundancy for t in range(cfg.trials)]
    results = _map_jobs(_fig5_trial, args, cfg.n_jobs)
    case = _case_for(cfg.case)
    rows = []
    for i, mn in enumerate(cfg.redundancy):
        per_trial = results[i * cfg.trials : (i + 1) * cfg.trials]
        m = int(round(mn * case.n_states))
        for j, lm in enumerate(cfg.rrh_density):
            n_unobs = sum(not flags[j] for flags in per_trial)
            rows.append({
                "m_over_n": mn,
                "l_over_m": lm,
                "m": m,
                "l": int(round(lm * m)),
                "trials": cfg.trials,
                "n_unobservable": n_unobs,
                "fraction_unobservable": n_unobs / cfg.trials,
            })
    return rows


def run_single(
    cfg: ExperimentConfig,
    *,
    dump_topology_path=None,
    trace_residuals_path=None,
    dump_edges_path=None,
) -> dict:
    """One instrumented end-to-end trial; returns a JSON-ready record."""
    if cfg.experiment != "single":
        raise ValueError(f"config is for {cfg.experiment!r}, not single")
    sigma_n = cfg.sigma_n[0]
    trial = 0
    base = derive(cfg.master_seed, "single", f"sigma_n={sigma_n:.17g}", trial)
    case, config, a = _prepare_measurement_layer(cfg, base, cfg.redundancy[0])
    s_true = generate_true_state(case, derive(base, "truth"), mode=cfg.true_state_mode)
    x = simulate_measurements(case, config, s_true, sigma_n, derive(base, "meas_noise"), matrix=a)

    part = Partition(cfg.partition_w, cfg.partition_q)
    n_rrh = int(round(cfg.rrh_density[0] * config.n_measurements))
    ue, rrh = place_devices(part, case, config, n_rrh, derive(base, "placement"))
    topo = gen_channel(part, ue, rrh, derive(base, "channel"), alpha=cfg.alpha, d0=cfg.d0)
    if dump_topology_path is not None:
        dump_topology(topo, dump_topology_path)
    h, l_eff = _effective_channel(topo.channel)

    record = {
        "experiment": "single",
        "case": cfg.case,
        "sigma_n": sigma_n,
        "m_over_n": cfg.redundancy[0],
        "l_over_m": cfg.rrh_density[0],
        "snr_linear": cfg.snr_linear,
        "master_seed": cfg.master_seed,
        "n_states": case.n_states,
        "m": config.n_measurements,
        "l": n_rrh,
        "l_effective": l_eff,
        "observable": False,
        "converged": False,
        "diverged": False,
        "iterations": 0,
        "final_residual": None,
        "sigma_m_sq": None,
        "n_graph_edges": None,
        "rmse_printed": None,
        "rmse_conventional": None,
        "rmse_cran_vs_truth": None,
        "rmse_baseline_vs_truth": None,
        "max_abs_gbp_vs_oracle": None,
        "truth": [float(v) for v in s_true],
        "gbp_means": None,
        "gbp_variances": None,
        "oracle_means": None,
        "oracle_variances": None,
        "baseline_means": None,
    }

    if h.shape[0] == 0 or not is_observable((h @ a).toarray()).observable:
        return record
    record["observable"] = True

    y, sigma_m_sq = transmit(h, x, cfg.snr_linear, derive(base, "rx"), noise_scale=sigma_n)
    record["sigma_m_sq"] = sigma_m_sq
    sigma_n_sq = sigma_n**2
    graph = build_bilayer_graph(a, h, y, sigma_n_sq, sigma_m_sq, cfg.sigma_s_sq)
    record["n_graph_edges"] = graph.n_edges
    if dump_edges_path is not None:
        Path(dump_edges_path).write_text(graph.export_edge_list())

    trace_rows: list[tuple[int, float]] = []
    sink = (lambda i, r: trace_rows.append((i, r))) if trace_residuals_path is not None else None
    result = run_to_convergence(graph, cfg.schedule(), trace=sink)
    if trace_residuals_path is not None:
        with open(trace_residuals_path, "w", newline="\n") as fh:
            fh.write("# iteration residual\n")
            for i, r in trace_rows:
                fh.write(f"{i} {r:.17g}\n")

    model = DenseModel(A=a.toarray(), y=y, sigma_n_sq=sigma_n_sq, sigma_s_sq=cfg.sigma_s_sq,
                       H=h.toarray(), sigma_m_sq=sigma_m_sq)
    oracle_means, oracle_vars = mmse_posterior(model)
    baseline = baseline_estimate_no_cran(a, x, sigma_n_sq, cfg.sigma_s_sq)

    record.update({
        "converged": result.converged,
        "diverged": result.diverged,
        "iterations": result.iterations_used,
        "final_residual": result.final_residual,
        "max_abs_gbp_vs_oracle": float(np.max(np.abs(result.state_means - oracle_means))),
        "gbp_means": _reim(result.state_means),
        "gbp_variances": [float(v) for v in result.state_variances],
        "oracle_means": _reim(oracle_means),
        "oracle_variances": [float(v) for v in oracle_vars],
        "baseline_means": _reim(baseline),
    })
    if result.converged:
        record["rmse_printed"] = rmse_printed(result.state_means, baseline)
        record["rmse_conventional"] = rmse_conventional(result.state_means, baseline)
        record["rmse_cran_vs_truth"] = rmse_printed(result.state_means, s_true)
        record["rmse_baseline_vs_truth"] = rmse_printed(baseline, s_true)
    return record


def _reim(vec) -> list:
    """Vector as JSON-friendly [re, im] pairs (im kept even when zero)."""
    vec = np.asarray(vec)
    return [[float(np.real(v)), float(np.imag(v))] for v in vec]


# -- serialization -------------------------------------------------------------


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _parse_cell(text: str):
    if text == "":
        return None
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def emit_results(table: list[dict], path, fmt: str = "csv") -> None:
    """Write a result table; floats carry 17 significant digits.

    The column set is taken from the first row (all rows must agree); row
    order is preserved, so a deterministically assembled table yields a
    byte-identical file.  An empty table is an error and creates no file.
    """
    if not table:
        raise ValueError("refusing to write an empty result table")
    columns = list(table[0].keys())
    for i, row in enumerate(table):
        if list(row.keys()) != columns:
            raise ValueError(f"row {i} columns {list(row)} do not match {columns}")
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(",".join(columns) + "\n")
        for row in table:
            buf.write(",".join(_format_cell(row[c]) for c in columns) + "\n")
        payload = buf.getvalue()
    elif fmt == "json":
        lines = ["["]
        for i, row in enumerate(table):
            cells = ", ".join(f"{json.dumps(c)}: {_json_value(row[c])}" for c in columns)
            lines.append("  {" + cells + ("}," if i < len(table) - 1 else "}"))
        lines.append("]")
        payload = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    with open(path, "w", newline="\n") as fh:
        fh.write(payload)


def _json_value(v) -> str:
    """One JSON scalar, floats at 17 significant digits (same as the CSV)."""
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return json.dumps(v)


def parse_results(path, fmt: str | None = None) -> list[dict]:
    """Read a table written by :func:`emit_results` (format from extension
    unless given)."""
    p = Path(path)
    if fmt is None:
        fmt = "json" if p.suffix.lower() == ".json" else "csv"
    text = p.read_text()
    if fmt == "json":
        return json.loads(text)
    lines = text.splitlines()
    if not lines:
        raise ValueError(f"{path} is empty")
    columns = lines[0].split(",")
    out = []
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != len(columns):
            raise ValueError(f"row {line!r} does not match header {columns}")
        out.append({c: _parse_cell(cell) for c, cell in zip(columns, cells)})
    return out


def write_json_record(record: dict, path) -> None:
    """Single-trial diagnostic record as pretty JSON."""
    with open(path, "w", newline="\n") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")
