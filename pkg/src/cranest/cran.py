"""Cellular uplink simulation for the measurement-delivery layer.

A unit square is split into ``w x q`` disjoint sub-rectangles.  Each field
device (one per measurement) is placed uniformly inside the sub-rectangle of
its bus; receive points are spread round-robin across sub-rectangles and
placed uniformly inside theirs.  The channel gain between receive point i and
device j is

    h_ij = gamma_ij * d_ij**(-alpha)

with ``gamma`` a circularly-symmetric complex Gaussian CN(0, 1) (its magnitude
is Rayleigh with E|gamma|^2 = 1) and ``d_ij`` the Euclidean distance, clamped
below at ``D_MIN`` so the gain stays bounded when a random placement lands on
top of a device.  Entries with true distance beyond the threshold ``d0`` are
dropped entirely, which is what makes H sparse; ``d0`` defaults to the
diagonal of one sub-rectangle.

Every random draw uses a dedicated substream keyed by the entity's index
(device j, receive point t, channel row i), so enlarging an experiment -- more
receive points, say -- never perturbs the randomness of the entities that were
already there.  Sweeps that grow L therefore see a literal row-prefix of the
largest channel matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .grid import GridCase, MeasurementConfig
from .seeds import derive, spawn_rng
from .validation import as_vector, check_positive_scalar

__all__ = [
    "D_MIN",
    "Partition",
    "CranTopology",
    "place_devices",
    "gen_channel",
    "transmit",
    "normalize_measurements",
    "scale_measurement_rows",
    "dump_topology",
]

#: lower clamp on device-to-receiver distances
D_MIN = 1e-3


@dataclass(frozen=True)
class Partition:
    """``w x q`` split of the unit square: ``w`` columns, ``q`` rows.

    Sub-rectangle ``(i, j)`` spans ``[i/w, (i+1)/w] x [j/q, (j+1)/q]``; its
    linear index is ``j*w + i`` (row-major).
    """

    w: int = 4
    q: int = 4

    def __post_init__(self):
        if not (isinstance(self.w, int) and isinstance(self.q, int)):
            raise TypeError("partition dimensions must be integers")
        if self.w < 1 or self.q < 1:
            raise ValueError(f"partition must be at least 1x1, got {self.w}x{self.q}")

    @property
    def n_cells(self) -> int:
        return self.w * self.q

    @property
    def cell_diagonal(self) -> float:
        """Diagonal length of one sub-rectangle (the default ``d0``)."""
        return math.hypot(1.0 / self.w, 1.0 / self.q)

    def cell_bounds(self, index: int) -> tuple[float, float, float, float]:
        """``(x0, x1, y0, y1)`` of the cell with the given linear index."""
        if not 0 <= index < self.n_cells:
            raise IndexError(f"cell index {index} out of range for {self.w}x{self.q}")
        i, j = index % self.w, index // self.w
        return (i / self.w, (i + 1) / self.w, j / self.q, (j + 1) / self.q)

    def cell_containing(self, x: float, y: float) -> int:
        """Linear index of the cell holding a point of the unit square."""
        i = min(int(x * self.w), self.w - 1)
        j = min(int(y * self.q), self.q - 1)
        return j * self.w + i

    def sample_point(self, index: int, rng: np.random.Generator) -> tuple[float, float]:
        x0, x1, y0, y1 = self.cell_bounds(index)
        return (rng.uniform(x0, x1), rng.uniform(y0, y1))


def _case_cell(partition: Partition, case: GridCase, bus_id: int) -> int:
    """Partition cell of a bus.

    The case file's rectangle map may have been drawn on a different grid than
    the active partition, so the bus's rectangle center is taken as a point of
    the unit square and located in the active partition.  When both grids
    coincide (the common case) this is the identity mapping.
    """
    rows = max(b.rect_row for b in case.buses) + 1
    cols = max(b.rect_col for b in case.buses) + 1
    bus = case.bus(bus_id)
    x = (bus.rect_col + 0.5) / cols
    y = (bus.rect_row + 0.5) / rows
    return partition.cell_containing(x, y)


def place_devices(
    partition: Partition,
    case: GridCase,
    config: MeasurementConfig,
    n_rrh: int,
    seed,
) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates of the M field devices and L receive points.

    Device j sits uniformly inside the sub-rectangle of its measurement's bus
    (a branch-flow meter lives at the from-bus).  Receive point t goes to cell
    ``t mod (w*q)`` -- floor(L / wq) per cell with the remainder filling cells
    in index order -- and is placed uniformly inside it.
    """
    if n_rrh < 0:
        raise ValueError("n_rrh must be non-negative")
    ue = np.empty((config.n_measurements, 2))
    for j, spec in enumerate(config.specs):
        cell = _case_cell(partition, case, spec.bus())
        ue[j] = partition.sample_point(cell, spawn_rng(seed, "ue", j))
    rrh = np.empty((n_rrh, 2))
    for t in range(n_rrh):
        rrh[t] = partition.sample_point(t % partition.n_cells, spawn_rng(seed, "rrh", t))
    return ue, rrh


@dataclass(frozen=True)
class CranTopology:
    """Placed devices, receive points, and the sparsified channel between them."""

    partition: Partition
    ue_positions: np.ndarray
    rrh_positions: np.ndarray
    channel: sparse.csr_array
    alpha: float
    d0: float

    def __post_init__(self):
        ue = np.asarray(self.ue_positions, dtype=float)
        rrh = np.asarray(self.rrh_positions, dtype=float)
        if ue.ndim != 2 or ue.shape[1] != 2:
            raise ValueError("ue_positions must be (M, 2)")
        if rrh.ndim != 2 or rrh.shape[1] != 2:
            raise ValueError("rrh_positions must be (L, 2)")
        if self.channel.shape != (rrh.shape[0], ue.shape[0]):
            raise ValueError("channel shape does not match the placed positions")
        object.__setattr__(self, "ue_positions", ue)
        object.__setattr__(self, "rrh_positions", rrh)

    @property
    def n_devices(self) -> int:
        return self.ue_positions.shape[0]

    @property
    def n_rrh(self) -> int:
        return self.rrh_positions.shape[0]

    def row_counts(self) -> np.ndarray:
        """Stored-neighbor count per receive point."""
        h = self.channel
        return np.diff(h.indptr)

    def empty_rows(self) -> np.ndarray:
        """Receive points that hear no device at all."""
        return np.flatnonzero(self.row_counts() == 0)

    def empty_cols(self) -> np.ndarray:
        """Devices heard by no receive point (these break observability)."""
        counts = np.zeros(self.n_devices, dtype=int)
        np.add.at(counts, self.channel.indices, 1)
        return np.flatnonzero(counts == 0)


def gen_channel(
    partition: Partition,
    ue_positions: np.ndarray,
    rrh_positions: np.ndarray,
    seed,
    *,
    alpha: float = 2.0,
    d0: float | None = None,
    field_mode: str = "complex",
) -> CranTopology:
    """Sparse channel matrix from placed positions.

    The support is purely geometric -- entry (i, j) exists iff the true
    distance is at most ``d0`` -- while the stored gain uses the distance
    clamped at :data:`D_MIN`.  Fading draws come from one substream per row,
    and each row draws a value for every device (used or not), so the fading
    seen by a given (row, device) pair is independent of ``d0`` and of how
    many rows exist.  ``field_mode="real"`` draws N(0, 1) fades instead, for
    real-field end-to-end runs.
    """
    check_positive_scalar(alpha, "alpha")
    if d0 is None:
        d0 = partition.cell_diagonal
    check_positive_scalar(d0, "d0")
    ue = np.asarray(ue_positions, dtype=float)
    rrh = np.asarray(rrh_positions, dtype=float)
    if field_mode not in ("real", "complex"):
        raise ValueError(f"unknown field_mode {field_mode!r}")

    delta = rrh[:, None, :] - ue[None, :, :]
    dist = np.hypot(delta[..., 0], delta[..., 1])
    support = dist <= d0
    gain = np.maximum(dist, D_MIN) ** (-alpha)

    n_rrh, n_ue = dist.shape
    dtype = complex if field_mode == "complex" else float
    rows, cols, vals = [], [], []
    for i in range(n_rrh):
        rng = spawn_rng(seed, "fading", i)
        if field_mode == "complex":
            draws = rng.standard_normal(2 * n_ue)
            gamma = (draws[0::2] + 1j * draws[1::2]) / math.sqrt(2.0)
        else:
            gamma = rng.standard_normal(n_ue)
        (idx,) = np.nonzero(support[i])
        rows.extend([i] * len(idx))
        cols.extend(idx.tolist())
        vals.extend((gamma[idx] * gain[i, idx]).tolist())
    h = sparse.csr_array(
        (np.asarray(vals, dtype=dtype), (np.asarray(rows, dtype=int), np.asarray(cols, dtype=int))),
        shape=(n_rrh, n_ue),
    )
    return CranTopology(partition, ue, rrh, h, float(alpha), float(d0))


def transmit(
    channel: sparse.csr_array,
    x: np.ndarray,
    snr_linear: float,
    seed,
    *,
    noise_scale: float | np.ndarray = 1.0,
) -> tuple[np.ndarray, float]:
    """Received vector ``y = H x + m`` and the calibrated noise variance.

    The receiver noise is calibrated against a reference signal model in which
    transmitted entry j is an uncorrelated zero-mean component of RMS
    ``noise_scale[j]``: the expected received reference power at row i is then
    ``sum_j |h_ij|^2 noise_scale_j^2``, and ``sigma_m_sq`` is the average of
    that over rows, divided by the target SNR.  With the default
    ``noise_scale = 1`` this is the unit-power signal model.  Passing the
    per-device measurement-noise RMS instead pins the receiver noise one SNR
    factor below the sensor-noise floor the devices already carry, so the
    radio link never becomes the accuracy bottleneck as the sensors improve.
    Complex noise is CN(0, s2): real and imaginary parts each N(0, s2/2).
    """
    check_positive_scalar(snr_linear, "snr_linear")
    n_rrh, n_ue = channel.shape
    x = as_vector(np.asarray(x), n_ue, "x")
    scale = np.broadcast_to(np.asarray(noise_scale, dtype=float), (n_ue,))
    if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
        raise ValueError("noise_scale entries must be finite and > 0")
    abs_sq_data = np.abs(channel.data) ** 2 if channel.nnz else np.zeros(0)
    if n_rrh == 0 or float(abs_sq_data.sum()) == 0.0:
        raise ValueError("channel carries no signal energy; cannot calibrate receiver noise")
    abs_sq = sparse.csr_array((abs_sq_data, channel.indices, channel.indptr), shape=channel.shape)
    sigma_m_sq = float(np.sum(abs_sq @ (scale**2))) / n_rrh / snr_linear
    rng = spawn_rng(seed, "rx_noise")
    if np.iscomplexobj(channel.data) or np.iscomplexobj(x):
        draws = rng.standard_normal(2 * n_rrh) * math.sqrt(sigma_m_sq / 2.0)
        noise = draws[0::2] + 1j * draws[1::2]
    else:
        noise = rng.standard_normal(n_rrh) * math.sqrt(sigma_m_sq)
    return channel @ x + noise, sigma_m_sq


def normalize_measurements(x_raw: np.ndarray, constants: np.ndarray) -> np.ndarray:
    """Divide each raw measurement by its kind's reference RMS."""
    x_raw = np.asarray(x_raw, dtype=float)
    constants = as_vector(np.asarray(constants, dtype=float), x_raw.shape[0], "constants")
    if np.any(constants <= 0) or not np.all(np.isfinite(constants)):
        raise ValueError("normalization constants must be finite and > 0")
    return x_raw / constants


def scale_measurement_rows(a: sparse.csr_array, constants: np.ndarray) -> sparse.csr_array:
    """Scale row j of the measurement matrix by 1/constants[j].

    Applying this alongside :func:`normalize_measurements` leaves the state
    posterior unchanged: both sides of ``x_j = a_j . s + n_j`` are divided by
    the same constant.
    """
    constants = as_vector(np.asarray(constants, dtype=float), a.shape[0], "constants")
    if np.any(constants <= 0) or not np.all(np.isfinite(constants)):
        raise ValueError("normalization constants must be finite and > 0")
    return sparse.csr_array(sparse.diags_array(1.0 / constants) @ a)


def dump_topology(topology: CranTopology, sink) -> None:
    """Write the placement and channel in the plain-text dump format.

    One line per device (``UE index x y rect``), one per receive point
    (``RRH index x y rect``), then one per stored channel entry
    (``H rrh ue re im``).  ``sink`` is a path or an open text file.
    """
    close = False
    if hasattr(sink, "write"):
        fh = sink
    else:
        fh = open(sink, "w")
        close = True
    try:
        part = topology.partition
        fh.write(f"# partition {part.w}x{part.q}  alpha {topology.alpha:.17g}  d0 {topology.d0:.17g}\n")
        fh.write("# UE index x y rect\n")
        for j, (x, y) in enumerate(topology.ue_positions):
            fh.write(f"UE {j} {x:.17g} {y:.17g} {part.cell_containing(x, y)}\n")
        fh.write("# RRH index x y rect\n")
        for t, (x, y) in enumerate(topology.rrh_positions):
            fh.write(f"RRH {t} {x:.17g} {y:.17g} {part.cell_containing(x, y)}\n")
        fh.write("# H rrh ue re im\n")
        coo = topology.channel.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            v = coo.data[k]
            fh.write(f"H {coo.row[k]} {coo.col[k]} {v.real:.17g} {v.imag:.17g}\n")
    finally:
        if close:
            fh.close()
