"""Dense closed-form MMSE reference and numerical observability test.

For the chain ``x = A s + n``, ``y = H x + m`` with ``s ~ N(0, sigma_s^2 I)``,
``n ~ N(0, Sigma_n)``, ``m ~ N(0, sigma_m^2 I)``, the effective observation is
``y = (HA) s + (Hn + m)`` with noise covariance ``Sigma = H Sigma_n H^H +
sigma_m^2 I``, and the posterior (MMSE) estimate is

    s_hat = [Sigma_s^{-1} + (HA)^H Sigma^{-1} (HA)]^{-1} (HA)^H Sigma^{-1} y.

Two algebraically independent routes are provided — the information form
above and joint-Gaussian conditioning via the matrix-inversion-lemma form —
so either can audit the other.  Everything is dense; this module is the
ground truth for desk-scale problems, not a large-scale solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg, sparse

from .validation import as_vector, check_positive_scalar, check_variances, is_complex_dtype

__all__ = [
    "DenseModel",
    "ObservabilityResult",
    "IllConditionedModelError",
    "mmse_posterior",
    "mmse_estimate",
    "mmse_estimate_joint_form",
    "baseline_estimate_no_cran",
    "is_observable",
]


class IllConditionedModelError(ValueError):
    """The effective noise covariance is numerically singular."""


def _dense(mat):
    if sparse.issparse(mat):
        return mat.toarray()
    return np.asarray(mat)


@dataclass(frozen=True)
class DenseModel:
    """Inputs of the closed-form estimate.

    ``H=None`` means the measurements are observed directly (the no-channel
    baseline); it is the exact ``sigma_m^2 -> 0`` limit with ``H = I``, i.e.
    ``Sigma = Sigma_n``.  ``sigma_n_sq`` may be scalar or per-measurement.
    """

    A: np.ndarray
    y: np.ndarray
    sigma_n_sq: float | np.ndarray
    sigma_s_sq: float
    H: np.ndarray | None = None
    sigma_m_sq: float = 0.0

    def __post_init__(self):
        a = _dense(self.A)
        if a.ndim != 2:
            raise ValueError(f"A must be 2-dimensional, got shape {a.shape}")
        object.__setattr__(self, "A", a)
        m, _ = a.shape
        h = None if self.H is None else _dense(self.H)
        if h is not None:
            if h.ndim != 2 or h.shape[1] != m:
                raise ValueError(f"H must have {m} columns, got shape {None if h is None else h.shape}")
        object.__setattr__(self, "H", h)
        rows = m if h is None else h.shape[0]
        object.__setattr__(self, "y", as_vector(self.y, rows, "y"))
        object.__setattr__(self, "sigma_n_sq", check_variances(self.sigma_n_sq, m, "sigma_n_sq"))
        object.__setattr__(self, "sigma_s_sq", check_positive_scalar(self.sigma_s_sq, "sigma_s_sq"))
        object.__setattr__(
            self, "sigma_m_sq", check_positive_scalar(self.sigma_m_sq, "sigma_m_sq", allow_zero=True)
        )

    @property
    def n_states(self) -> int:
        return self.A.shape[1]


def _effective(model: DenseModel):
    """(G, Sigma, y) of the collapsed single-stage observation model."""
    a = model.A
    if model.H is None:
        g = a
        cov = np.diag(model.sigma_n_sq.astype(complex if is_complex_dtype(a) else float))
    else:
        h = model.H
        g = h @ a
        cov = (h * model.sigma_n_sq) @ h.conj().T
        cov = cov + model.sigma_m_sq * np.eye(h.shape[0], dtype=cov.dtype)
    return g, cov, model.y


def _solve_pos(mat, rhs, what: str):
    try:
        out = linalg.solve(mat, rhs, assume_a="pos")
    except linalg.LinAlgError as err:
        raise IllConditionedModelError(f"{what} is numerically singular: {err}") from None
    if not np.all(np.isfinite(out)):
        raise IllConditionedModelError(f"{what} produced non-finite solve output")
    return out


def mmse_posterior(model: DenseModel) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and marginal variances via the information form."""
    g, cov, y = _effective(model)
    n = model.n_states
    w = _solve_pos(cov, np.column_stack([g, y]), "effective noise covariance")
    wg, wy = w[:, :n], w[:, n]
    info = g.conj().T @ wg
    info[np.diag_indices(n)] += 1.0 / model.sigma_s_sq
    rhs = g.conj().T @ wy
    aug = _solve_pos(info, np.column_stack([rhs, np.eye(n, dtype=info.dtype)]), "posterior information matrix")
    means = aug[:, 0]
    variances = np.real(np.diag(aug[:, 1:])).copy()
    return means, variances


def mmse_estimate(model: DenseModel) -> np.ndarray:
    """Posterior mean (information form)."""
    return mmse_posterior(model)[0]


def mmse_estimate_joint_form(model: DenseModel) -> np.ndarray:
    """Posterior mean via joint-Gaussian conditioning.

    ``s_hat = sigma_s^2 G^H (sigma_s^2 G G^H + Sigma)^{-1} y`` — an
    algebraically independent route used to cross-check the information form.
    """
    g, cov, y = _effective(model)
    gram = model.sigma_s_sq * (g @ g.conj().T) + cov
    return model.sigma_s_sq * (g.conj().T @ _solve_pos(gram, y, "joint observation covariance"))


def baseline_estimate_no_cran(A, x_noisy, sigma_n_sq, sigma_s_sq) -> np.ndarray:
    """MMSE estimate when measurements arrive at the estimator untouched."""
    a = _dense(A)
    model = DenseModel(A=a, y=x_noisy, sigma_n_sq=sigma_n_sq, sigma_s_sq=sigma_s_sq, H=None)
    return mmse_estimate(model)


class ObservabilityResult(NamedTuple):
    observable: bool
    rank: int
    threshold: float


def is_observable(matrix, *, rank_tol_scale: float = 1e3) -> ObservabilityResult:
    """Numerical-rank observability test of an effective observation matrix.

    The rank counts singular values above
    ``max(shape) * eps * s_max * rank_tol_scale``; the inflated default scale
    absorbs the enormous dynamic range of distance-based channel gains.  The
    system is observable iff the numerical rank equals the column count.
    """
    rank_tol_scale = check_positive_scalar(rank_tol_scale, "rank_tol_scale")
    mat = _dense(matrix)
    if mat.ndim != 2:
        raise ValueError(f"matrix must be 2-dimensional, got shape {mat.shape}")
    n = mat.shape[1]
    if mat.size == 0:
        return ObservabilityResult(n == 0, 0, 0.0)
    sv = np.linalg.svd(mat, compute_uv=False)
    s_max = float(sv[0]) if sv.size else 0.0
    threshold = max(mat.shape) * np.finfo(np.float64).eps * s_max * rank_tol_scale
    rank = int(np.sum(sv > threshold))
    return ObservabilityResult(rank == n, rank, float(threshold))
