"""Estimator front-ends with a scikit-learn-flavoured surface.

Both classes estimate the state ``s`` of the linear model

    x = A s + n,        n ~ N(0, sigma_n_sq I)
    y = H x + m,        m ~ CN(0, sigma_m_sq I)      (optional channel layer)

with an i.i.d. zero-mean Gaussian prior on ``s``.  ``fit(A, y)`` runs the
solver and stores the posterior in ``coef_`` / ``coef_var_``;
``predict(A_new)`` maps states back to measurement space.  Hyper-parameters
follow the usual constructor/get_params/set_params conventions so the objects
compose with generic tooling (cloning, grid search over damping, ...).

`GbpStateEstimator` runs message passing on the factor graph;
`MmseStateEstimator` runs the dense closed-form solve.  On a converged run
the two agree to solver tolerance, which is exactly the cross-check the test
suite leans on.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .engine import ScheduleConfig, run_to_convergence
from .graph import build_bilayer_graph, build_estimation_graph
from .oracle import DenseModel, mmse_posterior
from .validation import as_sparse_matrix, as_vector

__all__ = ["GbpStateEstimator", "MmseStateEstimator"]


class _LinearStateEstimator(BaseEstimator):
    """Shared fit plumbing; subclasses implement ``_solve``."""

    def __init__(self, sigma_n_sq=1e-4, sigma_m_sq=0.0, sigma_s_sq=1e4):
        self.sigma_n_sq = sigma_n_sq
        self.sigma_m_sq = sigma_m_sq
        self.sigma_s_sq = sigma_s_sq

    def fit(self, A, y, *, channel=None):
        """Estimate the state from observations.

        Parameters
        ----------
        A : (M, N) sparse or dense
            Measurement matrix.
        y : (M,) or (L,) vector
            Direct measurements when ``channel`` is None, received symbols
            otherwise.
        channel : (L, M) sparse or dense, optional
            Channel matrix between measurements and observations.
        """
        a = as_sparse_matrix(A, "A")
        h = None if channel is None else as_sparse_matrix(channel, "channel")
        n_obs = a.shape[0] if h is None else h.shape[0]
        y = as_vector(np.asarray(y), n_obs, "y")
        self.n_states_in_ = a.shape[1]
        self._solve(a, h, y)
        return self

    def predict(self, A):
        """Measurements implied by the fitted state: ``A @ coef_``."""
        if not hasattr(self, "coef_"):
            raise AttributeError("estimator is not fitted yet; call fit first")
        a = as_sparse_matrix(A, "A")
        if a.shape[1] != self.n_states_in_:
            raise ValueError(f"A has {a.shape[1]} columns, expected {self.n_states_in_}")
        return a @ self.coef_


class MmseStateEstimator(_LinearStateEstimator):
    """Closed-form linear MMSE solve (the reference answer)."""

    def _solve(self, a, h, y):
        model = DenseModel(
            A=a.toarray(),
            y=y,
            sigma_n_sq=self.sigma_n_sq,
            sigma_s_sq=self.sigma_s_sq,
            H=None if h is None else h.toarray(),
            sigma_m_sq=self.sigma_m_sq,
        )
        means, variances = mmse_posterior(model)
        self.coef_ = means
        self.coef_var_ = variances


class GbpStateEstimator(_LinearStateEstimator):
    """Message-passing solve on the factor graph.

    Extra attributes after ``fit``: ``n_iter_``, ``converged_``,
    ``diverged_``, ``x_means_`` (posterior over the intermediate
    measurements when a channel layer is present).
    """

    def __init__(self, sigma_n_sq=1e-4, sigma_m_sq=0.0, sigma_s_sq=1e4,
                 max_iterations=1000, tolerance=1e-8, damping=0.0):
        super().__init__(sigma_n_sq=sigma_n_sq, sigma_m_sq=sigma_m_sq, sigma_s_sq=sigma_s_sq)
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        self.damping = damping

    def _solve(self, a, h, y):
        if h is None:
            graph = build_estimation_graph(a, y, self.sigma_n_sq, self.sigma_s_sq)
        else:
            graph = build_bilayer_graph(a, h, y, self.sigma_n_sq, self.sigma_m_sq, self.sigma_s_sq)
        config = ScheduleConfig(
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
            damping=self.damping,
        )
        result = run_to_convergence(graph, config)
        self.coef_ = result.state_means
        self.coef_var_ = result.state_variances
        self.x_means_ = result.x_means
        self.n_iter_ = result.iterations_used
        self.converged_ = result.converged
        self.diverged_ = result.diverged
        self.final_residual_ = result.final_residual
