"""Scikit-learn style wrappers over the functional solver."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .kernels import Kernel, burg, fermi_dirac, log_barrier, power, quadratic, shannon
from .problems import PhaseRetrieval, PoissonInverse
from .solver import SolverConfig, StepSchedule, run

_KERNELS = {
    "shannon": shannon,
    "burg": burg,
    "log_barrier": log_barrier,
    "fermi_dirac": fermi_dirac,
    "power": power,
    "quadratic": quadratic,
}


class MirrorMapTransformer(TransformerMixin, BaseEstimator):
    """Map rows to dual coordinates with a coordinate kernel.

    Parameters
    ----------
    kernel : {"shannon", "burg", "log_barrier", "fermi_dirac", "power", "quadratic"}
        Kernel family applied to every row.
    """

    def __init__(self, kernel: str = "shannon"):
        self.kernel = kernel

    def _kernel(self, d: int) -> Kernel:
        if self.kernel not in _KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        return _KERNELS[self.kernel](d)

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        self.kernel_ = self._kernel(self.n_features_in_)
        self.kernel_.check_domain(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "kernel_")
        X = check_array(X)
        return self.kernel_.mirror_map(X)

    def inverse_transform(self, Y):
        check_is_fitted(self, "kernel_")
        return self.kernel_.inverse_mirror_map(check_array(Y))


class RRMDRegressor(RegressorMixin, BaseEstimator):
    """Fit a signal ``x`` to measurements ``y_i`` of rows ``a_i`` by shuffled mirror descent.

    ``loss="phase_retrieval"`` fits ``|<a_i, x>| ~ y_i`` with the quartic
    kernel; ``loss="poisson"`` fits ``<a_i, x> ~ y_i`` under the
    Kullback-Leibler loss with the regularised Burg kernel. ``predict``
    returns the corresponding model of ``y``.

    Parameters
    ----------
    loss : {"phase_retrieval", "poisson"}
    scheme : str, default="reshuffle"
    schedule : str, default="capped_harmonic"
    alpha : float, default=1.0
    cap : float, default=1.0
    epochs : int, default=100
    batch_size : int or None
    momentum : float, default=0.0
    seed : int, default=0
    """

    def __init__(self, loss="phase_retrieval", scheme="reshuffle", schedule="capped_harmonic", alpha=1.0,
                 cap=1.0, epochs=100, batch_size=None, momentum=0.0, seed=0):
        self.loss = loss
        self.scheme = scheme
        self.schedule = schedule
        self.alpha = alpha
        self.cap = cap
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.seed = seed

    def _problem(self, X, y):
        if self.loss == "phase_retrieval":
            return PhaseRetrieval(X, y)
        if self.loss == "poisson":
            return PoissonInverse(X, y)
        raise ValueError(f"unknown loss {self.loss!r}")

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.problem_ = self._problem(X, y)
        cfg = SolverConfig(
            scheme=self.scheme,
            schedule=StepSchedule(self.schedule, alpha=self.alpha, cap=self.cap),
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            diagnostics_cadence=0,
        )
        self.result_ = run(self.problem_, cfg)
        self.coef_ = self.result_.x_final
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        s = check_array(X) @ self.coef_
        return np.abs(s) if self.loss == "phase_retrieval" else s

    def transform(self, X):
        """Inner products ``<a_i, x>`` of new rows with the fitted signal."""
        check_is_fitted(self, "coef_")
        return (check_array(X) @ self.coef_)[:, None]
