"""Estimator-style front end over the EM driver."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import em
from .series import TimeSeries
from .validation import check_series_array


class RegimeDagLearner(BaseEstimator):
    """Learn regimes and per-regime temporal graphs from one time series.

    Parameters mirror EmConfig; see that class for semantics. After fit:
    labels_ (per-sample regime ids), n_regimes_, graphs_ (one thresholded
    TemporalGraph per regime), result_ (the full RunResult).

    >>> est = RegimeDagLearner(mechanism="linear", max_lag=1)
    >>> labels = est.fit_predict(values)  # doctest: +SKIP
    """

    def __init__(
        self,
        mechanism: str = "linear",
        max_lag: int = 1,
        window: int = 300,
        min_regime: int | None = None,
        sparsity: float = 0.05,
        threshold: float = 0.4,
        n_iter_max: int = 20,
        seed: int = 0,
        normalize_time: bool = True,
        alignment_ridge: float = 1e-4,
        hidden: int = 16,
        inner_max_iter: int | None = None,
        merge_duplicates: bool = True,
    ):
        self.mechanism = mechanism
        self.max_lag = max_lag
        self.window = window
        self.min_regime = min_regime
        self.sparsity = sparsity
        self.threshold = threshold
        self.n_iter_max = n_iter_max
        self.seed = seed
        self.normalize_time = normalize_time
        self.alignment_ridge = alignment_ridge
        self.hidden = hidden
        self.inner_max_iter = inner_max_iter
        self.merge_duplicates = merge_duplicates

    def _config(self) -> em.EmConfig:
        return em.EmConfig(
            mechanism=self.mechanism,
            window=self.window,
            min_regime=self.min_regime,
            sparsity=self.sparsity,
            threshold=self.threshold,
            n_iter_max=self.n_iter_max,
            seed=self.seed,
            normalize_time=self.normalize_time,
            alignment_ridge=self.alignment_ridge,
            hidden=self.hidden,
            inner_max_iter=self.inner_max_iter,
            merge_duplicates=self.merge_duplicates,
        )

    def fit(self, X, y=None) -> "RegimeDagLearner":
        """Run the full EM procedure on a (T, d) series."""
        values = check_series_array(X, max_lag=self.max_lag)
        series = TimeSeries(values, max_lag=self.max_lag)
        result = em.run(series, self._config())
        self.result_ = result
        self.labels_ = result.labels
        self.n_regimes_ = result.n_regimes
        self.graphs_ = list(result.graphs)
        return self

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X).labels_

    def predict(self, X=None) -> np.ndarray:
        """Regime labels of the fitted series (no out-of-sample inference)."""
        if not hasattr(self, "labels_"):
            raise RuntimeError("call fit before predict")
        return self.labels_
