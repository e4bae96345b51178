"""Scikit-learn style wrapper around the weighted least-squares estimator."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import SystemArchitecture, check_architecture
from .qp import TOL_ABS
from .wlse import (ALPHA_RULES, CapacitySet, MeasurementError, MeasurementSeries,
                   build_measurement_matrix, build_temporal_aggregation, compute_weights,
                   error_report, estimate)


def check_measurements(X, arch: SystemArchitecture, horizon: int) -> tuple:
    """Validate a measurement list against an architecture and horizon."""
    if isinstance(X, MeasurementSeries):
        X = [X]
    try:
        X = tuple(X)
    except TypeError:
        raise TypeError(f"expected a sequence of MeasurementSeries, got {type(X).__name__}") from None
    ids = set(arch.capability_ids())
    seen = set()
    for s in X:
        if not isinstance(s, MeasurementSeries):
            raise TypeError(f"expected MeasurementSeries, got {type(s).__name__}")
        if s.id in seen:
            raise MeasurementError(f"duplicate series id {s.id!r}")
        seen.add(s.id)
        for c in s.capabilities:
            ok = (0 <= c < arch.n_capabilities) if isinstance(c, (int, np.integer)) else c in ids
            if not ok:
                raise MeasurementError(f"series {s.id}: unknown capability {c!r}")
        build_temporal_aggregation(horizon, s.buckets)
    return X


class WLSEStateEstimator(BaseEstimator):
    """Estimate per-capability flows from aggregated, possibly conflicting data.

    ``fit`` takes a list of :class:`~hfgse.wlse.MeasurementSeries`; the
    architecture, horizon and capacities are hyper-parameters.  After fitting,
    ``flows_`` holds the (capabilities x horizon) flow matrix and ``errors_``
    the per-row measurement errors.

    Parameters
    ----------
    architecture : SystemArchitecture
    horizon : int
    dt : float
    capacities : CapacitySet, mapping or None
        Extra per-step bounds; bounds set on the capabilities always apply.
    alpha : float or None
        Flow penalty.  ``None`` derives it with ``alpha_rule``.
    alpha_rule : {"relative", "formula"}
    tol : float
        Absolute and relative solver tolerance.
    max_iter : int or None
    """

    def __init__(self, architecture=None, horizon=12, dt=1.0, capacities=None, alpha=None,
                 alpha_rule="relative", tol=TOL_ABS, max_iter=None):
        self.architecture = architecture
        self.horizon = horizon
        self.dt = dt
        self.capacities = capacities
        self.alpha = alpha
        self.alpha_rule = alpha_rule
        self.tol = tol
        self.max_iter = max_iter

    def _validate_params(self):
        if not isinstance(self.architecture, SystemArchitecture):
            raise TypeError("architecture must be a SystemArchitecture")
        check_architecture(self.architecture)
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.alpha is not None and not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be a nonnegative number, got {self.alpha!r}")
        if self.alpha_rule not in ALPHA_RULES:
            raise ValueError(f"alpha_rule must be one of {ALPHA_RULES}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol!r}")

    def _capacity_set(self):
        caps = self.capacities
        if isinstance(caps, CapacitySet):
            caps = caps.bounds
        return CapacitySet.from_architecture(self.architecture, caps)

    def fit(self, X: Sequence[MeasurementSeries], y=None):
        self._validate_params()
        X = check_measurements(X, self.architecture, int(self.horizon))
        self.result_ = estimate(self.architecture, X, self._capacity_set(), int(self.horizon),
                                dt=self.dt, alpha=self.alpha, alpha_rule=self.alpha_rule,
                                tol_abs=self.tol, tol_rel=self.tol, max_iter=self.max_iter)
        self.flows_ = self.result_.flows
        self.errors_ = self.result_.errors
        self.objective_ = self.result_.objective
        self.alpha_ = self.result_.weights.alpha
        self.n_series_in_ = len(X)
        return self

    def _rows(self, X):
        K = int(self.horizon)
        index = {c: i for i, c in enumerate(self.architecture.capability_ids())}
        blocks = []
        for s in X:
            cols = [c if isinstance(c, (int, np.integer)) else index[c] for c in s.capabilities]
            d_cap = sp.csr_matrix((np.ones(len(cols)), ([0] * len(cols), cols)),
                                  shape=(1, self.architecture.n_capabilities))
            blocks.append(build_measurement_matrix(d_cap, build_temporal_aggregation(K, s.buckets)))
        if not blocks:
            return sp.csr_matrix((0, self.flows_.size))
        return sp.vstack(blocks, format="csr")

    def predict(self, X: Sequence[MeasurementSeries]) -> np.ndarray:
        """Estimated value of every (series, bucket) row of ``X``."""
        check_is_fitted(self, "flows_")
        X = check_measurements(X, self.architecture, int(self.horizon))
        return self._rows(X) @ self.flows_.T.reshape(-1)

    def score(self, X: Sequence[MeasurementSeries], y=None) -> float:
        """Negative weighted squared error of the fitted flows against ``X``."""
        check_is_fitted(self, "flows_")
        X = check_measurements(X, self.architecture, int(self.horizon))
        if not X:
            return 0.0
        resid = self.predict(X) - np.concatenate([s.values for s in X])
        w = compute_weights(X).row_weights
        return -float(w @ resid ** 2)

    def error_report(self, grouping="both"):
        check_is_fitted(self, "result_")
        return error_report(self.result_, grouping=grouping)
