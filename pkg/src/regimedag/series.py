"""Core value types: time series windows, temporal graphs, regime assignments.

Conventions used across the package:
  * series values are (T, d) arrays, row t = observation at time t;
  * a temporal graph is a stack [G_0, G_1, ..., G_L] of (d, d) matrices where
    entry (i, j) of G_tau weighs the edge x^i_{t-tau} -> x^j_t, so means
    compose as row vectors: x_t @ G_0 + x_{t-1} @ G_1 + ...;
  * G_0 has a zero diagonal and must be acyclic; lag matrices are unconstrained.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .validation import check_series_array, check_square_stack


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """A multivariate series plus the maximum lag models will condition on."""

    values: np.ndarray  # (T, d) float64, read-only
    max_lag: int  # L >= 0

    def __post_init__(self):
        arr = check_series_array(self.values, self.max_lag)
        object.__setattr__(self, "values", _freeze(arr))
        object.__setattr__(self, "max_lag", int(self.max_lag))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def current(self) -> np.ndarray:
        """Rows t = L..T-1, the targets of every regression."""
        return self.values[self.max_lag:]

    def lag_row(self, t: int) -> np.ndarray:
        """Concatenated context [x_{t-1} | x_{t-2} | ... | x_{t-L}] for row t."""
        if not self.max_lag <= t < self.n_samples:
            raise IndexError(f"t={t} outside [{self.max_lag}, {self.n_samples})")
        if self.max_lag == 0:
            return np.empty(0, dtype=np.float64)
        chunks = [self.values[t - tau] for tau in range(1, self.max_lag + 1)]
        return np.concatenate(chunks)

    def lag_matrix(self) -> np.ndarray:
        """(T-L, d*L) context matrix, row k = lag_row(L + k)."""
        L, d, T = self.max_lag, self.n_vars, self.n_samples
        if L == 0:
            return np.empty((T, 0), dtype=np.float64)
        blocks = [self.values[L - tau: T - tau] for tau in range(1, L + 1)]
        return np.concatenate(blocks, axis=1)

    def design_matrix(self) -> np.ndarray:
        """(T-L, d*(L+1)) matrix [x_t | x_{t-1} | ... | x_{t-L}] for t >= L."""
        return np.concatenate([self.current(), self.lag_matrix()], axis=1)

    @classmethod
    def from_csv(cls, path, max_lag: int) -> "TimeSeries":
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
            has_header = False
            for tok in first.strip().split(","):
                try:
                    float(tok)
                except ValueError:
                    has_header = True
                    break
        data = np.loadtxt(path, delimiter=",", skiprows=1 if has_header else 0, ndmin=2)
        return cls(data, max_lag)

    def to_csv(self, path) -> None:
        header = ",".join(f"x{i}" for i in range(self.n_vars))
        np.savetxt(path, self.values, delimiter=",", header=header, comments="")


@dataclass(frozen=True)
class TemporalGraph:
    """Weighted temporal graph: one instantaneous matrix plus L lag matrices."""

    matrices: np.ndarray  # (L+1, d, d) float64, read-only
    threshold: float = 0.0  # |weight| > threshold defines the binary support

    def __post_init__(self):
        arr = check_square_stack(self.matrices)
        if self.threshold < 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        object.__setattr__(self, "matrices", _freeze(arr))
        object.__setattr__(self, "threshold", float(self.threshold))

    @property
    def n_vars(self) -> int:
        return self.matrices.shape[1]

    @property
    def max_lag(self) -> int:
        return self.matrices.shape[0] - 1

    @property
    def instantaneous(self) -> np.ndarray:
        return self.matrices[0]

    def lag(self, tau: int) -> np.ndarray:
        if not 0 <= tau <= self.max_lag:
            raise IndexError(f"lag {tau} outside [0, {self.max_lag}]")
        return self.matrices[tau]

    def binarized(self) -> np.ndarray:
        """Boolean (L+1, d, d) support: |weight| strictly above threshold."""
        return np.abs(self.matrices) > self.threshold

    def edge_count(self) -> int:
        return int(self.binarized().sum())

    def summary(self) -> np.ndarray:
        """(d, d) boolean summary: edge i->j present at any lag.

        Self edges count only when they come from a lag >= 1; an instantaneous
        graph never carries self loops.
        """
        b = self.binarized()
        out = b.any(axis=0)
        if self.max_lag == 0:
            np.fill_diagonal(out, False)
        else:
            diag_lagged = b[1:].any(axis=0).diagonal().copy()
            out = out.copy()
            np.fill_diagonal(out, diag_lagged)
        return out

    def with_threshold(self, threshold: float) -> "TemporalGraph":
        return dataclasses.replace(self, threshold=threshold)

    def to_json_dict(self) -> dict:
        return {
            "d": self.n_vars,
            "L": self.max_lag,
            "threshold": self.threshold,
            "lags": [m.ravel(order="C").tolist() for m in self.matrices],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TemporalGraph":
        d = int(doc["d"])
        n_lags = int(doc["L"])
        flat = doc["lags"]
        if len(flat) != n_lags + 1:
            raise ValueError(f"expected {n_lags + 1} matrices, got {len(flat)}")
        mats = np.array([np.asarray(m, dtype=np.float64).reshape(d, d) for m in flat])
        return cls(mats, float(doc.get("threshold", 0.0)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path) -> "TemporalGraph":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def summary_graph(graph: TemporalGraph) -> np.ndarray:
    """Functional alias for TemporalGraph.summary()."""
    return graph.summary()


@dataclass(frozen=True)
class RegimeAssignment:
    """Per-sample regime responsibilities plus the active-regime mask.

    `gamma` rows sum to 1 over active regimes (soft) or are one-hot (hard).
    Inactive regimes keep their column (all zero) so indices stay stable.
    """

    gamma: np.ndarray  # (T, K) float64, read-only
    active: np.ndarray  # (K,) bool, read-only

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64)
        a = np.asarray(self.active, dtype=bool)
        if g.ndim != 2:
            raise ValueError(f"gamma must be (T, K), got shape {g.shape}")
        if a.shape != (g.shape[1],):
            raise ValueError("active mask length must match gamma columns")
        if not a.any():
            raise ValueError("at least one regime must stay active")
        if np.any(g < -1e-12):
            raise ValueError("responsibilities must be nonnegative")
        if g[:, ~a].any():
            raise ValueError("inactive regimes must carry zero responsibility")
        rows = g.sum(axis=1)
        if not np.allclose(rows, 1.0, atol=1e-8):
            raise ValueError("responsibility rows must sum to 1")
        object.__setattr__(self, "gamma", _freeze(g))
        object.__setattr__(self, "active", _freeze(a))

    @property
    def n_samples(self) -> int:
        return self.gamma.shape[0]

    @property
    def n_slots(self) -> int:
        return self.gamma.shape[1]

    def labels(self) -> np.ndarray:
        """Hard labels: argmax responsibility, ties resolved to the lowest index."""
        return self.gamma.argmax(axis=1)

    def counts(self) -> np.ndarray:
        """Per-regime hard-assignment counts."""
        return np.bincount(self.labels(), minlength=self.n_slots)

    def is_hard(self) -> bool:
        return bool(np.isin(self.gamma, (0.0, 1.0)).all())

    @classmethod
    def from_labels(cls, labels: np.ndarray, n_slots: int) -> "RegimeAssignment":
        labels = np.asarray(labels, dtype=int)
        gamma = np.zeros((labels.shape[0], n_slots))
        gamma[np.arange(labels.shape[0]), labels] = 1.0
        active = np.zeros(n_slots, dtype=bool)
        active[np.unique(labels)] = True
        return cls(gamma, active)


@dataclass(frozen=True)
class AlignmentParams:
    """Softmax-over-time prior: logit of regime u at time t is a_u * s_t + b_u.

    The time feature s_t is t/T (or raw t when normalization is disabled).
    Inactive regimes get probability exactly 0; the last active regime is the
    reference with coefficients pinned to 0.
    """

    coef: np.ndarray  # (K, 2) columns [intercept, slope], read-only
    active: np.ndarray  # (K,) bool, read-only

    def __post_init__(self):
        c = np.asarray(self.coef, dtype=np.float64)
        a = np.asarray(self.active, dtype=bool)
        if c.ndim != 2 or c.shape[1] != 2:
            raise ValueError(f"coef must be (K, 2), got {c.shape}")
        if a.shape != (c.shape[0],):
            raise ValueError("active mask length must match coef rows")
        if not a.any():
            raise ValueError("at least one regime must stay active")
        if not np.all(np.isfinite(c)):
            raise ValueError("alignment coefficients must be finite")
        object.__setattr__(self, "coef", _freeze(c))
        object.__setattr__(self, "active", _freeze(a))

    @property
    def n_slots(self) -> int:
        return self.coef.shape[0]

    def log_prior(self, time_feature: np.ndarray) -> np.ndarray:
        """(T, K) log prior; inactive columns are -inf."""
        s = np.asarray(time_feature, dtype=np.float64)
        logits = self.coef[:, 0][None, :] + np.outer(s, self.coef[:, 1])
        logits = np.where(self.active[None, :], logits, -np.inf)
        norm = _logsumexp_rows(logits)
        return logits - norm[:, None]

    def prior(self, time_feature: np.ndarray) -> np.ndarray:
        out = np.exp(self.log_prior(time_feature))
        out[:, ~self.active] = 0.0
        return out


def _logsumexp_rows(logits: np.ndarray) -> np.ndarray:
    peak = np.max(logits, axis=1)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    return safe + np.log(np.exp(logits - safe[:, None]).sum(axis=1))
