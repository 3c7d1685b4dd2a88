"""Ground-truth generator: regime-switching structural equation models.

Each regime owns one temporal graph. Instantaneous supports follow a
preferential-attachment pattern oriented by arrival order (hence acyclic);
lag supports are Erdos-Renyi draws restricted to pairs that respect the same
topological order, plus self loops at lag 1 with bounded weights. Under that
restriction the one-step dynamics matrix is triangular in the shared order
with the self-lag weights on its diagonal, so every regime is stationary by
construction (spectral radius <= the self-lag cap) while edge weights keep a
magnitude range that stays detectable after thresholding.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .series import TemporalGraph, TimeSeries

LENGTH_CHOICES = (300, 400, 500, 600)
ACTIVATIONS = ("tanh", "leaky_relu", "relu")
LINEAR_WEIGHTS = (0.5, 2.0)
SELF_LAG_WEIGHTS = (0.5, 0.85)
NONLINEAR_WEIGHT_HIGH = 2.0
LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class RegimeSystem:
    """One regime: its generating graph, block length, per-node activations."""

    graph: TemporalGraph
    length: int
    activations: tuple[str, ...] | None = None  # None for linear mechanisms

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"regime length must be >= 1, got {self.length}")
        if self.activations is not None:
            if len(self.activations) != self.graph.n_vars:
                raise ValueError("need one activation per variable")
            unknown = set(self.activations) - set(ACTIVATIONS)
            if unknown:
                raise ValueError(f"unknown activations: {sorted(unknown)}")


@dataclass(frozen=True)
class GeneratorSpec:
    """Complete description of a synthetic dataset draw."""

    n_vars: int
    max_lag: int
    regimes: tuple[RegimeSystem, ...]
    mechanism: str  # "linear" | "nonlinear"
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mechanism not in ("linear", "nonlinear"):
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be > 0")
        if not self.regimes:
            raise ValueError("need at least one regime")
        for reg in self.regimes:
            if reg.graph.n_vars != self.n_vars or reg.graph.max_lag != self.max_lag:
                raise ValueError("regime graph shape disagrees with spec")
            if self.mechanism == "nonlinear" and reg.activations is None:
                raise ValueError("nonlinear regimes need activations")

    @property
    def n_regimes(self) -> int:
        return len(self.regimes)

    @property
    def total_length(self) -> int:
        return sum(r.length for r in self.regimes)

    def boundaries(self) -> list[tuple[int, int]]:
        out, start = [], 0
        for reg in self.regimes:
            out.append((start, start + reg.length))
            start += reg.length
        return out


def instantaneous_dag(
    n_vars: int,
    rng: np.random.Generator,
    attach: int = 4,
    weight_range: tuple[float, float] = LINEAR_WEIGHTS,
    signed: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted acyclic instantaneous graph with preferential attachment.

    Node k (in arrival order) connects to min(attach, k) distinct earlier
    nodes, chosen with probability proportional to degree + 1; edges point
    from earlier to later arrivals, then labels are randomly permuted.

    Returns:
        (weights, positions): (d, d) weight matrix and a (d,) array giving
        each label's position in the generating topological order.
    """
    if n_vars < 2:
        raise ValueError(f"need at least 2 variables, got {n_vars}")
    if attach < 1:
        raise ValueError(f"attach must be >= 1, got {attach}")
    degree = np.zeros(n_vars)
    support = np.zeros((n_vars, n_vars))
    for k in range(1, n_vars):
        pref = degree[:k] + 1.0
        targets = rng.choice(k, size=min(attach, k), replace=False, p=pref / pref.sum())
        for t in targets:
            support[t, k] = 1.0
            degree[t] += 1.0
            degree[k] += 1.0
    perm = rng.permutation(n_vars)  # label of the node at each arrival position
    relabeled = np.zeros_like(support)
    idx = np.ix_(perm, perm)
    relabeled[idx] = support
    positions = np.empty(n_vars, dtype=int)
    positions[perm] = np.arange(n_vars)
    weights = _draw_weights(relabeled.astype(bool), weight_range, signed, rng)
    return weights, positions


def lag_graph(
    n_vars: int,
    rng: np.random.Generator,
    mean_degree: float,
    positions: np.ndarray,
    tau: int,
    weight_range: tuple[float, float] = LINEAR_WEIGHTS,
    self_weight_range: tuple[float, float] = SELF_LAG_WEIGHTS,
    signed: bool = True,
) -> np.ndarray:
    """Random lag-tau matrix whose support respects the given topological order.

    Cross edges are sampled over the position-increasing pairs; self loops are
    allowed only at tau = 1 and get weights from self_weight_range so the
    recursion through time stays a contraction. Per-slot probabilities are
    calibrated so the expected edge count is mean_degree * n_vars.
    """
    if tau < 1:
        raise ValueError(f"lag index must be >= 1, got {tau}")
    d = n_vars
    allow_diag = tau == 1
    n_slots = d * (d + 1) // 2 if allow_diag else d * (d - 1) // 2
    p = min(1.0, mean_degree * d / n_slots)
    draw = rng.random((d, d)) < p
    allowed = positions[:, None] < positions[None, :]
    if allow_diag:
        allowed = allowed | np.eye(d, dtype=bool)
    support = draw & allowed
    weights = _draw_weights(support, weight_range, signed, rng)
    diag_mask = np.eye(d, dtype=bool) & support
    if diag_mask.any():
        lo, hi = self_weight_range
        mags = rng.uniform(lo, hi, size=int(diag_mask.sum()))
        signs = np.sign(weights[diag_mask]) if signed else 1.0
        weights[diag_mask] = signs * mags
    return weights


def _draw_weights(support, weight_range, signed, rng):
    lo, hi = weight_range
    w = rng.uniform(lo, hi, size=support.shape)
    if signed:
        w = w * rng.choice((-1.0, 1.0), size=support.shape)
    return np.where(support, w, 0.0)


def random_system(
    n_vars: int,
    max_lag: int,
    n_regimes: int,
    mechanism: str = "linear",
    seed: int = 0,
    attach: int = 4,
    mean_degree: float = 1.0,
    noise_scale: float = 1.0,
    lengths: tuple[int, ...] | None = None,
) -> GeneratorSpec:
    """Draw a full regime-switching system specification.

    Regime lengths default to independent draws from LENGTH_CHOICES. Linear
    weights are signed with magnitudes in LINEAR_WEIGHTS; nonlinear weights
    are positive in (0, 2] and each node gets one activation.
    """
    if max_lag < 1:
        raise ValueError("generator needs max_lag >= 1")
    rng = np.random.default_rng([seed, 0])
    if lengths is None:
        lengths = tuple(rng.choice(LENGTH_CHOICES) for _ in range(n_regimes))
    elif len(lengths) != n_regimes:
        raise ValueError("need one length per regime")
    nonlinear = mechanism == "nonlinear"
    weight_range = (0.0, NONLINEAR_WEIGHT_HIGH) if nonlinear else LINEAR_WEIGHTS
    self_range = (0.0, SELF_LAG_WEIGHTS[1]) if nonlinear else SELF_LAG_WEIGHTS
    regimes = []
    for _, length in zip(range(n_regimes), lengths):
        inst, positions = instantaneous_dag(
            n_vars, rng, attach=attach, weight_range=weight_range, signed=not nonlinear
        )
        mats = [inst]
        for tau in range(1, max_lag + 1):
            mats.append(
                lag_graph(
                    n_vars, rng, mean_degree, positions, tau,
                    weight_range=weight_range, self_weight_range=self_range,
                    signed=not nonlinear,
                )
            )
        graph = TemporalGraph(np.stack(mats), threshold=0.0)
        acts = tuple(rng.choice(ACTIVATIONS) for _ in range(n_vars)) if nonlinear else None
        regimes.append(RegimeSystem(graph, int(length), acts))
    return GeneratorSpec(
        n_vars=n_vars, max_lag=max_lag, regimes=tuple(regimes),
        mechanism=mechanism, noise_scale=noise_scale, seed=seed,
    )


def _topological_order(support: np.ndarray) -> np.ndarray:
    """Kahn's algorithm over the boolean support; raises on cycles."""
    d = support.shape[0]
    indeg = support.sum(axis=0).astype(int)
    ready = [i for i in range(d) if indeg[i] == 0]
    order = []
    while ready:
        node = ready.pop()
        order.append(node)
        for child in np.nonzero(support[node])[0]:
            indeg[child] -= 1
            if indeg[child] == 0:
                ready.append(int(child))
    if len(order) != d:
        raise ValueError("instantaneous graph has a cycle")
    return np.array(order, dtype=int)


def _activation(name: str, x: float) -> float:
    if name == "tanh":
        return float(np.tanh(x))
    if name == "relu":
        return x if x > 0 else 0.0
    if name == "leaky_relu":
        return x if x > 0 else LEAKY_SLOPE * x
    raise ValueError(f"unknown activation {name!r}")


def simulate(spec: GeneratorSpec) -> tuple[TimeSeries, np.ndarray, dict]:
    """Sample one series from the spec.

    The first max_lag rows are pure noise warm-up. Within each regime block,
    values follow that regime's structural equations; lagged context crosses
    regime boundaries using the raw preceding rows.

    Returns:
        (series, labels, manifest): the series, per-row true regime indices,
        and the JSON-ready manifest describing the draw.
    """
    d, L, T = spec.n_vars, spec.max_lag, spec.total_length
    rng = np.random.default_rng([spec.seed, 1])
    noise = rng.normal(0.0, spec.noise_scale, size=(T, d))
    values = np.zeros((T, d))
    values[:L] = noise[:L]
    labels = np.empty(T, dtype=int)
    bounds = spec.boundaries()
    for idx, (start, end) in enumerate(bounds):
        labels[start:end] = idx

    if spec.mechanism == "linear":
        inverses = [
            np.linalg.inv(np.eye(d) - reg.graph.instantaneous) for reg in spec.regimes
        ]
        for t in range(L, T):
            reg = spec.regimes[labels[t]]
            drive = noise[t].copy()
            for tau in range(1, L + 1):
                drive += values[t - tau] @ reg.graph.lag(tau)
            values[t] = drive @ inverses[labels[t]]
    else:
        orders = [
            _topological_order(reg.graph.instantaneous.astype(bool))
            for reg in spec.regimes
        ]
        for t in range(L, T):
            reg = spec.regimes[labels[t]]
            g = reg.graph
            lag_part = np.zeros(d)
            for tau in range(1, L + 1):
                lag_part += values[t - tau] @ g.lag(tau)
            row = values[t]
            for i in orders[labels[t]]:
                total = lag_part[i] + row @ g.instantaneous[:, i]
                row[i] = _activation(reg.activations[i], total) + noise[t, i]

    if not np.all(np.isfinite(values)):
        raise FloatingPointError("simulation diverged; system is not stationary")
    peak = np.abs(values).max()
    if peak > 1e6:
        warnings.warn(f"simulated values reach |x|={peak:.2e}; check stability")

    manifest = {
        "K": spec.n_regimes,
        "regimes": [
            {
                "start": start,
                "end": end,
                "graph": reg.graph.to_json_dict(),
                "activations": list(reg.activations) if reg.activations else None,
            }
            for (start, end), reg in zip(bounds, spec.regimes)
        ],
        "seed": spec.seed,
        "mechanism": spec.mechanism,
        "noise_scale": spec.noise_scale,
    }
    return TimeSeries(values, L), labels, manifest


def manifest_labels(manifest: dict) -> np.ndarray:
    """Per-row true regime indices from a manifest."""
    total = max(r["end"] for r in manifest["regimes"])
    labels = np.empty(total, dtype=int)
    for idx, reg in enumerate(manifest["regimes"]):
        labels[reg["start"]:reg["end"]] = idx
    return labels


def manifest_graphs(manifest: dict) -> list[TemporalGraph]:
    return [TemporalGraph.from_json_dict(r["graph"]) for r in manifest["regimes"]]


def save_manifest(manifest: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh)


def load_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
