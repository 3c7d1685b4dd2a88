"""EM driver: alternate regime responsibility updates with per-regime fits.

The series is initialized as equal consecutive windows, one candidate regime
per window. Each iteration: (1) E-step: per-sample posteriors combining a
softmax-over-time prior with per-regime Gaussian densities around the model
means; (2) hardening: argmax labels, dropping regimes that fall below the
minimum sample count and reassigning their rows; (3) refit the time prior;
(4) refit every surviving regime's graph on its hard samples. The loop stops
early when hard labels repeat. Finalization merges regimes whose thresholded
supports are identical (one structural model = one regime), prunes
sub-threshold edges, repairs any residual instantaneous cycle, and relabels
regimes contiguously in order of first appearance.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.optimize as sopt

from .linear import FitConfig, fit_regime_linear, predict_means
from .nonlinear import RegimeNet, extract_graph, fit_regime_nonlinear
from .series import AlignmentParams, RegimeAssignment, TemporalGraph, TimeSeries

_LOG_2PI = float(np.log(2.0 * np.pi))


class FitError(RuntimeError):
    """A per-regime graph fit failed; carries regime slot and iteration."""


@dataclass(frozen=True)
class EmConfig:
    """Configuration of the full EM run."""

    mechanism: str = "linear"  # "linear" | "nonlinear"
    window: int = 300  # initial window width W
    min_regime: int | None = None  # zeta; None = 100 linear, 200 nonlinear
    sparsity: float = 0.05  # L1 / group-L2 weight in the M-step
    threshold: float = 0.4  # final edge threshold
    n_iter_max: int = 20  # EM iteration cap
    seed: int = 0  # drives nonlinear initializations
    normalize_time: bool = True  # time feature t/T instead of raw t
    alignment_ridge: float = 1e-4  # L2 on time-prior coefficients
    hidden: int = 16  # hidden width of per-node networks
    inner_max_iter: int | None = None  # solver cap; None = mechanism default
    merge_duplicates: bool = True  # merge regimes with identical supports

    def __post_init__(self):
        if self.mechanism not in ("linear", "nonlinear"):
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.n_iter_max < 1:
            raise ValueError("n_iter_max must be >= 1")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.threshold < 0 or self.sparsity < 0:
            raise ValueError("threshold and sparsity must be >= 0")
        if self.alignment_ridge < 0:
            raise ValueError("alignment_ridge must be >= 0")
        zeta = self.resolved_min_regime
        if zeta < 1:
            raise ValueError("min_regime must be >= 1")
        if not self.window > zeta:
            raise ValueError(
                f"window ({self.window}) must exceed min_regime ({zeta})"
            )

    @property
    def resolved_min_regime(self) -> int:
        if self.min_regime is not None:
            return int(self.min_regime)
        return 200 if self.mechanism == "nonlinear" else 100

    def fit_config(self) -> FitConfig:
        if self.inner_max_iter is not None:
            cap = self.inner_max_iter
        else:
            cap = 1000 if self.mechanism == "linear" else 300
        return FitConfig(sparsity=self.sparsity, inner_max_iter=cap)


def time_feature(n_samples: int, normalize: bool = True) -> np.ndarray:
    t = np.arange(n_samples, dtype=np.float64)
    return t / n_samples if normalize else t


def init_windows(n_samples: int, window: int) -> np.ndarray:
    """Initial labels: consecutive windows of the given width.

    The number of windows is floor(T / W); the last window absorbs the
    remainder. T must cover at least two windows.
    """
    n_windows = n_samples // window
    if n_windows < 2:
        raise ValueError(
            f"series too short: {n_samples} samples for window {window}"
        )
    labels = np.minimum(np.arange(n_samples) // window, n_windows - 1)
    return labels.astype(int)


def _model_means(model, series: TimeSeries) -> np.ndarray:
    if isinstance(model, TemporalGraph):
        return predict_means(model, series)
    if isinstance(model, RegimeNet):
        return model.predict_means(series)
    raise TypeError(f"unsupported model type {type(model)!r}")


def model_graph(model) -> TemporalGraph:
    """The (unthresholded) temporal graph of a fitted regime model."""
    if isinstance(model, TemporalGraph):
        return model
    if isinstance(model, RegimeNet):
        return extract_graph(model)
    raise TypeError(f"unsupported model type {type(model)!r}")


def regime_log_density(model, series: TimeSeries) -> np.ndarray:
    """Per-sample log density under unit-variance Gaussian residuals.

    Returns one value per row t in [L, T): sum over variables of
    log N(x_t^i; mean_i(t), 1).
    """
    means = _model_means(model, series)
    resid = series.current() - means
    d = series.n_vars
    return -0.5 * d * _LOG_2PI - 0.5 * np.einsum("ti,ti->t", resid, resid)


def estep_update(
    models: list,
    alignment: AlignmentParams,
    series: TimeSeries,
    normalize_time: bool = True,
) -> RegimeAssignment:
    """Soft responsibilities: prior-times-density, normalized per row.

    Rows before max_lag have no density and use the time prior alone.
    """
    T, L = series.n_samples, series.max_lag
    active = alignment.active
    n_slots = alignment.n_slots
    log_post = np.full((T, n_slots), -np.inf)
    log_post[:, active] = alignment.log_prior(time_feature(T, normalize_time))[:, active]
    for u in range(n_slots):
        if active[u]:
            if models[u] is None:
                raise ValueError(f"active regime {u} has no fitted model")
            log_post[L:, u] += regime_log_density(models[u], series)
    peak = log_post.max(axis=1, keepdims=True)
    gamma = np.exp(log_post - peak)
    gamma[:, ~active] = 0.0
    gamma /= gamma.sum(axis=1, keepdims=True)
    return RegimeAssignment(gamma, active.copy())


def fit_alignment(
    assignment: RegimeAssignment,
    normalize_time: bool = True,
    ridge: float = 1e-4,
    grad_tol: float = 1e-6,
    max_iter: int = 500,
) -> AlignmentParams:
    """Fit the softmax-over-time prior to the current responsibilities.

    Maximizes (1/T) sum_t sum_u gamma[t, u] log pi_t(u) minus a small ridge
    on the coefficients, a convex multinomial logistic regression in the
    single time feature. The last active regime is the pinned reference.
    Without the ridge, one-hot blocks are perfectly separable in t and the
    optimum runs to infinite slopes (step-function priors that freeze the
    EM), so the ridge also controls how smoothly regimes hand over.
    """
    gamma = assignment.gamma
    active_idx = np.flatnonzero(assignment.active)
    m = active_idx.size
    T = gamma.shape[0]
    coef = np.zeros((assignment.n_slots, 2))
    if m == 1:
        return AlignmentParams(coef, assignment.active.copy())
    feats = np.column_stack([np.ones(T), time_feature(T, normalize_time)])
    targets = gamma[:, active_idx]  # (T, m), rows sum to 1

    def objective(x):
        full = np.zeros((m, 2))
        full[:-1] = x.reshape(m - 1, 2)
        logits = feats @ full.T  # (T, m)
        peak = logits.max(axis=1, keepdims=True)
        log_z = peak[:, 0] + np.log(np.exp(logits - peak).sum(axis=1))
        ll = (np.sum(targets * logits) - log_z.sum()) / T
        probs = np.exp(logits - log_z[:, None])
        grad_full = (targets - probs).T @ feats / T  # (m, 2)
        grad = -grad_full[:-1].ravel() + ridge * x
        return -ll + 0.5 * ridge * float(x @ x), grad

    x0 = np.zeros(2 * (m - 1))
    sol = sopt.minimize(
        objective, x0, method="L-BFGS-B", jac=True,
        options={"maxiter": max_iter, "gtol": grad_tol, "ftol": 1e-14},
    )
    coef[active_idx[:-1]] = sol.x.reshape(m - 1, 2)
    return AlignmentParams(coef, assignment.active.copy())


def harden_and_filter(
    assignment: RegimeAssignment, min_regime: int
) -> RegimeAssignment:
    """Argmax labels, then drop regimes below the minimum sample count.

    Rows of dropped regimes move to the surviving regime with the highest
    soft responsibility; dropping repeats until every surviving regime holds
    at least min_regime samples. If no regime reaches the bar, the largest
    one (lowest index on ties) is kept so the result stays usable.
    """
    gamma = assignment.gamma
    active = assignment.active.copy()
    n_slots = assignment.n_slots
    while True:
        masked = np.where(active[None, :], gamma, -1.0)
        labels = masked.argmax(axis=1)
        counts = np.bincount(labels, minlength=n_slots)
        counts[~active] = 0
        low = active & (counts < min_regime)
        if not low.any():
            break
        if low.sum() == active.sum():
            keep = int(np.argmax(counts))
            warnings.warn(
                f"every regime fell below {min_regime} samples; keeping "
                f"regime {keep} only"
            )
            active[:] = False
            active[keep] = True
            break
        active[low] = False
    masked = np.where(active[None, :], gamma, -1.0)
    labels = masked.argmax(axis=1)
    hard = np.zeros_like(gamma)
    hard[np.arange(labels.size), labels] = 1.0
    return RegimeAssignment(hard, active)


def score(
    models: list,
    assignment: RegimeAssignment,
    series: TimeSeries,
    sparsity: float,
    threshold: float,
) -> float:
    """Penalized log likelihood: (1/T) sum of assigned log densities minus
    sparsity times the total above-threshold edge count."""
    T, L = series.n_samples, series.max_lag
    total = 0.0
    edges = 0
    hard = assignment.gamma
    for u in np.flatnonzero(assignment.active):
        dens = regime_log_density(models[u], series)
        total += float(dens @ hard[L:, u])
        edges += model_graph(models[u]).with_threshold(threshold).edge_count()
    return total / T - sparsity * edges


def _fit_one(series, weights, cfg: EmConfig, slot: int, iteration: int, warm):
    try:
        if cfg.mechanism == "linear":
            init = warm.matrices if isinstance(warm, TemporalGraph) else None
            graph, info = fit_regime_linear(
                series, weights, cfg.fit_config(), init=init
            )
            return graph, info
        rng = np.random.default_rng([cfg.seed, 7, slot])
        init = warm if isinstance(warm, RegimeNet) else None
        net, info = fit_regime_nonlinear(
            series, weights, cfg.fit_config(), hidden=cfg.hidden, rng=rng,
            init=init,
        )
        return net, info
    except Exception as exc:  # annotate with regime id and iteration
        raise FitError(
            f"regime {slot} fit failed at EM iteration {iteration}: {exc}"
        ) from exc


def _m_step(series, hard: RegimeAssignment, cfg: EmConfig, iteration: int,
            models, prev_weights: dict):
    """Refit every active regime on its hard samples.

    Slots whose sample sets are identical to the previous M-step keep their
    fitted model; the others warm-start from it.
    """
    zeta = cfg.resolved_min_regime
    new_models = [None] * hard.n_slots
    for u in np.flatnonzero(hard.active):
        weights = hard.gamma[:, u]
        if weights.sum() < zeta:
            raise FitError(
                f"regime {u} holds {int(weights.sum())} samples "
                f"(< {zeta}) at EM iteration {iteration}"
            )
        if (
            models[u] is not None
            and u in prev_weights
            and np.array_equal(prev_weights[u], weights)
        ):
            new_models[u] = models[u]
            continue
        new_models[u], _ = _fit_one(series, weights, cfg, u, iteration,
                                    models[u])
        prev_weights[u] = weights.copy()
    return new_models


def _find_cycle(support: np.ndarray) -> list[tuple[int, int]] | None:
    """One directed cycle of the boolean support as edge list, or None."""
    d = support.shape[0]
    color = np.zeros(d, dtype=int)  # 0 unseen, 1 on stack, 2 done
    parent_edge: dict[int, int] = {}

    def dfs(node: int):
        color[node] = 1
        for child in np.nonzero(support[node])[0]:
            child = int(child)
            if color[child] == 1:
                cycle = [(node, child)]
                cur = node
                while cur != child:
                    prev = parent_edge[cur]
                    cycle.append((prev, cur))
                    cur = prev
                cycle.reverse()
                return cycle
            if color[child] == 0:
                parent_edge[child] = node
                found = dfs(child)
                if found:
                    return found
        color[node] = 2
        return None

    for start in range(d):
        if color[start] == 0:
            found = dfs(start)
            if found:
                return found
    return None


def threshold_and_repair(graph: TemporalGraph, threshold: float) -> TemporalGraph:
    """Prune sub-threshold edges; break residual instantaneous cycles.

    While the pruned instantaneous support still has a cycle, the
    smallest-magnitude edge on a found cycle is removed.
    """
    mats = np.array(graph.matrices)
    mats[np.abs(mats) <= threshold] = 0.0
    g0 = mats[0]
    while True:
        cycle = _find_cycle(g0 != 0)
        if cycle is None:
            break
        weakest = min(cycle, key=lambda e: abs(g0[e]))
        g0[weakest] = 0.0
    return TemporalGraph(mats, threshold=threshold)


def _merge_candidate(hard, keep, drop):
    """Assignment with regime `drop` pooled into regime `keep`."""
    gamma = np.array(hard.gamma)
    gamma[:, keep] += gamma[:, drop]
    gamma[:, drop] = 0.0
    active = hard.active.copy()
    active[drop] = False
    return RegimeAssignment(gamma, active)


def _merge_duplicates(series, hard, cfg, models, iteration):
    """Merge regime pairs whose pooled refit does not lower the score.

    Different regimes are different structural models by definition, so two
    fitted regimes that one pooled model explains as well, net of the edge
    penalty, describe one regime (for example a long block split across
    initial windows, or one regime recurring in disjoint blocks). Identical
    thresholded supports are the clearest case: the pooled model predicts
    the same and a whole duplicate edge set leaves the penalty. Requiring a
    non-decreasing score extends that to twins that differ only in a few
    near-threshold edges, while pairs from genuinely different regimes lose
    far more density than the penalty refunds. Samples are pooled into the
    lower slot, which is refit once per accepted merge; the best-scoring
    merge is applied first and the search repeats until none qualifies.
    """
    merged_any = False
    models = list(models)
    while True:
        active_idx = [int(u) for u in np.flatnonzero(hard.active)]
        if len(active_idx) < 2:
            break
        base = score(models, hard, series, cfg.sparsity, cfg.threshold)
        # a refit cannot buy back much more than a few edges of penalty
        slack = cfg.sparsity * 2 * series.n_vars
        best = None
        for a_pos in range(len(active_idx)):
            for b_pos in range(a_pos + 1, len(active_idx)):
                keep, drop = active_idx[a_pos], active_idx[b_pos]
                cand = _merge_candidate(hard, keep, drop)
                # screen with the models as they are before paying a refit
                screen = -np.inf
                for u, other in ((keep, drop), (drop, keep)):
                    fixed = list(models)
                    fixed[other] = None
                    swapped = _merge_candidate(hard, u, other)
                    screen = max(screen, score(
                        fixed, swapped, series, cfg.sparsity, cfg.threshold))
                if screen < base - slack:
                    continue
                refit = list(models)
                refit[drop] = None
                refit[keep], _ = _fit_one(
                    series, cand.gamma[:, keep], cfg, keep, iteration,
                    models[keep],
                )
                s = score(refit, cand, series, cfg.sparsity, cfg.threshold)
                if s >= base - 1e-9 and (best is None or s > best[0]):
                    best = (s, cand, refit)
        if best is None:
            break
        _, hard, models = best
        merged_any = True
    return hard, models, merged_any


@dataclass(frozen=True)
class RunResult:
    """Final output: count, labels, per-regime thresholded graphs, trace."""

    n_regimes: int
    labels: np.ndarray  # (T,) final regime ids, contiguous from 0
    graphs: tuple[TemporalGraph, ...]  # one per regime id
    score_trace: tuple[float, ...]
    config: dict
    diagnostics: dict

    def regime_runs(self, regime: int) -> list[list[int]]:
        """Maximal consecutive runs of the regime as [start, end) pairs."""
        idx = np.flatnonzero(self.labels == regime)
        runs = []
        for t in idx:
            if runs and runs[-1][1] == t:
                runs[-1][1] = int(t) + 1
            else:
                runs.append([int(t), int(t) + 1])
        return runs

    def to_json_dict(self) -> dict:
        return {
            "K": self.n_regimes,
            "labels": self.labels.tolist(),
            "regimes": [
                {
                    "id": k,
                    "indices_runs": self.regime_runs(k),
                    "graph": self.graphs[k].to_json_dict(),
                }
                for k in range(self.n_regimes)
            ],
            "score_trace": list(self.score_trace),
            "config_echo": self.config,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunResult":
        graphs = tuple(
            TemporalGraph.from_json_dict(r["graph"])
            for r in sorted(doc["regimes"], key=lambda r: r["id"])
        )
        return cls(
            n_regimes=int(doc["K"]),
            labels=np.asarray(doc["labels"], dtype=int),
            graphs=graphs,
            score_trace=tuple(doc["score_trace"]),
            config=dict(doc["config_echo"]),
            diagnostics={},
        )

    @classmethod
    def load(cls, path) -> "RunResult":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def run(series: TimeSeries, cfg: EmConfig = EmConfig()) -> RunResult:
    """Full procedure: windows, EM loop, merge, threshold, relabel."""
    T, L = series.n_samples, series.max_lag
    zeta = cfg.resolved_min_regime
    if not zeta > L:
        raise ValueError(f"min_regime ({zeta}) must exceed max_lag ({L})")
    labels0 = init_windows(T, cfg.window)
    n_slots = int(labels0.max()) + 1
    hard = harden_and_filter(
        RegimeAssignment.from_labels(labels0, n_slots), zeta
    )
    models: list = [None] * n_slots
    alignment = None
    prev_weights: dict = {}
    trace: list[float] = []
    converged = False
    merged = False
    iterations = 0
    for it in range(cfg.n_iter_max):
        iterations = it + 1
        if it > 0:
            soft = estep_update(models, alignment, series, cfg.normalize_time)
            new_hard = harden_and_filter(soft, zeta)
            if np.array_equal(new_hard.labels(), hard.labels()):
                converged = True
                break
            hard = new_hard
        alignment = fit_alignment(
            hard, cfg.normalize_time, ridge=cfg.alignment_ridge
        )
        models = _m_step(series, hard, cfg, it, models, prev_weights)
        trace.append(score(models, hard, series, cfg.sparsity, cfg.threshold))
        # Duplicate slots (one regime split across initial windows) would
        # otherwise trade boundary samples for many iterations; merging as
        # soon as the models are regime-shaped, not on the first pass over
        # the raw windows, removes that stall. The score gate keeps
        # genuinely different regimes apart.
        if cfg.merge_duplicates and it >= 1:
            hard, models, did = _merge_duplicates(
                series, hard, cfg, models, it
            )
            if did:
                merged = True
                alignment = fit_alignment(
                    hard, cfg.normalize_time, ridge=cfg.alignment_ridge
                )

    if cfg.merge_duplicates:
        hard, models, did = _merge_duplicates(
            series, hard, cfg, models, iterations
        )
        merged = merged or did

    labels = hard.labels()
    order = []
    for lab in labels:
        if lab not in order:
            order.append(int(lab))
    remap = {old: new for new, old in enumerate(order)}
    final_labels = np.array([remap[int(x)] for x in labels], dtype=int)
    graphs = tuple(
        threshold_and_repair(model_graph(models[old]), cfg.threshold)
        for old in order
    )
    config_echo = dataclasses.asdict(cfg)
    config_echo["max_lag"] = L
    diagnostics = {
        "converged": converged,
        "iterations": iterations,
        "merged_duplicates": merged,
        "initial_windows": n_slots,
    }
    return RunResult(
        n_regimes=len(order),
        labels=final_labels,
        graphs=graphs,
        score_trace=tuple(trace),
        config=config_echo,
        diagnostics=diagnostics,
    )
