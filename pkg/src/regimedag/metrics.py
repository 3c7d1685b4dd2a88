"""Structure and segmentation scoring against a generator manifest.

Conventions declared here (not universal): F1 over directed edges is 1.0
when both graphs are empty and 0.0 when exactly one is; SHD counts a
reversed edge as one edit; regime accuracy is the best injective matching of
predicted to true regimes (Hungarian on the negated contingency table), with
unmatched predicted regimes contributing zero agreement. Per-lag matrices
are scored separately; "lagged" scores average over tau >= 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .series import TemporalGraph, summary_graph


def _as_binary(graph: np.ndarray) -> np.ndarray:
    g = np.asarray(graph)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {g.shape}")
    return g != 0


def edge_f1(pred: np.ndarray, truth: np.ndarray) -> float:
    """F1 over directed edges; 1.0 for two empty graphs, 0.0 for one."""
    p, t = _as_binary(pred), _as_binary(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    n_pred, n_true = int(p.sum()), int(t.sum())
    if n_pred == 0 and n_true == 0:
        return 1.0
    if n_pred == 0 or n_true == 0:
        return 0.0
    tp = int((p & t).sum())
    precision = tp / n_pred
    recall = tp / n_true
    if tp == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def shd(pred: np.ndarray, truth: np.ndarray) -> int:
    """Edit distance between directed graphs, one edit per reversal.

    For every unordered pair the two directed slots are compared together:
    a pure swap costs 1, otherwise each differing slot costs 1. Diagonal
    entries (self-loops of lag matrices) are compared one by one.
    """
    p, t = _as_binary(pred), _as_binary(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    d = p.shape[0]
    total = int(np.sum(np.diag(p) != np.diag(t)))
    for i in range(d):
        for j in range(i + 1, d):
            pair_p = (p[i, j], p[j, i])
            pair_t = (t[i, j], t[j, i])
            if pair_p == pair_t:
                continue
            if pair_p == pair_t[::-1] and pair_p[0] != pair_p[1]:
                total += 1  # reversal
            else:
                total += int(pair_p[0] != pair_t[0]) + int(pair_p[1] != pair_t[1])
    return total


def match_regimes(
    pred_labels: np.ndarray, true_labels: np.ndarray
) -> tuple[dict[int, int], float]:
    """Best injective matching of predicted to true regime ids.

    Returns ({pred_id: true_id} over matched ids, agreement fraction).
    """
    pred = np.asarray(pred_labels, dtype=int)
    true = np.asarray(true_labels, dtype=int)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError("label sequences must be 1-D of equal length")
    if pred.size == 0:
        return {}, 0.0
    n_pred = int(pred.max()) + 1
    n_true = int(true.max()) + 1
    table = np.zeros((n_pred, n_true), dtype=np.int64)
    np.add.at(table, (pred, true), 1)
    rows, cols = linear_sum_assignment(-table)
    matching = {int(r): int(c) for r, c in zip(rows, cols)}
    agreement = int(table[rows, cols].sum())
    return matching, agreement / pred.size


def _lag_scores(pred: TemporalGraph, truth: TemporalGraph):
    if pred.n_vars != truth.n_vars or pred.max_lag != truth.max_lag:
        raise ValueError(
            f"graph shapes disagree: d={pred.n_vars} L={pred.max_lag} vs "
            f"d={truth.n_vars} L={truth.max_lag}"
        )
    pb, tb = pred.binarized(), truth.binarized()
    f1s = [edge_f1(pb[tau], tb[tau]) for tau in range(pred.max_lag + 1)]
    shds = [shd(pb[tau], tb[tau]) for tau in range(pred.max_lag + 1)]
    return f1s, shds


@dataclass(frozen=True)
class EvalReport:
    """All scores of one fit against one manifest."""

    n_regimes_pred: int
    n_regimes_true: int
    regime_accuracy: float
    matching: dict[int, int]
    per_regime: list[dict] = field(default_factory=list)
    inst_f1: float = 0.0  # means over matched regimes
    lag_f1: float | None = None
    summary_f1: float = 0.0
    inst_shd: float = 0.0
    lag_shd: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "K_pred": self.n_regimes_pred,
            "K_true": self.n_regimes_true,
            "regime_accuracy": self.regime_accuracy,
            "matching": {str(k): v for k, v in self.matching.items()},
            "per_regime": self.per_regime,
            "inst_f1": self.inst_f1,
            "lag_f1": self.lag_f1,
            "summary_f1": self.summary_f1,
            "inst_shd": self.inst_shd,
            "lag_shd": self.lag_shd,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)

    @staticmethod
    def csv_header() -> list[str]:
        return ["K_pred", "K_true", "regime_accuracy", "inst_f1", "lag_f1",
                "summary_f1", "inst_shd", "lag_shd"]

    def csv_row(self) -> list[str]:
        doc = self.to_json_dict()
        out = []
        for key in self.csv_header():
            val = doc[key]
            out.append("" if val is None else f"{val:.6g}")
        return out


def evaluate(
    pred_labels: np.ndarray,
    pred_graphs: list[TemporalGraph],
    true_labels: np.ndarray,
    true_graphs: list[TemporalGraph],
) -> EvalReport:
    """Match regimes, then score each matched pair's graphs per lag."""
    matching, accuracy = match_regimes(pred_labels, true_labels)
    per_regime = []
    inst_f1s, lag_f1s, sum_f1s, inst_shds, lag_shds = [], [], [], [], []
    for pred_id in sorted(matching):
        true_id = matching[pred_id]
        if pred_id >= len(pred_graphs) or true_id >= len(true_graphs):
            continue
        pg, tg = pred_graphs[pred_id], true_graphs[true_id]
        f1s, shds = _lag_scores(pg, tg)
        s_f1 = edge_f1(summary_graph(pg), summary_graph(tg))
        entry = {
            "pred_id": pred_id,
            "true_id": true_id,
            "inst_f1": f1s[0],
            "lag_f1": float(np.mean(f1s[1:])) if len(f1s) > 1 else None,
            "summary_f1": s_f1,
            "inst_shd": shds[0],
            "lag_shd": float(np.mean(shds[1:])) if len(shds) > 1 else None,
            "per_lag_f1": f1s,
            "per_lag_shd": shds,
        }
        per_regime.append(entry)
        inst_f1s.append(entry["inst_f1"])
        sum_f1s.append(entry["summary_f1"])
        inst_shds.append(entry["inst_shd"])
        if entry["lag_f1"] is not None:
            lag_f1s.append(entry["lag_f1"])
            lag_shds.append(entry["lag_shd"])
    if not per_regime:
        raise ValueError("no regimes could be matched for graph scoring")
    return EvalReport(
        n_regimes_pred=int(np.max(pred_labels)) + 1,
        n_regimes_true=int(np.max(true_labels)) + 1,
        regime_accuracy=accuracy,
        matching=matching,
        per_regime=per_regime,
        inst_f1=float(np.mean(inst_f1s)),
        lag_f1=float(np.mean(lag_f1s)) if lag_f1s else None,
        summary_f1=float(np.mean(sum_f1s)),
        inst_shd=float(np.mean(inst_shds)),
        lag_shd=float(np.mean(lag_shds)) if lag_shds else None,
    )
