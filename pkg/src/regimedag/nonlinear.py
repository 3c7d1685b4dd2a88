"""Per-node networks with graph extraction from first-layer weight norms.

Each variable i gets its own predictor: one linear-plus-sigmoid embedding of
the instantaneous input x_t (row i of its weight matrix hard-masked so a
variable never predicts itself contemporaneously), one of the lagged input
[x_{t-1} | ... | x_{t-L}], and a two-layer head (sigmoid hidden, linear
output) mapping the concatenated embeddings to the predicted mean. The
temporal graph is read off the first layers: the strength of parent j at lag
tau for child i is the L2 norm of the corresponding input-row of that first
layer. Acyclicity is imposed on the extracted instantaneous matrix through
the same augmented-Lagrangian scheme as the linear learner, with gradients
propagated through the norm extraction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.optimize as sopt
from scipy.special import expit

from .acyclicity import h_value, matrix_exp
from .linear import FitConfig
from .series import TemporalGraph, TimeSeries

_GROUP_EPS = 1e-12  # smoothing inside group-norm gradients only


@dataclass(frozen=True)
class RegimeNet:
    """Parameters of all per-node predictors, stacked over nodes.

    theta_inst[i, j, :] weighs instantaneous input x^j into node i's
    embedding; theta_lag[i, (tau-1)*d + j, :] weighs x^j_{t-tau}. head_w1,
    head_b1, head_w2, head_b2 form each node's two-layer output head.
    """

    theta_inst: np.ndarray  # (d, d, h)
    theta_lag: np.ndarray  # (d, d*L, h)
    head_w1: np.ndarray  # (d, 2h, h)
    head_b1: np.ndarray  # (d, h)
    head_w2: np.ndarray  # (d, h)
    head_b2: np.ndarray  # (d,)

    def __post_init__(self):
        d, d2, h = self.theta_inst.shape
        if d != d2:
            raise ValueError("theta_inst must be (d, d, h)")
        if self.theta_lag.shape[0] != d or self.theta_lag.shape[2] != h:
            raise ValueError("theta_lag must be (d, d*L, h)")
        if self.theta_lag.shape[1] % d:
            raise ValueError("theta_lag second dimension must be d*L")
        if self.head_w1.shape != (d, 2 * h, h):
            raise ValueError("head_w1 must be (d, 2h, h)")
        if self.head_b1.shape != (d, h):
            raise ValueError("head_b1 must be (d, h)")
        if self.head_w2.shape != (d, h):
            raise ValueError("head_w2 must be (d, h)")
        if self.head_b2.shape != (d,):
            raise ValueError("head_b2 must be (d,)")

    @property
    def n_vars(self) -> int:
        return self.theta_inst.shape[0]

    @property
    def max_lag(self) -> int:
        return self.theta_lag.shape[1] // self.n_vars

    @property
    def hidden(self) -> int:
        return self.theta_inst.shape[2]

    def flat(self) -> np.ndarray:
        return np.concatenate([
            self.theta_inst.ravel(), self.theta_lag.ravel(),
            self.head_w1.ravel(), self.head_b1.ravel(),
            self.head_w2.ravel(), self.head_b2.ravel(),
        ])

    @classmethod
    def from_flat(cls, x: np.ndarray, d: int, max_lag: int, hidden: int):
        shapes = _shapes(d, max_lag, hidden)
        arrays = []
        start = 0
        for shape in shapes:
            size = int(np.prod(shape))
            arrays.append(np.asarray(x[start:start + size], dtype=np.float64)
                          .reshape(shape))
            start += size
        return cls(*arrays)

    @classmethod
    def initialized(cls, d: int, max_lag: int, hidden: int,
                    rng: np.random.Generator) -> "RegimeNet":
        """Random start: uniform +-1/sqrt(fan) on weights, zero biases."""
        bound_inst = 1.0 / np.sqrt(d)
        bound_lag = 1.0 / np.sqrt(d * max_lag)
        bound_head = 1.0 / np.sqrt(hidden)
        theta_inst = rng.uniform(-bound_inst, bound_inst, (d, d, hidden))
        theta_inst[np.arange(d), np.arange(d), :] = 0.0
        return cls(
            theta_inst=theta_inst,
            theta_lag=rng.uniform(-bound_lag, bound_lag,
                                  (d, d * max_lag, hidden)),
            head_w1=rng.uniform(-bound_head, bound_head,
                                (d, 2 * hidden, hidden)),
            head_b1=np.zeros((d, hidden)),
            head_w2=rng.uniform(-bound_head, bound_head, (d, hidden)),
            head_b2=np.zeros(d),
        )

    def forward(self, current: np.ndarray, lagged: np.ndarray) -> np.ndarray:
        out, _ = _forward(self, current, lagged)
        return out

    def predict_means(self, series: TimeSeries) -> np.ndarray:
        """Predicted means for rows t in [L, T)."""
        if series.n_vars != self.n_vars or series.max_lag != self.max_lag:
            raise ValueError("network and series shapes disagree")
        return self.forward(series.current(), series.lag_matrix())


def _shapes(d: int, max_lag: int, hidden: int):
    return (
        (d, d, hidden), (d, d * max_lag, hidden),
        (d, 2 * hidden, hidden), (d, hidden), (d, hidden), (d,),
    )


def _forward(net: RegimeNet, current: np.ndarray, lagged: np.ndarray):
    # tensordot/matmul forms of the per-node contractions keep the работа in
    # single BLAS calls; einsum falls back to loops at these shapes
    emb_inst = expit(np.tensordot(current, net.theta_inst, axes=([1], [1])))
    emb_lag = expit(np.tensordot(lagged, net.theta_lag, axes=([1], [1])))
    both = np.concatenate([emb_inst, emb_lag], axis=2)  # (N, d, 2h)
    pre = np.matmul(both.transpose(1, 0, 2), net.head_w1).transpose(1, 0, 2)
    hid = expit(pre + net.head_b1[None])
    out = (hid * net.head_w2[None]).sum(axis=2) + net.head_b2[None]
    return out, (emb_inst, emb_lag, both, hid)


def group_norms(theta: np.ndarray) -> np.ndarray:
    """L2 norm over the feature axis: (d, cols, h) -> (d, cols)."""
    return np.sqrt(np.square(theta).sum(axis=2))


def extract_graph(net: RegimeNet) -> TemporalGraph:
    """Graph weights from first-layer norms: parent j of child i at lag tau
    gets entry (j, i) of G_tau, the norm of the matching input row."""
    d, L = net.n_vars, net.max_lag
    norms_inst = group_norms(net.theta_inst)  # (child, parent)
    norms_lag = group_norms(net.theta_lag)  # (child, d*L)
    mats = np.zeros((L + 1, d, d))
    mats[0] = norms_inst.T
    for tau in range(1, L + 1):
        mats[tau] = norms_lag[:, (tau - 1) * d:tau * d].T
    return TemporalGraph(mats, threshold=0.0)


def network_objective(
    net: RegimeNet,
    series: TimeSeries,
    weights: np.ndarray,
    sparsity: float,
    rho: float,
    mu: float,
) -> tuple[float, np.ndarray]:
    """Penalized weighted least squares with exact flat gradient.

    value = (1/T) sum_t w_t ||x_t - prediction_t||^2
          + sparsity * (sum of all first-layer group norms)
          + (rho/2) h(W_0)^2 + mu h(W_0)

    with W_0 the extracted instantaneous matrix. The gradient is packed the
    same way as RegimeNet.flat(); masked self-rows report zero gradient.
    """
    T, L = series.n_samples, series.max_lag
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (T,):
        raise ValueError(f"weights must have shape ({T},), got {w.shape}")
    return _objective_cached(
        net, series.current(), series.lag_matrix(), w[L:], T,
        sparsity, rho, mu,
    )


def _objective_cached(net, X, Xlag, w, T, sparsity, rho, mu):
    d, h = net.n_vars, net.hidden
    out, (emb_inst, emb_lag, both, hid) = _forward(net, X, Xlag)
    resid = out - X
    value = float(np.einsum("t,ti,ti->", w, resid, resid)) / T

    dout = (2.0 / T) * w[:, None] * resid  # (N, d)
    g_head_b2 = dout.sum(axis=0)
    g_head_w2 = np.einsum("ti,tim->im", dout, hid)
    dhid = dout[:, :, None] * net.head_w2[None]
    dhid_pre = dhid * hid * (1.0 - hid)
    g_head_b1 = dhid_pre.sum(axis=0)
    g_head_w1 = np.einsum("tiz,tim->izm", both, dhid_pre)
    dboth = np.einsum("tim,izm->tiz", dhid_pre, net.head_w1)
    demb_inst = dboth[:, :, :h] * emb_inst * (1.0 - emb_inst)
    demb_lag = dboth[:, :, h:] * emb_lag * (1.0 - emb_lag)
    g_theta_inst = np.einsum("tj,tim->ijm", X, demb_inst)
    g_theta_lag = np.einsum("tj,tim->ijm", Xlag, demb_lag)

    # group-L2 sparsity over every (node, input) first-layer row
    ss_inst = np.square(net.theta_inst).sum(axis=2)  # (child, parent)
    ss_lag = np.square(net.theta_lag).sum(axis=2)
    value += sparsity * (np.sqrt(ss_inst).sum() + np.sqrt(ss_lag).sum())
    g_theta_inst += sparsity * net.theta_inst / np.sqrt(
        ss_inst + _GROUP_EPS)[:, :, None]
    g_theta_lag += sparsity * net.theta_lag / np.sqrt(
        ss_lag + _GROUP_EPS)[:, :, None]

    # acyclicity on W_0 = sqrt(ss_inst).T; h sees the squared norms, so the
    # chain rule through the norm is division-free:
    # dh/dtheta[i, j, :] = 2 exp(ss_inst.T)[i, j] theta[i, j, :]
    h_val = h_value(np.sqrt(ss_inst).T)
    value += 0.5 * rho * h_val * h_val + mu * h_val
    factor = (rho * h_val + mu) * matrix_exp(ss_inst.T)
    g_theta_inst += 2.0 * factor[:, :, None] * net.theta_inst

    idx = np.arange(d)
    g_theta_inst[idx, idx, :] = 0.0
    grad = np.concatenate([
        g_theta_inst.ravel(), g_theta_lag.ravel(),
        g_head_w1.ravel(), g_head_b1.ravel(),
        g_head_w2.ravel(), g_head_b2.ravel(),
    ])
    if not np.isfinite(value):
        raise FloatingPointError("network objective diverged")
    return value, grad


def fit_regime_nonlinear(
    series: TimeSeries,
    weights: np.ndarray,
    cfg: FitConfig = FitConfig(),
    hidden: int = 16,
    rng: np.random.Generator | None = None,
    init: RegimeNet | None = None,
) -> tuple[RegimeNet, dict]:
    """Fit one regime's networks under the augmented-Lagrangian scheme.

    Args:
        series: data with max_lag = L.
        weights: (T,) per-sample weights.
        cfg: solver configuration (sparsity, rho schedule, caps).
        hidden: embedding and head width h.
        rng: drives the random start when no warm start is given.
        init: optional warm start from a previous fit.

    Returns:
        (net, info): fitted networks and diagnostics dict with keys
        h, rho, mu, n_outer, converged.
    """
    d, L, T = series.n_vars, series.max_lag, series.n_samples
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (T,):
        raise ValueError(f"weights must have shape ({T},), got {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if init is None:
        if rng is None:
            rng = np.random.default_rng()
        net0 = RegimeNet.initialized(d, L, hidden, rng)
    else:
        if init.n_vars != d or init.max_lag != L or init.hidden != hidden:
            raise ValueError("warm start does not match the requested shape")
        net0 = init
    X, Xlag, w_eff = series.current(), series.lag_matrix(), w[L:]

    def objective(x, rho, mu):
        net = RegimeNet.from_flat(x, d, L, hidden)
        return _objective_cached(net, X, Xlag, w_eff, T, sparsity=cfg.sparsity,
                                 rho=rho, mu=mu)

    # only the self-rows of theta_inst are pinned; everything else is free
    n_params = sum(int(np.prod(s)) for s in _shapes(d, L, hidden))
    bounds = [(None, None)] * n_params
    for i in range(d):
        base = (i * d + i) * hidden
        for m in range(hidden):
            bounds[base + m] = (0.0, 0.0)

    theta = net0.flat()
    rho, mu = cfg.rho_init, 0.0
    h_current = np.inf
    n_outer = 0
    for _ in range(cfg.max_outer):
        n_outer += 1
        h_new, theta_new = None, theta
        while rho < cfg.rho_max:
            # each rung restarts from the latest iterate (path following)
            sol = sopt.minimize(
                objective, theta_new, args=(rho, mu), method="L-BFGS-B",
                jac=True, bounds=bounds,
                options={"maxiter": cfg.inner_max_iter},
            )
            theta_new = sol.x
            net_new = RegimeNet.from_flat(theta_new, d, L, hidden)
            h_new = h_value(extract_graph(net_new).instantaneous)
            if h_new > cfg.progress_ratio * h_current:
                rho *= cfg.rho_growth
            else:
                break
        theta = theta_new
        h_current = h_new if h_new is not None else h_current
        mu += rho * h_current
        if h_current <= cfg.h_tol or rho >= cfg.rho_max:
            break

    converged = h_current <= cfg.h_tol
    if not converged:
        warnings.warn(
            f"acyclicity not reached: h={h_current:.3e} at rho cap; "
            "returning the best iterate"
        )
    net = RegimeNet.from_flat(theta, d, L, hidden)
    info = {"h": float(h_current), "rho": rho, "mu": mu,
            "n_outer": n_outer, "converged": bool(converged)}
    return net, info
