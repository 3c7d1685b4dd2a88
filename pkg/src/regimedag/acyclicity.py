"""Differentiable acyclicity penalty for weighted directed graphs.

h(G) = trace(exp(G * G)) - d is zero exactly when the support of G is a DAG
and positive otherwise; it is smooth, so it can serve as an equality
constraint inside an augmented Lagrangian. The matrix exponential is computed
by scaling-and-squaring with a truncated Taylor core.
"""

from __future__ import annotations

import numpy as np

# Taylor order for the scaled exponential. After scaling, ||A/2^s||_1 <= 0.5,
# so the series remainder is below 0.5^(ORDER+1)/(ORDER+1)! which is far under
# double precision round-off for ORDER = 16.
_TAYLOR_ORDER = 16
_SCALING_TARGET = 0.5


def matrix_exp(matrix: np.ndarray) -> np.ndarray:
    """exp(A) for a square matrix, scaling-and-squaring + truncated Taylor.

    Args:
        matrix: (d, d) array.

    Returns:
        (d, d) matrix exponential.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix_exp expects a square matrix, got {a.shape}")
    norm = np.abs(a).sum(axis=0).max()  # induced 1-norm
    n_squarings = 0
    if norm > _SCALING_TARGET:
        n_squarings = int(np.ceil(np.log2(norm / _SCALING_TARGET)))
        a = a / (2.0 ** n_squarings)
    # Horner evaluation of sum_{k<=ORDER} A^k / k!
    d = a.shape[0]
    result = np.eye(d) + a / _TAYLOR_ORDER
    for k in range(_TAYLOR_ORDER - 1, 0, -1):
        result = np.eye(d) + (a @ result) / k
    for _ in range(n_squarings):
        result = result @ result
    return result


def h_value(graph: np.ndarray) -> float:
    """Acyclicity penalty trace(exp(G * G)) - d; zero iff support(G) is a DAG."""
    g = np.asarray(graph, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"h_value expects a square matrix, got {g.shape}")
    return float(np.trace(matrix_exp(g * g)) - g.shape[0])


def h_grad(graph: np.ndarray) -> np.ndarray:
    """Exact gradient of h_value: exp(G * G)^T * 2G (elementwise product)."""
    g = np.asarray(graph, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"h_grad expects a square matrix, got {g.shape}")
    return matrix_exp(g * g).T * (2.0 * g)


def is_dag(graph: np.ndarray, tol: float = 1e-8) -> bool:
    """Whether the support of the weighted graph is acyclic (via h_value)."""
    return h_value(graph) <= tol
