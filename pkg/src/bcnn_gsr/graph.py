"""Weighted graphs, Laplacians and Chebyshev polynomial filters."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

POWER_TOL = 1e-6
POWER_MAX_ITER = 10_000


class GraphError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Power iteration did not converge; ``estimate`` holds the last iterate."""

    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = estimate


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph with its (scaled) Laplacian.

    ``L`` is the Laplacian actually used downstream, i.e. already divided by
    its trace when the graph was built with trace normalization.
    """

    coords: np.ndarray
    W: np.ndarray
    L: np.ndarray
    L_scaled: np.ndarray
    lambda_max: float
    trace_normalized: bool = False
    _subgraphs: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def L_scaled_sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.L_scaled)

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.W[i])


def laplacian(W: np.ndarray) -> np.ndarray:
    return np.diag(W.sum(axis=1)) - W


def largest_eigenvalue(L, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Starts from the all-ones vector; if that vector is (numerically) in the
    null space, as it is for any Laplacian, it is tilted deterministically.
    Stops once the residual ||Lv - lambda v|| drops below ``tol * lambda``.
    """
    n = L.shape[0]
    v = np.ones(n)
    if np.linalg.norm(L @ v) <= 1e-12 * max(1.0, abs(L).max()) * n:
        v = v + np.arange(n) / n
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = L @ v
        lam = float(v @ w)
        # Rayleigh-quotient residual bounds the distance to an eigenvalue.
        if np.linalg.norm(w - lam * v) <= tol * abs(lam):
            return lam
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations", lam
    )


def _assemble(coords: np.ndarray, W: np.ndarray, normalize_trace: bool) -> Graph:
    if not np.any(W > 0):
        raise GraphError("disconnected/empty graph: no edges survive thresholding")
    L = laplacian(W)
    if normalize_trace:
        L = L / np.trace(L)
    lam = largest_eigenvalue(L)
    L_scaled = (2.0 / lam) * L - np.eye(W.shape[0])
    for a in (coords, W, L, L_scaled):
        a.setflags(write=False)
    return Graph(
        coords=coords, W=W, L=L, L_scaled=L_scaled, lambda_max=lam,
        trace_normalized=normalize_trace,
    )


def build_rbf_graph(
    coords,
    kernel_width: float = 0.5,
    edge_threshold: float = 0.75,
    normalize_trace: bool = True,
) -> Graph:
    """Gaussian-kernel graph over 2-D points.

    W_ij = exp(-d_ij^2 / (2 kernel_width^2)), dropped when below
    ``edge_threshold``.
    """
    coords = np.array(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[0] < 2:
        raise GraphError("need at least 2 coordinates")
    if kernel_width <= 0:
        raise GraphError("kernel_width must be positive")
    diff = coords[:, None, :] - coords[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    W = np.exp(-d2 / (2.0 * kernel_width**2))
    W[W < edge_threshold] = 0.0
    np.fill_diagonal(W, 0.0)
    return _assemble(coords, W, normalize_trace)


def from_adjacency(W, coords=None, normalize_trace: bool = False) -> Graph:
    W = np.array(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 2:
        raise GraphError("adjacency must be square with at least 2 nodes")
    if not np.allclose(W, W.T, rtol=0, atol=0) or np.any(W < 0):
        raise GraphError("adjacency must be symmetric and nonnegative")
    if np.any(np.diag(W) != 0):
        raise GraphError("adjacency must have zero diagonal")
    if coords is None:
        coords = np.zeros((W.shape[0], 2))
    return _assemble(np.array(coords, dtype=float), W, normalize_trace)


def induced_subgraph(g: Graph, nodes) -> Graph:
    """Subgraph on ``nodes`` (in the given order) with recomputed spectra.

    Trace normalization is carried over when the parent Laplacian was
    normalized. Results are memoized on the parent graph.
    """
    key = tuple(int(i) for i in nodes)
    if key in g._subgraphs:
        return g._subgraphs[key]
    idx = np.asarray(key, dtype=int)
    if idx.size < 2:
        raise GraphError("induced subgraph needs at least 2 nodes")
    if len(set(idx.tolist())) != idx.size or idx.min() < 0 or idx.max() >= g.n:
        raise GraphError("node indices must be distinct and in range")
    W = g.W[np.ix_(idx, idx)].copy()
    sub = _assemble(g.coords[idx].copy(), W, g.trace_normalized)
    g._subgraphs[key] = sub
    return sub


def bfs_order(g: Graph, source: int, limit: int | None = None) -> list[int]:
    """Breadth-first visiting order from ``source``; neighbors in index order."""
    seen = {source}
    order = [source]
    queue = deque([source])
    while queue and (limit is None or len(order) < limit):
        u = queue.popleft()
        for v in g.neighbors(u):
            v = int(v)
            if v not in seen:
                seen.add(v)
                order.append(v)
                queue.append(v)
                if limit is not None and len(order) >= limit:
                    break
    return order


# -- Chebyshev filters -------------------------------------------------------


def _check_beta(beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.size < 1:
        raise ValueError("beta must be a nonempty 1-D coefficient vector")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    return beta


def chebyshev_basis(L_scaled, x, order: int) -> np.ndarray:
    """Stack [T_0(L)x, ..., T_P(L)x] along a new axis ``-2``.

    ``L_scaled`` is an (n, n) matrix (dense or sparse) or a batch of dense
    matrices with shape (..., n, n) matching the leading dims of ``x``.
    ``x`` has shape (..., n); the result has shape (..., order + 1, n).
    """
    x = np.asarray(x, dtype=float)
    if sp.issparse(L_scaled):
        def mv(v):
            return np.asarray(L_scaled @ v.T).T if v.ndim > 1 else L_scaled @ v
    else:
        L_scaled = np.asarray(L_scaled)
        if L_scaled.ndim == 2:
            def mv(v):
                return v @ L_scaled.T
        else:
            def mv(v):
                return np.einsum("...ij,...j->...i", L_scaled, v)
    if L_scaled.shape[-1] != x.shape[-1]:
        raise ValueError(
            f"dimension mismatch: operator is {L_scaled.shape[-1]}, signal is {x.shape[-1]}"
        )
    out = np.empty(x.shape[:-1] + (order + 1, x.shape[-1]))
    out[..., 0, :] = x
    if order >= 1:
        out[..., 1, :] = mv(x)
    for p in range(2, order + 1):
        out[..., p, :] = 2.0 * mv(out[..., p - 1, :]) - out[..., p - 2, :]
    return out


def chebyshev_apply(L_scaled, beta, x) -> np.ndarray:
    """sum_p beta_p T_p(L_scaled) x via the three-term recursion."""
    beta = _check_beta(beta)
    x = np.asarray(x, dtype=float)
    if L_scaled.shape[-1] != x.shape[-1]:
        raise ValueError(
            f"dimension mismatch: operator is {L_scaled.shape[-1]}, signal is {x.shape[-1]}"
        )
    if sp.issparse(L_scaled):
        def mv(v):
            return L_scaled @ v
    else:
        L_scaled = np.asarray(L_scaled)

        def mv(v):
            return L_scaled @ v
    t_prev, t_cur = x, None
    acc = beta[0] * x
    if beta.size > 1:
        t_cur = mv(x)
        acc = acc + beta[1] * t_cur
    for p in range(2, beta.size):
        t_prev, t_cur = t_cur, 2.0 * mv(t_cur) - t_prev
        acc = acc + beta[p] * t_cur
    return acc


def chebyshev_matrices(L_scaled, order: int) -> np.ndarray:
    """Dense T_0..T_P of a (batch of) scaled Laplacian(s): shape (..., P+1, n, n)."""
    L = L_scaled.toarray() if sp.issparse(L_scaled) else np.asarray(L_scaled, dtype=float)
    n = L.shape[-1]
    out = np.empty(L.shape[:-2] + (order + 1, n, n))
    out[..., 0, :, :] = np.eye(n)
    if order >= 1:
        out[..., 1, :, :] = L
    for p in range(2, order + 1):
        out[..., p, :, :] = 2.0 * L @ out[..., p - 1, :, :] - out[..., p - 2, :, :]
    return out


def chebyshev_operator(L_scaled, beta) -> np.ndarray:
    """Dense filter matrix sum_p beta_p T_p(L_scaled)."""
    beta = _check_beta(beta)
    T = chebyshev_matrices(L_scaled, beta.size - 1)
    return np.tensordot(beta, T, axes=(0, 0))


# -- plain-text persistence --------------------------------------------------


def save_graph(g: Graph, edges_path, coords_path) -> None:
    """Write ``i j w`` edge lines (i < j) and ``i x y`` coordinate lines."""
    rows, cols = np.nonzero(np.triu(g.W, k=1))
    with open(edges_path, "w") as fh:
        for i, j in zip(rows, cols):
            fh.write(f"{i} {j} {g.W[i, j]:.17g}\n")
    with open(coords_path, "w") as fh:
        for i, (x, y) in enumerate(g.coords):
            fh.write(f"{i} {x:.17g} {y:.17g}\n")


def load_graph(edges_path, coords_path, normalize_trace: bool = True) -> Graph:
    coords = {}
    for line in Path(coords_path).read_text().splitlines():
        if line.strip():
            i, x, y = line.split()
            coords[int(i)] = (float(x), float(y))
    n = len(coords)
    if sorted(coords) != list(range(n)):
        raise GraphError("coordinate ids must be 0..N-1")
    W = np.zeros((n, n))
    for line in Path(edges_path).read_text().splitlines():
        if line.strip():
            i, j, w = line.split()
            i, j = int(i), int(j)
            W[i, j] = W[j, i] = float(w)
    xy = np.array([coords[i] for i in range(n)])
    return from_adjacency(W, xy, normalize_trace=normalize_trace)
