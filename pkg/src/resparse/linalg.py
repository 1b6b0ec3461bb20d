"""Laplacian algebra, pseudoinverse solves, leverage scores, and the
spectral-approximation meter.

Conventions. Laplacian kernels are inferred from connectivity structure
(per-component constant vectors), never from numerical rank. Dense
eigensolves are guarded by a size cap (default 1024, overridable via the
RESPARSE_DENSE_CAP environment variable); above the cap, callers can fall
back to `rayleigh_epsilon`, which reports a labeled lower bound.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .graphs import WeightedGraph, rows_of

__all__ = [
    "ConvergenceError",
    "KernelMismatchError",
    "LeverageEstimates",
    "SizeCapError",
    "dense_cap",
    "exact_leverage",
    "graph_component_labels",
    "laplacian",
    "matrix_component_labels",
    "pinv_apply",
    "pinv_apply_block",
    "quadratic_form",
    "rayleigh_epsilon",
    "row_leverage",
    "sketched_leverage_upper",
    "sketched_row_leverage_upper",
    "spectral_epsilon",
]

DEFAULT_DENSE_CAP = 1024
DEFAULT_CG_TOL = 1e-10

# Numerical tolerances: pattern zero detection, kernel/eigenvalue cutoffs,
# and the snap window that maps near-1 leverages (bridges) to exactly 1.
_PATTERN_TOL = 1e-14
_LEVERAGE_SNAP = 1e-9


class SizeCapError(RuntimeError):
    """Dense solve/eigensolve requested above the configured size cap."""


class ConvergenceError(RuntimeError):
    """Iterative solver failed to reach the requested tolerance."""


class KernelMismatchError(ValueError):
    """Compared matrices do not share a kernel (component structure)."""


def dense_cap() -> int:
    value = os.environ.get("RESPARSE_DENSE_CAP")
    return int(value) if value else DEFAULT_DENSE_CAP


def _check_cap(n: int, cap: int | None):
    cap = dense_cap() if cap is None else cap
    if n > cap:
        raise SizeCapError(f"dense operation on n={n} exceeds cap {cap}")


@dataclass(frozen=True)
class LeverageEstimates:
    """Per-edge (or per-row) leverage upper bounds with provenance.

    Provenance is one of "exact", "sketched", "spanner". Values always lie
    in (0, 1]; for exact graph leverages the sum equals n minus the number
    of connected components.
    """

    values: np.ndarray
    provenance: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if self.provenance not in ("exact", "sketched", "spanner"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if values.size and (values.min() <= 0.0 or values.max() > 1.0 + 1e-12):
            raise ValueError("leverage estimates must lie in (0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def sum(self) -> float:
        return float(self.values.sum())

    def __len__(self) -> int:
        return len(self.values)


def laplacian(g: WeightedGraph) -> np.ndarray:
    """Dense graph Laplacian: sum of w_e b_e b_e^T over edges."""
    L = np.zeros((g.n, g.n))
    for u, v, w in g.edges:
        L[u, u] += w
        L[v, v] += w
        L[u, v] -= w
        L[v, u] -= w
    return L


def quadratic_form(L: np.ndarray, x: np.ndarray) -> float:
    L = np.asarray(L, dtype=float)
    x = np.asarray(x, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError("L must be square")
    if x.shape != (L.shape[0],):
        raise ValueError(f"dimension mismatch: L is {L.shape}, x is {x.shape}")
    return float(x @ L @ x)


def matrix_component_labels(L: np.ndarray) -> np.ndarray:
    """Connected components of the nonzero off-diagonal pattern of L."""
    n = L.shape[0]
    parent = np.arange(n)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    rows, cols = np.nonzero(np.abs(L) > _PATTERN_TOL)
    for i, j in zip(rows, cols):
        if i < j:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
    roots = np.array([find(i) for i in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def graph_component_labels(g: WeightedGraph) -> np.ndarray:
    parent = np.arange(g.n)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v, _ in g.edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
    roots = np.array([find(i) for i in range(g.n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def _component_masks(labels: np.ndarray) -> list[np.ndarray]:
    return [labels == c for c in range(labels.max() + 1)]


def _kernel_masks(L: np.ndarray, labels: np.ndarray) -> list[np.ndarray]:
    """Pattern components whose constant vector lies in ker(L).

    For Laplacians every component qualifies (zero row sums); for general
    PSD matrices (e.g. an identity block) none may.
    """
    scale = max(np.abs(L).max(), 1.0)
    masks = []
    for mask in _component_masks(labels):
        if np.abs(L[mask].sum(axis=1)).max() <= 1e-9 * scale:
            masks.append(mask)
    return masks


def _project_out_kernel(X: np.ndarray, masks) -> np.ndarray:
    """Remove per-component means (projection onto range of the Laplacian)."""
    X = X.copy()
    for mask in masks:
        if X.ndim == 1:
            X[mask] -= X[mask].mean()
        else:
            X[mask] -= X[mask].mean(axis=0)
    return X


def pinv_apply_block(
    L: np.ndarray,
    B: np.ndarray,
    tol: float = DEFAULT_CG_TOL,
    max_iter: int | None = None,
    labels: np.ndarray | None = None,
) -> np.ndarray:
    """Apply the Laplacian pseudoinverse to each column of B.

    Jacobi-preconditioned conjugate gradient with kernel projection at every
    iteration. Returns X with ||L X - P B|| <= tol * ||P B|| columnwise,
    where P projects onto range(L); X is orthogonal to the kernel.

    Raises ConvergenceError if the iteration cap (10n by default) is hit.
    """
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    single = B.ndim == 1
    B = B.reshape(n, -1).astype(float)
    if labels is None:
        labels = matrix_component_labels(L)
    masks = _kernel_masks(L, labels)
    max_iter = 10 * n if max_iter is None else max_iter

    diag = np.diag(L).copy()
    diag[diag <= 0.0] = 1.0
    inv_diag = 1.0 / diag

    R = _project_out_kernel(B, masks)
    target = np.linalg.norm(R, axis=0)
    X = np.zeros_like(R)
    active = target > 0.0
    if not active.any():
        return X[:, 0] if single else X

    # Standard PCG, run jointly on all columns; per-column scalars are kept
    # as vectors. The kernel projection guards against drift into ker(L).
    Z = inv_diag[:, None] * R
    Z = _project_out_kernel(Z, masks)
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    for _ in range(max_iter):
        resid = np.linalg.norm(R, axis=0)
        active = resid > tol * target
        if not active.any():
            break
        Q = L @ P
        pq = np.einsum("ij,ij->j", P, Q)
        safe = np.where(pq > 0.0, pq, 1.0)
        alpha = np.where(active & (pq > 0.0), rz / safe, 0.0)
        X += alpha * P
        R -= alpha * Q
        Z = inv_diag[:, None] * R
        Z = _project_out_kernel(Z, masks)
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(rz > 0.0, rz_new / np.where(rz > 0.0, rz, 1.0), 0.0)
        P = Z + beta * P
        rz = rz_new
    else:
        resid = np.linalg.norm(R, axis=0)
        bad = resid > tol * target
        if bad.any():
            worst = float((resid[bad] / target[bad]).max())
            raise ConvergenceError(
                f"CG did not converge within {max_iter} iterations "
                f"(worst relative residual {worst:.3e} > tol {tol:.1e})"
            )
    X = _project_out_kernel(X, masks)
    return X[:, 0] if single else X


def pinv_apply(
    L: np.ndarray,
    b: np.ndarray,
    tol: float = DEFAULT_CG_TOL,
    max_iter: int | None = None,
) -> np.ndarray:
    """Solve L x = P b in the pseudoinverse sense; see pinv_apply_block."""
    b = np.asarray(b, dtype=float)
    if b.shape != (L.shape[0],):
        raise ValueError("dimension mismatch between L and b")
    return pinv_apply_block(L, b, tol=tol, max_iter=max_iter)


def _snap_unit(values: np.ndarray) -> np.ndarray:
    values = np.clip(values, 0.0, None)
    values[np.abs(values - 1.0) <= _LEVERAGE_SNAP] = 1.0
    return np.minimum(values, 1.0)


def row_leverage(B: np.ndarray, cap: int | None = None) -> np.ndarray:
    """Exact leverage scores of the rows of B: b_i^T (B^T B)^+ b_i."""
    B = np.asarray(B, dtype=float)
    _check_cap(B.shape[1], cap)
    M = B.T @ B
    P = np.linalg.pinv(M, hermitian=True)
    tau = np.einsum("ij,jk,ik->i", B, P, B)
    return _snap_unit(tau)


def exact_leverage(g: WeightedGraph, cap: int | None = None) -> LeverageEstimates:
    """Exact per-edge leverage scores w_e * b_e^T L^+ b_e.

    Bridges get exactly 1 (values within 1e-9 of 1 are snapped). Requires
    n at or below the dense cap.
    """
    _check_cap(g.n, cap)
    L = laplacian(g)
    P = np.linalg.pinv(L, hermitian=True)
    u, v, w = g.endpoint_arrays()
    if g.m == 0:
        return LeverageEstimates(np.zeros(0), "exact")
    reff = P[u, u] + P[v, v] - 2.0 * P[u, v]
    tau = _snap_unit(w * reff)
    if tau.size and tau.min() <= 0.0:
        raise RuntimeError("numerically nonpositive leverage encountered")
    return LeverageEstimates(tau, "exact")


def sketched_row_leverage_upper(
    B: np.ndarray,
    delta: float,
    rng: np.random.Generator,
    tol: float = DEFAULT_CG_TOL,
) -> np.ndarray:
    """JL-sketched leverage upper bounds for the rows of B.

    Sketch dimension k = ceil(24 ln n / delta^2) with +-1/sqrt(k) entries;
    estimates are inflated by 1/(1-delta) and clamped to 1, so that with
    probability >= 1 - 1/n they dominate the true leverages and sum to at
    most (1+delta)/(1-delta) * n.
    """
    if not (0.0 < delta <= 1.0 / 3.0):
        raise ValueError("delta must lie in (0, 1/3]")
    B = np.asarray(B, dtype=float)
    m, n = B.shape
    if m == 0:
        return np.zeros(0)
    k = math.ceil(24.0 * math.log(max(n, 2)) / delta**2)
    M = B.T @ B
    Q = (rng.integers(0, 2, size=(k, m)) * 2 - 1) / math.sqrt(k)
    # Rows of the sketched whitening matrix solve M x = B^T q_i.
    RHS = B.T @ Q.T
    X = pinv_apply_block(M, RHS, tol=tol)
    # Estimated leverage of row i is ||X^T b_i||^2.
    est = np.einsum("ij,ij->i", B @ X, B @ X)
    return np.minimum(est / (1.0 - delta), 1.0)


def sketched_leverage_upper(
    g: WeightedGraph, delta: float, seed: int | np.random.Generator = 0
) -> LeverageEstimates:
    """Leverage upper bounds for graph edges via a JL sketch (see
    sketched_row_leverage_upper); provenance "sketched"."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    B = rows_of(g).take(g.m)
    values = sketched_row_leverage_upper(B, delta, rng)
    return LeverageEstimates(values, "sketched")


def _range_factor(L: np.ndarray, kernel_dim: int) -> np.ndarray:
    """Columns spanning range(L), scaled so F^T L F = I.

    The kernel dimension is supplied structurally (one per Laplacian-like
    component); the smallest eigenvalues are discarded accordingly, never
    by a numerical rank test.
    """
    vals, vecs = np.linalg.eigh(L)
    c = kernel_dim
    keep = vals[c:]
    if keep.size and keep.min() <= 0.0:
        # eigh can return slightly negative values for the kernel block; the
        # structural cut above must land strictly inside the positive part.
        raise KernelMismatchError(
            "matrix has more numerically-zero eigenvalues than components"
        )
    return vecs[:, c:] / np.sqrt(keep)


def spectral_epsilon(
    L_G: np.ndarray, L_H: np.ndarray, cap: int | None = None
) -> float:
    """Tightest epsilon with (1-eps) x'L_G x <= x'L_H x <= (1+eps) x'L_G x.

    Computed as max |lambda - 1| over the generalized eigenvalues of
    (L_H, L_G) restricted to range(L_G). Requires ker(L_G) to be contained
    in ker(L_H) (else the comparison is unbounded and KernelMismatchError
    is raised). H losing a connection that G has yields a value >= 1.
    """
    L_G = np.asarray(L_G, dtype=float)
    L_H = np.asarray(L_H, dtype=float)
    if L_G.shape != L_H.shape or L_G.ndim != 2:
        raise ValueError("matrices must be square and of equal shape")
    _check_cap(L_G.shape[0], cap)
    labels = matrix_component_labels(L_G)
    kmasks = _kernel_masks(L_G, labels)
    # H acting nontrivially on ker(L_G) means no finite epsilon exists.
    scale = max(np.abs(L_H).max(), 1.0)
    for mask in kmasks:
        ones = np.zeros(L_G.shape[0])
        ones[mask] = 1.0
        if abs(quadratic_form(L_H, ones)) > 1e-9 * scale:
            raise KernelMismatchError(
                "L_H is nonzero on the kernel of L_G (different components)"
            )
    F = _range_factor(L_G, len(kmasks))
    K = F.T @ L_H @ F
    eigs = np.linalg.eigvalsh(K)
    if eigs.size == 0:
        return 0.0
    return float(np.abs(eigs - 1.0).max())


def rayleigh_epsilon(
    L_G: np.ndarray,
    L_H: np.ndarray,
    probes: int = 200,
    seed: int | np.random.Generator = 0,
) -> float:
    """Lower bound on spectral_epsilon from random Rayleigh quotients.

    Used above the dense cap; the returned value is a *lower* bound and
    callers must label it as such.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    L_G = np.asarray(L_G, dtype=float)
    L_H = np.asarray(L_H, dtype=float)
    labels = matrix_component_labels(L_G)
    masks = _kernel_masks(L_G, labels)
    X = rng.standard_normal((L_G.shape[0], probes))
    X = _project_out_kernel(X, masks)
    num = np.einsum("ij,ij->j", X, L_H @ X)
    den = np.einsum("ij,ij->j", X, L_G @ X)
    ok = den > 1e-12 * max(np.abs(L_G).max(), 1.0)
    if not ok.any():
        return 0.0
    return float(np.abs(num[ok] / den[ok] - 1.0).max())
