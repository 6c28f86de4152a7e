"""Affinity construction and normalized spectral clustering.

The eigensolver is a cyclic Jacobi method using a round-robin pair
ordering: each round applies ``floor(n/2)`` disjoint plane rotations at
once, so a sweep costs ``O(n^3)`` with vectorised row/column updates.  It
is deterministic and accurate to machine precision for the desk-scale
matrices used here (``n <= 512``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

MAX_SWEEPS = 100
OFF_TOL = 1e-12


class EigenConvergenceError(RuntimeError):
    pass


def build_affinity(Z: np.ndarray) -> np.ndarray:
    """``(|Z| + |Z|^T) / 2``."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise ValueError(f"Z must be square, got shape {Z.shape}")
    A = np.abs(Z)
    return 0.5 * (A + A.T)


def normalized_laplacian(A: np.ndarray) -> np.ndarray:
    """``I - D^{-1/2} A D^{-1/2}``; isolated vertices get a zero scaling."""
    deg = A.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    pos = deg > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(deg[pos])
    L = -(inv_sqrt[:, None] * A * inv_sqrt[None, :])
    L[np.diag_indices_from(L)] += 1.0
    return 0.5 * (L + L.T)


def _round_robin(m: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Pairings of ``0..m-1`` (``m`` even) covering every pair once."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array([min(players[i], players[m - 1 - i]) for i in range(m // 2)])
        q = np.array([max(players[i], players[m - 1 - i]) for i in range(m // 2)])
        rounds.append((p, q))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def _off_norm(A: np.ndarray) -> float:
    off = A.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.linalg.norm(off))


def jacobi_eigh(M: np.ndarray, max_sweeps: int = MAX_SWEEPS, tol: float = OFF_TOL):
    """All eigenpairs of a symmetric matrix, eigenvalues ascending.

    Ties are ordered by index (stable sort).  Raises
    :class:`EigenConvergenceError` if the off-diagonal mass has not dropped
    below ``tol * ||M||_F`` after ``max_sweeps`` sweeps.
    """
    A = np.array(M, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix must be symmetric")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if n > 1 and scale > 0:
        m = n + (n % 2)
        rounds = []
        for p, q in _round_robin(m):
            keep = q < n  # drop the dummy player for odd n
            rounds.append((p[keep], q[keep]))
        converged = False
        for _ in range(max_sweeps):
            off = _off_norm(A)
            if off <= tol * scale:
                converged = True
                break
            for p, q in rounds:
                apq = A[p, q]
                active = np.abs(apq) > 0.0
                if not np.any(active):
                    continue
                p, q, apq = p[active], q[active], apq[active]
                # tan of the rotation angle, smaller root; overflow-free form
                h = A[q, q] - A[p, p]
                sgn = np.where(h >= 0.0, 1.0, -1.0)
                t = 2.0 * apq * sgn / (np.abs(h) + np.hypot(h, 2.0 * apq))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c[:, None] * Ap - s[:, None] * Aq
                A[q, :] = s[:, None] * Ap + c[:, None] * Aq
                A[p, q] = 0.0
                A[q, p] = 0.0
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
        if not converged:
            off = _off_norm(A)
            if off > tol * scale:
                raise EigenConvergenceError(
                    f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal {off:.3e})"
                )
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def symmetric_eig_smallest(M: np.ndarray, k: int):
    """The ``k`` smallest eigenvalues (ascending) and orthonormal eigenvectors."""
    if not 1 <= k <= np.shape(M)[0]:
        raise ValueError(f"k={k} out of range for a {np.shape(M)[0]}x{np.shape(M)[0]} matrix")
    w, V = jacobi_eigh(M)
    return w[:k], V[:, :k]


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: List[float]


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)


def kmeans_single(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 300) -> KMeansResult:
    """One Lloyd run from k-means++ seeds; stops when assignments stabilise.

    ``history`` holds the inertia after every assignment step.
    """
    C = _kmeans_pp(X, k, rng)
    labels = np.argmin(_sq_dists(X, C), axis=1)
    history = []
    for _ in range(max_iter):
        history.append(float(np.sum((X - C[labels]) ** 2)))
        for j in range(k):
            members = labels == j
            if np.any(members):
                C[j] = X[members].mean(axis=0)
        new = np.argmin(_sq_dists(X, C), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    inertia = float(np.sum((X - C[labels]) ** 2))
    history.append(inertia)
    return KMeansResult(labels, C, inertia, history)


def kmeans(X: np.ndarray, k: int, seed: int = 0, n_init: int = 50, max_iter: int = 300) -> KMeansResult:
    """Best-inertia result over ``n_init`` seeded k-means++ restarts."""
    X = np.asarray(X, dtype=np.float64)
    streams = np.random.SeedSequence(seed).spawn(n_init)
    best: Optional[KMeansResult] = None
    for ss in streams:
        res = kmeans_single(X, k, np.random.default_rng(ss), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def spectral_embedding(A: np.ndarray, k: int, normalize_rows: bool = True):
    """Row-normalised eigenvectors of the ``k`` smallest Laplacian eigenvalues."""
    L = normalized_laplacian(A)
    w, U = symmetric_eig_smallest(L, k)
    if normalize_rows:
        norms = np.linalg.norm(U, axis=1, keepdims=True)
        U = np.divide(U, norms, out=np.zeros_like(U), where=norms > 0)
    return w, U


def spectral_cluster(A: np.ndarray, k: int, seed: int = 0, n_init: int = 50) -> np.ndarray:
    """Cluster an affinity matrix into ``k`` groups; returns 0-based labels."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"affinity must be square, got {A.shape}")
    if not 2 <= k <= n:
        raise ValueError(f"k must satisfy 2 <= k <= n={n}, got {k}")
    if np.any(A < 0) or not np.array_equal(A, A.T):
        raise ValueError("affinity must be symmetric and nonnegative")
    _, U = spectral_embedding(A, k)
    return kmeans(U, k, seed=seed, n_init=n_init).labels
