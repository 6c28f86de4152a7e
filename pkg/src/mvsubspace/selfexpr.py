"""Self-representation matrices, the objective terms and their gradients.

Notation: ``F`` is a latent matrix with samples as columns (``d x n``),
``Z`` the common self-representation matrix and ``Z_views[i]`` the
view-specific ones, all ``n x n`` with zero diagonal.

The HSIC diversity term uses the self-representation matrices directly as
Gram matrices, ``HSIC(A, B) = tr(A H B H) / (n - 1)^2``, which is the form
whose derivative is ``(H B H)^T / (n - 1)^2``.  It can be negative.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import List, Sequence

import numpy as np


@dataclass
class SelfExprState:
    Z: np.ndarray
    Z_views: List[np.ndarray]

    def __post_init__(self):
        n = self.Z.shape[0]
        for M in [self.Z, *self.Z_views]:
            if M.shape != (n, n):
                raise ValueError(f"self-representation matrices must all be {n}x{n}, got {M.shape}")

    @property
    def n_samples(self) -> int:
        return self.Z.shape[0]

    @classmethod
    def initial(cls, n: int, n_views: int, rng: np.random.Generator, scale: float = 1e-4):
        """Uniform ``[0, scale)`` entries with zero diagonal; ``Z`` drawn first."""
        def draw():
            return project_zero_diag(scale * rng.random((n, n)))
        Z = draw()
        return cls(Z=Z, Z_views=[draw() for _ in range(n_views)])

    def copy(self) -> "SelfExprState":
        return SelfExprState(self.Z.copy(), [M.copy() for M in self.Z_views])

    def diag_is_zero(self) -> bool:
        return all(not np.any(np.diag(M)) for M in [self.Z, *self.Z_views])


@dataclass
class Lambdas:
    """Weights of self-expression, l2 (squared Frobenius), universality, diversity."""

    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 0.1
    lambda4: float = 0.1


@dataclass
class LossBreakdown:
    """Unweighted objective terms and the weighted ``total``.

    A term whose weight is zero is disabled and reported as exactly 0.
    """

    ae_loss: float
    selfexpr_loss: float
    lp_loss: float
    universality_loss: float
    diversity_loss: float
    total: float

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def as_list(self) -> List[float]:
        return [getattr(self, name) for name in self.field_names()]


def centering_matrix(n: int) -> np.ndarray:
    return np.eye(n) - np.full((n, n), 1.0 / n)


def _square(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    return M


def project_zero_diag(M: np.ndarray) -> np.ndarray:
    M = _square(M).copy()
    np.fill_diagonal(M, 0.0)
    return M


def _check_pair(F: np.ndarray, Z: np.ndarray) -> None:
    _square(Z, "Z")
    if F.ndim != 2 or F.shape[1] != Z.shape[0]:
        raise ValueError(f"F has {F.shape[-1]} columns but Z is {Z.shape[0]}x{Z.shape[0]}")


def self_expression_residual(F: np.ndarray, Z: np.ndarray) -> float:
    """``||F - F Z||_F^2``."""
    F = np.asarray(F, dtype=np.float64)
    _check_pair(F, Z)
    R = F - F @ Z
    return float(np.sum(R * R))


def hsic(Za: np.ndarray, Zb: np.ndarray) -> float:
    Za, Zb = _square(Za, "Z_a"), _square(Zb, "Z_b")
    n = Za.shape[0]
    if Zb.shape[0] != n:
        raise ValueError(f"HSIC needs equal sizes, got {n} and {Zb.shape[0]}")
    if n < 2:
        raise ValueError("HSIC needs n >= 2")
    # tr(A H B H) = sum((H A H) * B^T) with H A H the double-centred A
    Ac = Za - Za.mean(axis=0, keepdims=True)
    Ac = Ac - Ac.mean(axis=1, keepdims=True)
    return float(np.sum(Ac * Zb.T)) / (n - 1) ** 2


def diversity_reg(Z_views: Sequence[np.ndarray]) -> float:
    """Sum of HSIC over unordered view pairs."""
    total = 0.0
    for i in range(len(Z_views)):
        for j in range(i + 1, len(Z_views)):
            total += hsic(Z_views[i], Z_views[j])
    return total


def universality_reg(Z: np.ndarray, Z_views: Sequence[np.ndarray]) -> float:
    Z = _square(Z, "Z")
    total = 0.0
    for Zi in Z_views:
        if Zi.shape != Z.shape:
            raise ValueError(f"view matrix {Zi.shape} does not match Z {Z.shape}")
        D = Z - Zi
        total += float(np.sum(D * D))
    return total


def total_loss(X, Xhat_s, Xhat_c, F_s, F_c, state: SelfExprState, lam: Lambdas) -> LossBreakdown:
    """Assemble every term of the joint objective.

    ``X``, ``Xhat_s`` and ``Xhat_c`` are per-view lists of inputs and the
    Dnet / Unet reconstructions (any matching shape); ``F_s`` and ``F_c``
    the per-view latents of the two networks.
    """
    v = len(X)
    if not (len(Xhat_s) == len(Xhat_c) == len(F_s) == len(F_c) == len(state.Z_views) == v):
        raise ValueError("every per-view list must have one entry per view")
    ae = 0.0
    for x, xs, xc in zip(X, Xhat_s, Xhat_c):
        if np.shape(xs) != np.shape(x) or np.shape(xc) != np.shape(x):
            raise ValueError(f"reconstruction shape mismatch for input of shape {np.shape(x)}")
        ae += float(np.sum((x - xs) ** 2)) + float(np.sum((x - xc) ** 2))
    se = sum(self_expression_residual(fs, Zi) + self_expression_residual(fc, state.Z)
             for fs, fc, Zi in zip(F_s, F_c, state.Z_views))
    lp = float(np.sum(state.Z ** 2)) + sum(float(np.sum(Zi ** 2)) for Zi in state.Z_views)
    uni = universality_reg(state.Z, state.Z_views)
    div = diversity_reg(state.Z_views)
    weighted = [(lam.lambda1, se), (lam.lambda2, lp), (lam.lambda3, uni), (lam.lambda4, div)]
    raw = [value if w != 0.0 else 0.0 for w, value in weighted]
    total = ae + sum(w * value for (w, _), value in zip(weighted, raw))
    return LossBreakdown(ae, *raw, total=total)


def _centre_both(M: np.ndarray) -> np.ndarray:
    M = M - M.mean(axis=0, keepdims=True)
    return M - M.mean(axis=1, keepdims=True)


def grad_Z_view(i: int, F_s: np.ndarray, state: SelfExprState, lam: Lambdas) -> np.ndarray:
    """Gradient of the objective with respect to ``Z_views[i]``, diagonal zeroed.

    The HSIC part sums over every other view ``j != i``; that is the exact
    derivative of the unordered-pair diversity sum.
    """
    Zi = state.Z_views[i]
    F_s = np.asarray(F_s, dtype=np.float64)
    _check_pair(F_s, Zi)
    n = Zi.shape[0]
    G = F_s.T @ F_s
    grad = 2.0 * lam.lambda1 * (G @ Zi - G)
    grad -= 2.0 * lam.lambda3 * (state.Z - Zi)
    grad += 2.0 * lam.lambda2 * Zi
    if lam.lambda4 != 0.0 and len(state.Z_views) > 1:
        acc = np.zeros_like(Zi)
        for j, Zj in enumerate(state.Z_views):
            if j != i:
                acc += Zj
        grad += lam.lambda4 / (n - 1) ** 2 * _centre_both(acc).T
    np.fill_diagonal(grad, 0.0)
    return grad


def grad_Z_common(F_c: Sequence[np.ndarray], state: SelfExprState, lam: Lambdas) -> np.ndarray:
    """Gradient of the objective with respect to the common ``Z``, diagonal zeroed."""
    Z = state.Z
    if len(F_c) != len(state.Z_views):
        raise ValueError("need one common-network latent per view")
    grad = 2.0 * lam.lambda2 * Z
    if lam.lambda1 != 0.0:
        G = np.zeros_like(Z)
        for F in F_c:
            F = np.asarray(F, dtype=np.float64)
            _check_pair(F, Z)
            G += F.T @ F
        grad += 2.0 * lam.lambda1 * (G @ Z - G)
    for Zi in state.Z_views:
        grad += 2.0 * lam.lambda3 * (Z - Zi)
    np.fill_diagonal(grad, 0.0)
    return grad


def grad_latent(F: np.ndarray, Z: np.ndarray, lambda1: float) -> np.ndarray:
    """Gradient of ``lambda1 * ||F - F Z||^2`` with respect to ``F``."""
    F = np.asarray(F, dtype=np.float64)
    _check_pair(F, Z)
    R = F - F @ Z
    return 2.0 * lambda1 * (R - R @ Z.T)
