"""Dense symmetric-matrix kernel.

Eigendecomposition, simultaneous diagonalization of commuting pairs,
numerical rank and PSD tests. Every tolerance is explicit and relative to
the spectral norm, floored at one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidInput, NotCommuting

RANK_TOL = 1e-8
CLUSTER_GAP = 1e-6


@dataclass(frozen=True)
class EigenDecomposition:
    basis: NDArray  # columns are eigenvectors
    values: NDArray  # descending

    def reconstruct(self) -> NDArray:
        return (self.basis * self.values) @ self.basis.T


@dataclass(frozen=True)
class JointEigenSystem:
    """Shared orthogonal basis of a commuting pair with aligned eigenvalues.

    ``pairs[i] = (basis[:, i]^T P basis[:, i], basis[:, i]^T D basis[:, i])``.
    """

    basis: NDArray
    pairs: NDArray  # shape (d, 2): column 0 primal, column 1 dual

    @property
    def primal(self) -> NDArray:
        return self.pairs[:, 0]

    @property
    def dual(self) -> NDArray:
        return self.pairs[:, 1]


def symmetrize(M) -> tuple[NDArray, float]:
    """Return ``(M + M^T) / 2`` and the Frobenius norm of the removed skew part."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise InvalidInput(f"expected a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInput("matrix has non-finite entries")
    S = 0.5 * (M + M.T)
    return S, float(np.linalg.norm(M - S))


def spectral_norm(M: NDArray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (M + M.T)))))


def sym_eigen(M) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    S, _ = symmetrize(M)
    values, basis = np.linalg.eigh(S)
    order = np.argsort(values)[::-1]
    return EigenDecomposition(basis=basis[:, order], values=values[order])


def _clusters(values: NDArray, scale: float) -> list[list[int]]:
    # values descending; split where consecutive gap exceeds CLUSTER_GAP * scale
    groups = [[0]]
    for i in range(1, len(values)):
        if values[i - 1] - values[i] > CLUSTER_GAP * scale:
            groups.append([i])
        else:
            groups[-1].append(i)
    return groups


def joint_diagonalize(P, D, tol: float = 1e-7) -> JointEigenSystem:
    """Common eigenbasis of two commuting symmetric matrices.

    ``P`` is eigendecomposed first; inside each eigenvalue cluster of ``P``
    the compressed block of ``D`` is diagonalized.

    Raises
    ------
    NotCommuting
        If ``||PD - DP||_F > tol * (1 + ||P||_F) * (1 + ||D||_F)``.
    """
    P, _ = symmetrize(P)
    D, _ = symmetrize(D)
    if P.shape != D.shape:
        raise InvalidInput(f"shape mismatch {P.shape} vs {D.shape}")
    comm = np.linalg.norm(P @ D - D @ P)
    bound = tol * (1.0 + np.linalg.norm(P)) * (1.0 + np.linalg.norm(D))
    if comm > bound:
        raise NotCommuting(f"commutator norm {comm:.3e} exceeds {bound:.3e}")
    eig = sym_eigen(P)
    Q = eig.basis.copy()
    scale = max(1.0, float(np.max(np.abs(eig.values))))
    for group in _clusters(eig.values, scale):
        if len(group) == 1:
            continue
        Qg = Q[:, group]
        inner = sym_eigen(Qg.T @ D @ Qg)
        Q[:, group] = Qg @ inner.basis
    pairs = np.column_stack(
        [np.einsum("ij,ik,kj->j", Q, P, Q), np.einsum("ij,ik,kj->j", Q, D, Q)]
    )
    return JointEigenSystem(basis=Q, pairs=pairs)


def numerical_rank(M, tol: float = RANK_TOL) -> int:
    """Number of eigenvalues with ``|lambda| > tol * max(1, ||M||_2)``."""
    S, _ = symmetrize(M)
    values = np.linalg.eigvalsh(S)
    scale = max(1.0, float(np.max(np.abs(values))))
    return int(np.sum(np.abs(values) > tol * scale))


def psd_check(M, tol: float = RANK_TOL) -> tuple[bool, float]:
    """Return ``(is_psd, lambda_min)`` with a relative tolerance."""
    S, _ = symmetrize(M)
    values = np.linalg.eigvalsh(S)
    lam_min = float(values[0])
    scale = max(1.0, float(np.max(np.abs(values))))
    return lam_min >= -tol * scale, lam_min
