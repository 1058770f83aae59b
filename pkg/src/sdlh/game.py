"""Semidefinite games: payoff tensors, payoff operators and Nash certificates.

A strategy of player 1 is an ``m x m`` density matrix ``X``, of player 2 an
``n x n`` density matrix ``Y``. Payoffs are ``<X, phi_A(Y)>`` and
``<phi_B_prime(X), Y>``. Under a ``Mask.DIAGONAL`` constraint only the
diagonal of a strategy may be non-zero, which turns that player into a
simplex player.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidInput
from .linalg import numerical_rank, psd_check, sym_eigen, symmetrize

VERIFY_TOL = 1e-7
TIE_GAP = 1e-8


class Mask(str, enum.Enum):
    FULL = "full"
    DIAGONAL = "diagonal"


@dataclass(frozen=True, eq=False)
class PayoffTensor:
    """Real tensor ``A[i, j, k, l]`` symmetric under ``i <-> j`` and ``k <-> l``."""

    entries: NDArray
    symmetry_tol: float = field(default=0.0, repr=False)

    def __post_init__(self):
        A = np.array(self.entries, dtype=float)
        if A.ndim != 4 or A.shape[0] != A.shape[1] or A.shape[2] != A.shape[3]:
            raise InvalidInput(f"payoff tensor must have shape (m, m, n, n), got {A.shape}")
        if min(A.shape) < 1:
            raise InvalidInput("payoff tensor dimensions must be positive")
        if not np.all(np.isfinite(A)):
            raise InvalidInput("payoff tensor has non-finite entries")
        d1 = np.max(np.abs(A - A.transpose(1, 0, 2, 3)))
        d2 = np.max(np.abs(A - A.transpose(0, 1, 3, 2)))
        if max(d1, d2) > self.symmetry_tol:
            raise InvalidInput(
                f"payoff tensor is not symmetric in its index pairs (defect {max(d1, d2):.3e})"
            )
        A.setflags(write=False)
        object.__setattr__(self, "entries", A)

    @classmethod
    def symmetrized(cls, entries) -> "PayoffTensor":
        A = np.asarray(entries, dtype=float)
        A = 0.5 * (A + A.transpose(1, 0, 2, 3))
        A = 0.5 * (A + A.transpose(0, 1, 3, 2))
        return cls(A)

    @classmethod
    def from_slices(cls, slices) -> "PayoffTensor":
        """Build from ``slices[i][j]`` = the ``n x n`` matrix ``A[i, j, :, :]``."""
        return cls(np.asarray(slices, dtype=float))

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[2]


@dataclass(frozen=True, eq=False)
class SdGame:
    A: PayoffTensor
    B: PayoffTensor
    mask1: Mask = Mask.FULL
    mask2: Mask = Mask.FULL

    def __post_init__(self):
        if self.A.entries.shape != self.B.entries.shape:
            raise InvalidInput(
                f"tensors A {self.A.entries.shape} and B {self.B.entries.shape} differ in shape"
            )
        object.__setattr__(self, "mask1", Mask(self.mask1))
        object.__setattr__(self, "mask2", Mask(self.mask2))

    @property
    def m(self) -> int:
        return self.A.m

    @property
    def n(self) -> int:
        return self.A.n


@dataclass(frozen=True)
class BestResponse:
    strategy: NDArray
    value: float
    tie_broken: bool = False


@dataclass(frozen=True)
class NashCertificate:
    X: NDArray
    Y: NDArray
    w: float
    v: float
    min_eig_W: float
    min_eig_V: float
    gap_X: float  # |<X, W>|
    gap_Y: float  # |<Y, V>|
    strict: bool
    tol: float

    @property
    def residuals(self) -> tuple[float, float, float, float]:
        return (self.min_eig_W, self.min_eig_V, self.gap_X, self.gap_Y)

    @property
    def valid(self) -> bool:
        return (
            self.min_eig_W >= -self.tol
            and self.min_eig_V >= -self.tol
            and self.gap_X <= self.tol
            and self.gap_Y <= self.tol
        )


def _tensor(A) -> NDArray:
    return A.entries if isinstance(A, PayoffTensor) else np.asarray(A, dtype=float)


def phi_A(A, Y) -> NDArray:
    """``phi_A(Y)[i, j] = sum_{k,l} A[i, j, k, l] Y[k, l]``."""
    T = _tensor(A)
    Y = np.asarray(Y, dtype=float)
    if Y.shape != T.shape[2:]:
        raise InvalidInput(f"Y has shape {Y.shape}, tensor expects {T.shape[2:]}")
    return np.einsum("ijkl,kl->ij", T, Y)


def phi_B_prime(B, X) -> NDArray:
    """``phi_B_prime(X)[k, l] = sum_{i,j} X[i, j] B[i, j, k, l]``."""
    T = _tensor(B)
    X = np.asarray(X, dtype=float)
    if X.shape != T.shape[:2]:
        raise InvalidInput(f"X has shape {X.shape}, tensor expects {T.shape[:2]}")
    return np.einsum("ij,ijkl->kl", X, T)


def payoffs(game: SdGame, X, Y) -> tuple[float, float]:
    pa = float(np.sum(np.asarray(X) * phi_A(game.A, Y)))
    pb = float(np.sum(phi_B_prime(game.B, X) * np.asarray(Y)))
    return pa, pb


def slack_W(A, Y, w: float) -> NDArray:
    """``W = w I - phi_A(Y)``; pass a perturbed tensor for the homotopy game."""
    Phi = phi_A(A, Y)
    return w * np.eye(Phi.shape[0]) - Phi


def slack_V(B, X, v: float) -> NDArray:
    Phi = phi_B_prime(B, X)
    return v * np.eye(Phi.shape[0]) - Phi


def _best_response(Phi: NDArray, mask: Mask) -> BestResponse:
    d = Phi.shape[0]
    if mask is Mask.DIAGONAL:
        diag = np.diag(Phi)
        value = float(np.max(diag))
        scale = max(1.0, float(np.max(np.abs(diag))))
        top = np.flatnonzero(diag >= value - TIE_GAP * scale)
        S = np.zeros((d, d))
        S[top, top] = 1.0 / len(top)
        return BestResponse(S, value, len(top) > 1)
    eig = sym_eigen(Phi)
    value = float(eig.values[0])
    scale = max(1.0, float(np.max(np.abs(eig.values))))
    top = np.flatnonzero(eig.values >= value - TIE_GAP * scale)
    Q = eig.basis[:, top]
    S = Q @ Q.T / len(top)
    return BestResponse(0.5 * (S + S.T), value, len(top) > 1)


def best_response_1(game: SdGame, Y, A=None) -> BestResponse:
    """Best response of player 1 to ``Y``; ties become a uniform mixture over the top eigenspace."""
    return _best_response(phi_A(game.A if A is None else A, Y), game.mask1)


def best_response_2(game: SdGame, X) -> BestResponse:
    return _best_response(phi_B_prime(game.B, X), game.mask2)


def check_density(M, mask: Mask = Mask.FULL, *, name: str = "strategy") -> NDArray:
    """Validate a density matrix and return it as a float array.

    Raises ``InvalidInput`` on asymmetry, wrong trace, a negative eigenvalue
    below ``-1e-8`` or non-zero off-diagonal entries under a diagonal mask.
    """
    M = np.asarray(M, dtype=float)
    S, defect = symmetrize(M)
    if defect > 1e-9:
        raise InvalidInput(f"{name} is not symmetric (defect {defect:.3e})")
    if abs(np.trace(S) - 1.0) > 1e-9:
        raise InvalidInput(f"{name} has trace {np.trace(S):.12g}, expected 1")
    lam_min = float(np.linalg.eigvalsh(S)[0])
    if lam_min < -1e-8:
        raise InvalidInput(f"{name} is not positive semidefinite (lambda_min {lam_min:.3e})")
    if Mask(mask) is Mask.DIAGONAL and np.any(S[~np.eye(S.shape[0], dtype=bool)] != 0.0):
        raise InvalidInput(f"{name} must be diagonal under the diagonal mask")
    return S


def _mask_slack(S: NDArray, mask: Mask) -> NDArray:
    return np.diag(np.diag(S)) if mask is Mask.DIAGONAL else S


def strict_complementarity(P, D, dim_total: int, tol: float = 1e-8) -> bool:
    """True iff ``rank P + rank D == dim_total`` at numerical tolerance ``tol``."""
    return numerical_rank(P, tol) + numerical_rank(D, tol) == dim_total


def matrix_complementarity_residual(X, W, Y, V, mask1=Mask.FULL, mask2=Mask.FULL) -> float:
    """``||XW||_F + ||YV||_F``; a diagonal mask uses ``||diag(X) * diag(W)||`` instead."""

    def term(S, T, mask):
        if Mask(mask) is Mask.DIAGONAL:
            return float(np.linalg.norm(np.diag(S) * np.diag(T)))
        return float(np.linalg.norm(np.asarray(S) @ np.asarray(T)))

    return term(X, W, mask1) + term(Y, V, mask2)


def verify_nash(game: SdGame, X, Y, tol: float = VERIFY_TOL, A=None) -> NashCertificate:
    """Check the complementarity characterization of a Nash equilibrium.

    ``w`` and ``v`` are the best-response values. The certificate is valid
    iff both slacks are PSD and orthogonal to the strategies within ``tol``.
    ``A`` optionally overrides player 1's tensor (used for perturbed games).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    br1 = best_response_1(game, Y, A=A)
    br2 = best_response_2(game, X)
    w, v = br1.value, br2.value
    W = _mask_slack(slack_W(game.A if A is None else A, Y, w), game.mask1)
    V = _mask_slack(slack_V(game.B, X, v), game.mask2)
    _, lw = psd_check(W)
    _, lv = psd_check(V)
    strict = strict_complementarity(X, W, game.m) and strict_complementarity(Y, V, game.n)
    return NashCertificate(
        X=X,
        Y=Y,
        w=w,
        v=v,
        min_eig_W=lw,
        min_eig_V=lv,
        gap_X=abs(float(np.sum(X * W))),
        gap_Y=abs(float(np.sum(Y * V))),
        strict=strict,
        tol=tol,
    )
