"""Small reference games with known equilibria, used by tests and the CLI."""

from __future__ import annotations

import numpy as np

from .game import Mask, PayoffTensor, SdGame


def _slices(s11, s12, s21, s22) -> PayoffTensor:
    return PayoffTensor.from_slices([[s11, s12], [s21, s22]])


def twisted_coordination(c: float = 0.6, corner: float = 1.0) -> SdGame:
    """2x2 game with slices ``E11, c*sigma_x, c*sigma_x, corner*E22`` for both players.

    For ``c > 1/2`` and ``corner = 1`` it has exactly five equilibria; with
    ``corner = 0`` the payoff is ``x11 y11 + 4c x12 y12``; with ``c = 1/2``
    the payoff operators are the identity map and equilibria form a continuum.
    """
    off = [[0.0, c], [c, 0.0]]
    T = _slices([[1.0, 0.0], [0.0, 0.0]], off, off, [[0.0, 0.0], [0.0, corner]])
    return SdGame(T, T)


def identity_operator_game() -> SdGame:
    """``phi_A(Y) = Y`` and ``phi_B_prime(X) = X``."""
    return twisted_coordination(0.5)


def hybrid_game(c: float = 0.1) -> SdGame:
    """Simplex player 1 (diagonal mask) against a 2x2 density-matrix player 2."""
    zero = np.zeros((2, 2))
    A = _slices(np.eye(2), zero, zero, [[2.0, 2 * c], [2 * c, 2.0]])
    B = _slices([[2.0, 0.0], [0.0, 1.0]], zero, zero, [[2.0, c], [c, 1.0]])
    return SdGame(A, B, Mask.DIAGONAL, Mask.FULL)


def zero_game(m: int = 2, n: int = 2) -> SdGame:
    T = PayoffTensor(np.zeros((m, m, n, n)))
    return SdGame(T, T)
