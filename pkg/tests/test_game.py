import itertools
import math

import numpy as np
import pytest

from sdlh.errors import InvalidInput
from sdlh.fixtures import hybrid_game, twisted_coordination
from sdlh.game import (
    Mask,
    PayoffTensor,
    SdGame,
    best_response_1,
    best_response_2,
    check_density,
    matrix_complementarity_residual,
    payoffs,
    phi_A,
    phi_B_prime,
    slack_V,
    slack_W,
    strict_complementarity,
    verify_nash,
)
from sdlh.linalg import numerical_rank

E11 = np.diag([1.0, 0.0])
E22 = np.diag([0.0, 1.0])
HALF = np.eye(2) / 2
PLUS = np.full((2, 2), 0.5)
MINUS = np.array([[0.5, -0.5], [-0.5, 0.5]])
FIVE = [E11, E22, HALF, PLUS, MINUS]


def random_density(rng, d, rank=None):
    rank = d if rank is None else rank
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    U = Q[:, :rank]
    return (U * rng.dirichlet(np.ones(rank))) @ U.T


def loop_phi_A(A, Y):
    m, n = A.shape[0], A.shape[2]
    out = np.zeros((m, m))
    for i, j, k, l in itertools.product(range(m), range(m), range(n), range(n)):
        out[i, j] += A[i, j, k, l] * Y[k, l]
    return out


def loop_phi_B(B, X):
    m, n = B.shape[0], B.shape[2]
    out = np.zeros((n, n))
    for i, j, k, l in itertools.product(range(m), range(m), range(n), range(n)):
        out[k, l] += X[i, j] * B[i, j, k, l]
    return out


# ---------------------------------------------------------------------------
# tensors


def test_tensor_rejects_bad_shape_and_asymmetry():
    with pytest.raises(InvalidInput):
        PayoffTensor(np.zeros((2, 3, 2, 2)))
    A = np.zeros((2, 2, 2, 2))
    A[0, 1, 0, 0] = 1.0
    with pytest.raises(InvalidInput, match="symmetric"):
        PayoffTensor(A)
    with pytest.raises(InvalidInput):
        PayoffTensor(np.full((1, 1, 1, 1), np.inf))


def test_tensor_is_read_only_and_symmetrized_passes():
    rng = np.random.default_rng(0)
    T = PayoffTensor.symmetrized(rng.normal(size=(3, 3, 2, 2)))
    assert (T.m, T.n) == (3, 2)
    with pytest.raises(ValueError):
        T.entries[0, 0, 0, 0] = 1.0


def test_game_requires_matching_shapes():
    with pytest.raises(InvalidInput):
        SdGame(PayoffTensor(np.zeros((2, 2, 2, 2))), PayoffTensor(np.zeros((2, 2, 3, 3))))


# ---------------------------------------------------------------------------
# payoff operators


def test_operators_match_explicit_sums():
    rng = np.random.default_rng(1)
    for _ in range(30):
        m, n = rng.integers(1, 4, size=2)
        A = PayoffTensor.symmetrized(rng.normal(size=(m, m, n, n)))
        X, Y = random_density(rng, m), random_density(rng, n)
        assert np.allclose(phi_A(A, Y), loop_phi_A(A.entries, Y), atol=1e-13)
        assert np.allclose(phi_B_prime(A, X), loop_phi_B(A.entries, X), atol=1e-13)


def test_symmetric_tensor_gives_symmetric_operator():
    rng = np.random.default_rng(2)
    for _ in range(50):
        m, n = rng.integers(1, 5, size=2)
        A = PayoffTensor.symmetrized(rng.normal(size=(m, m, n, n)))
        S = rng.normal(size=(n, n))
        P = phi_A(A, S + S.T)
        assert np.max(np.abs(P - P.T)) <= 1e-12


def test_operator_dimension_check():
    with pytest.raises(InvalidInput):
        phi_A(twisted_coordination().A, np.eye(3))


def test_example_contractions():
    game = twisted_coordination(0.6)
    assert np.array_equal(phi_A(game.A, E11), E11)
    assert np.array_equal(phi_B_prime(game.B, E22), E22)
    assert payoffs(game, E11, E11) == (1.0, 1.0)


def test_corner_free_payoff_formula():
    c = 1.0
    game = twisted_coordination(c, corner=0.0)
    rng = np.random.default_rng(3)
    for _ in range(50):
        X, Y = random_density(rng, 2), random_density(rng, 2)
        expected = X[0, 0] * Y[0, 0] + 4 * c * X[0, 1] * Y[0, 1]
        assert payoffs(game, X, Y) == pytest.approx((expected, expected), abs=1e-14)


def test_slacks():
    game = hybrid_game()
    # phi_A(E11) = diag(1, 2) for the hybrid fixture
    assert np.array_equal(slack_W(game.A, E11, 2.0), np.diag([1.0, 0.0]))
    assert np.array_equal(slack_V(game.B, E11, 2.0), np.diag([0.0, 1.0]))


# ---------------------------------------------------------------------------
# best responses


def test_best_response_pure():
    br = best_response_1(twisted_coordination(0.6), E11)
    assert np.allclose(br.strategy, E11) and br.value == 1.0 and not br.tie_broken


def test_best_response_tie_is_uniform_over_top_eigenspace():
    br = best_response_2(twisted_coordination(0.5), HALF)
    assert br.tie_broken and np.allclose(br.strategy, HALF)


def test_best_response_diagonal_mask():
    game = hybrid_game()
    Y = np.array([[0.5, 0.5], [0.5, 0.5]])
    br = best_response_1(game, Y)  # diagonal of phi is (1, 2.2); off-diagonals are ignored
    assert np.array_equal(br.strategy, E22) and br.value == pytest.approx(2.2)
    tie = best_response_1(SdGame(game.A, game.B, Mask.DIAGONAL, Mask.DIAGONAL), E11)
    assert not tie.tie_broken
    zero = PayoffTensor(np.zeros((2, 2, 2, 2)))
    br = best_response_1(SdGame(zero, zero, Mask.DIAGONAL), E11)
    assert br.tie_broken and np.array_equal(br.strategy, HALF)


def test_best_response_value_is_max_payoff():
    rng = np.random.default_rng(4)
    game = SdGame(*(PayoffTensor.symmetrized(rng.normal(size=(3, 3, 2, 2))) for _ in range(2)))
    for _ in range(20):
        Y = random_density(rng, 2)
        br = best_response_1(game, Y)
        Phi = phi_A(game.A, Y)
        for _ in range(50):
            X = random_density(rng, 3)
            assert np.sum(X * Phi) <= br.value + 1e-12
        assert np.sum(br.strategy * Phi) == pytest.approx(br.value, abs=1e-12)


# ---------------------------------------------------------------------------
# densities and complementarity


@pytest.mark.parametrize(
    "M, mask",
    [
        ([[1.0, 0.1], [0.0, 0.0]], Mask.FULL),
        ([[2.0, 0.0], [0.0, 0.0]], Mask.FULL),
        ([[1.5, 0.0], [0.0, -0.5]], Mask.FULL),
        ([[0.5, 0.1], [0.1, 0.5]], Mask.DIAGONAL),
    ],
)
def test_check_density_rejects(M, mask):
    with pytest.raises(InvalidInput):
        check_density(M, mask)


def test_strict_complementarity_examples():
    assert not strict_complementarity(E11, np.zeros((2, 2)), 2)
    assert strict_complementarity(E11, E22, 2)


def test_inner_product_zero_implies_product_zero():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        d = int(rng.integers(2, 6))
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        r = int(rng.integers(1, d))
        S = (Q[:, :r] * rng.uniform(0.1, 3.0, r)) @ Q[:, :r].T
        T = (Q[:, r:] * rng.uniform(0.1, 3.0, d - r)) @ Q[:, r:].T
        if np.sum(S * T) <= 1e-12:
            bound = 1e-6 * np.linalg.norm(S, 2) * np.linalg.norm(T, 2)
            assert np.linalg.norm(S @ T) <= bound


def test_matrix_complementarity_residual_diagonal_mask():
    X = np.diag([0.5, 0.5])
    W = np.array([[0.0, 3.0], [3.0, 0.0]])
    assert matrix_complementarity_residual(X, W, E11, E22, Mask.DIAGONAL, Mask.FULL) == 0.0
    assert matrix_complementarity_residual(X, W, E11, E22) > 0


# ---------------------------------------------------------------------------
# verification


@pytest.mark.parametrize("S", FIVE, ids=["E11", "E22", "half", "plus", "minus"])
def test_five_equilibria_verified_and_strict(S):
    cert = verify_nash(twisted_coordination(0.6), S, S)
    assert cert.valid and cert.strict


def test_non_equilibrium_rejected():
    cert = verify_nash(twisted_coordination(0.6), E11, E22)
    # best-response multipliers keep the slacks PSD; the gap exposes the deviation
    assert not cert.valid and cert.gap_X == 1.0 and cert.gap_Y == 1.0


def test_corner_free_mixed_equilibria():
    c = 1.0
    x11 = 2 * c / (4 * c - 1)
    x12 = math.sqrt(2 * c * (2 * c - 1)) / (4 * c - 1)
    assert (x11, x12) == pytest.approx((2 / 3, math.sqrt(2) / 3))
    game = twisted_coordination(c, corner=0.0)
    for sign in (1, -1):
        X = np.array([[x11, sign * x12], [sign * x12, 1 - x11]])
        cert = verify_nash(game, X, X)
        assert cert.valid and cert.strict


def test_corner_free_pure_e22_not_strict():
    cert = verify_nash(twisted_coordination(1.0, corner=0.0), E22, E22)
    assert cert.valid and not cert.strict and cert.w == 0.0


def test_sylvester_rank_bound_at_equilibria():
    game = twisted_coordination(0.6)
    for S in FIVE:
        cert = verify_nash(game, S, S)
        W = slack_W(game.A, S, cert.w)
        assert numerical_rank(S) + numerical_rank(W) <= 2
