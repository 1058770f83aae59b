"""Homotopy core: bonus perturbation, residual system, Jacobian and stepping.

The unknown vector is ``z = (vec X, vec Y, w, v, t)`` with column-stacked,
unsymmetrized matrix coordinates. Along the path the equations are

    X W = 0,  Y V = 0,  tr X = 1,  tr Y = 1,

with ``W = w I - phi_{A(t)}(Y)`` and ``V = v I - phi_B_prime(X)``. ``A(t)``
adds ``t`` to every entry of the slice ``A[k, k, :, :]``. For the corrector
and the tangent the system is augmented with the symmetry rows
``X_ij - X_ji = 0`` (``i < j``), which removes the skew directions in
which the unsymmetrized equations are rank deficient.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linear_sum_assignment

from .errors import (
    BonusIneffective,
    InvalidInput,
    NearSingular,
    StartFailure,
    StepRejected,
    TrackingAmbiguity,
)
from .game import Mask, PayoffTensor, SdGame, best_response_1, best_response_2
from .linalg import joint_diagonalize

log = logging.getLogger(__name__)

CORRECTOR_TOL = 1e-10
ZERO_TOL = 1e-8
NULL_TOL = 1e-6
MAX_CORRECTOR_ITER = 20
H_MIN = 1e-12
H_MAX = 0.1


class Flag(str, enum.Enum):
    """Which member of an eigenvalue pair is pinned at zero."""

    STRATEGY_ZERO = "strategy_zero"
    SLACK_ZERO = "slack_zero"


@dataclass(frozen=True, eq=False)
class ActiveSet:
    flags1: tuple
    flags2: tuple
    basis1: NDArray
    basis2: NDArray

    def flip(self, player: int, index: int) -> "ActiveSet":
        flags = list(self.flags1 if player == 1 else self.flags2)
        flags[index] = (
            Flag.SLACK_ZERO if flags[index] is Flag.STRATEGY_ZERO else Flag.STRATEGY_ZERO
        )
        if player == 1:
            return replace(self, flags1=tuple(flags))
        return replace(self, flags2=tuple(flags))

    def codes(self) -> tuple[str, str]:
        def enc(flags):
            return "".join("S" if f is Flag.STRATEGY_ZERO else "W" for f in flags)

        return enc(self.flags1), enc(self.flags2)


@dataclass(frozen=True, eq=False)
class PathPoint:
    X: NDArray
    Y: NDArray
    w: float
    v: float
    t: float
    active: Optional[ActiveSet] = None
    residual_norm: float = float("nan")


@dataclass(frozen=True, eq=False)
class Tangent:
    direction: NDArray
    orientation: int = 1


@dataclass(frozen=True, eq=False)
class PerturbedGame:
    base: SdGame
    k: int  # 1-based diagonal strategy of player 1 receiving the bonus
    t: float = 0.0

    @property
    def A(self) -> PayoffTensor:
        return PayoffTensor(bonus_tensor(self.base, self.k, self.t))

    @property
    def game(self) -> SdGame:
        return SdGame(self.A, self.base.B, self.base.mask1, self.base.mask2)


def bonus_tensor(game: SdGame, k: int, t: float) -> NDArray:
    A = np.array(game.A.entries)
    A[k - 1, k - 1, :, :] += t
    return A


def perturb(game: SdGame, k: int, t: float) -> PerturbedGame:
    if not 1 <= k <= game.m:
        raise InvalidInput(f"k must lie in [1, {game.m}], got {k}")
    if t < 0:
        raise InvalidInput(f"bonus must be non-negative, got {t}")
    return PerturbedGame(game, k, float(t))


# ---------------------------------------------------------------------------
# the polynomial system


def _kron(a: NDArray, b: NDArray) -> NDArray:
    # np.kron is slow for the tiny blocks used here
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(
        a.shape[0] * b.shape[0], a.shape[1] * b.shape[1]
    )


class System:
    """Residual map and analytic Jacobian for a fixed game and bonus index."""

    def __init__(self, game: SdGame, k: int):
        if not 1 <= k <= game.m:
            raise InvalidInput(f"k must lie in [1, {game.m}], got {k}")
        self.game = game
        self.k = k
        m, n = game.m, game.n
        self.m, self.n = m, n
        self.nx, self.ny = m * m, n * n
        self.N = self.nx + self.ny + 3
        self.iw, self.iv, self.it = self.nx + self.ny, self.nx + self.ny + 1, self.nx + self.ny + 2
        self.LA = game.A.entries.transpose(1, 0, 3, 2).reshape(self.nx, self.ny)
        self.LB = game.B.entries.transpose(3, 2, 1, 0).reshape(self.ny, self.nx)
        self.ekk = np.zeros(self.nx)
        self.ekk[(k - 1) + m * (k - 1)] = 1.0
        self.diag1 = game.mask1 is Mask.DIAGONAL
        self.diag2 = game.mask2 is Mask.DIAGONAL
        self.sym_rows = self._symmetry_rows()

    # packing ---------------------------------------------------------------

    def pack(self, p: PathPoint) -> NDArray:
        return np.concatenate(
            [p.X.ravel(order="F"), p.Y.ravel(order="F"), [p.w, p.v, p.t]]
        )

    def unpack(self, z: NDArray, active=None, residual_norm=float("nan")) -> PathPoint:
        X = z[: self.nx].reshape(self.m, self.m, order="F").copy()
        Y = z[self.nx : self.nx + self.ny].reshape(self.n, self.n, order="F").copy()
        return PathPoint(
            X, Y, float(z[self.iw]), float(z[self.iv]), float(z[self.it]), active, residual_norm
        )

    def split(self, z):
        X = z[: self.nx].reshape(self.m, self.m, order="F")
        Y = z[self.nx : self.nx + self.ny].reshape(self.n, self.n, order="F")
        return X, Y, z[self.iw], z[self.iv], z[self.it]

    # slacks ---------------------------------------------------------------

    def slacks(self, z) -> tuple[NDArray, NDArray]:
        X, Y, w, v, t = self.split(z)
        m, n = self.m, self.n
        phiA = (self.LA @ Y.ravel(order="F")).reshape(m, m, order="F")
        phiA += t * np.sum(Y) * self.ekk.reshape(m, m, order="F")
        phiB = (self.LB @ X.ravel(order="F")).reshape(n, n, order="F")
        return w * np.eye(m) - phiA, v * np.eye(n) - phiB

    def slack_jacobians(self, z) -> tuple[NDArray, NDArray]:
        """``d vec W / dz`` and ``d vec V / dz``."""
        X, Y, w, v, t = self.split(z)
        GW = np.zeros((self.nx, self.N))
        ys = slice(self.nx, self.nx + self.ny)
        GW[:, ys] = -self.LA - t * np.outer(self.ekk, np.ones(self.ny))
        GW[:, self.iw] = np.eye(self.m).ravel(order="F")
        GW[:, self.it] = -np.sum(Y) * self.ekk
        GV = np.zeros((self.ny, self.N))
        GV[:, : self.nx] = -self.LB
        GV[:, self.iv] = np.eye(self.n).ravel(order="F")
        return GW, GV

    # residual ---------------------------------------------------------------

    def _block(self, S, T, diag) -> NDArray:
        if diag:
            R = S.copy()
            np.fill_diagonal(R, np.diag(S) * np.diag(T))
            return R.ravel(order="F")
        return (S @ T).ravel(order="F")

    def residual(self, z) -> NDArray:
        X, Y, *_ = self.split(z)
        W, V = self.slacks(z)
        return np.concatenate(
            [
                self._block(X, W, self.diag1),
                self._block(Y, V, self.diag2),
                [np.trace(X) - 1.0, np.trace(Y) - 1.0],
            ]
        )

    def _block_jac(self, S, T, GT, offset, size, diag) -> NDArray:
        d = S.shape[0]
        J = np.zeros((size, self.N))
        cols = slice(offset, offset + size)
        if diag:
            J[:, cols] = np.eye(size)
            for i in range(d):
                r = i + d * i
                J[r, :] = 0.0
                J[r, offset + r] = T[i, i]
                J[r, :] += S[i, i] * GT[r, :]
            return J
        J[:, cols] = _kron(T.T, np.eye(d))
        J += _kron(np.eye(d), S) @ GT
        return J

    def jacobian(self, z) -> NDArray:
        X, Y, *_ = self.split(z)
        W, V = self.slacks(z)
        GW, GV = self.slack_jacobians(z)
        J1 = self._block_jac(X, W, GW, 0, self.nx, self.diag1)
        J2 = self._block_jac(Y, V, GV, self.nx, self.ny, self.diag2)
        tr = np.zeros((2, self.N))
        tr[0, : self.nx] = np.eye(self.m).ravel(order="F")
        tr[1, self.nx : self.nx + self.ny] = np.eye(self.n).ravel(order="F")
        return np.vstack([J1, J2, tr])

    # symmetry augmentation ---------------------------------------------------

    def _symmetry_rows(self) -> NDArray:
        rows = []
        for offset, d, diag in ((0, self.m, self.diag1), (self.nx, self.n, self.diag2)):
            if diag:
                continue
            for i in range(d):
                for j in range(i + 1, d):
                    r = np.zeros(self.N)
                    r[offset + i + d * j] = 1.0
                    r[offset + j + d * i] = -1.0
                    rows.append(r)
        return np.array(rows).reshape(-1, self.N)

    def residual_aug(self, z) -> NDArray:
        return np.concatenate([self.residual(z), self.sym_rows @ z])

    def jacobian_aug(self, z) -> NDArray:
        return np.vstack([self.jacobian(z), self.sym_rows])

    def symmetrize(self, z) -> NDArray:
        X, Y, w, v, t = self.split(z)
        return np.concatenate(
            [(0.5 * (X + X.T)).ravel(order="F"), (0.5 * (Y + Y.T)).ravel(order="F"), [w, v, t]]
        )


def residual(point: PathPoint, pg: PerturbedGame) -> NDArray:
    """Stacked ``vec(X W)``, ``vec(Y V)``, ``tr X - 1``, ``tr Y - 1`` at ``point``."""
    sys = System(pg.base, pg.k)
    return sys.residual(sys.pack(point))


def jacobian(point: PathPoint, pg: PerturbedGame) -> NDArray:
    """Analytic Jacobian of :func:`residual`, columns over ``(vec X, vec Y, w, v, t)``."""
    sys = System(pg.base, pg.k)
    return sys.jacobian(sys.pack(point))


# ---------------------------------------------------------------------------
# Gauss-Newton corrector


def gauss_newton(
    sys: System,
    z0: NDArray,
    extra: Optional[Callable[[NDArray], tuple[NDArray, NDArray]]] = None,
    *,
    fixed: Optional[dict] = None,
    tol: float = CORRECTOR_TOL,
    max_iter: int = MAX_CORRECTOR_ITER,
) -> tuple[NDArray, int]:
    """Minimum-norm Gauss-Newton on the augmented system plus optional extra rows.

    ``fixed`` maps coordinate indices to values held constant (their
    columns are dropped). Raises ``StepRejected`` on divergence.
    """
    z = np.array(z0, dtype=float)
    free = np.ones(sys.N, dtype=bool)
    if fixed:
        for i, val in fixed.items():
            z[i] = val
            free[i] = False

    def evaluate(z):
        F = sys.residual_aug(z)
        J = sys.jacobian_aug(z)
        if extra is not None:
            g, G = extra(z)
            F = np.concatenate([F, g])
            J = np.vstack([J, G])
        return F, J

    F, J = evaluate(z)
    norm = np.linalg.norm(F)
    history = [norm]
    for it in range(1, max_iter + 1):
        if not np.isfinite(norm):
            break
        dz = np.linalg.lstsq(J[:, free], -F, rcond=None)[0]
        z[free] += dz
        F, J = evaluate(z)
        new = np.linalg.norm(F)
        history.append(new)
        if new <= tol and np.linalg.norm(dz) <= max(1e-9, 1e3 * tol):
            # one extra iteration drives the residual to rounding level
            dz = np.linalg.lstsq(J[:, free], -F, rcond=None)[0]
            z_try = z.copy()
            z_try[free] += dz
            F2, _ = evaluate(z_try)
            if np.linalg.norm(F2) <= new:
                z = z_try
            return z, it
        if len(history) >= 3 and history[-1] > history[-2] > history[-3]:
            break
        if new > 1e3 * max(history[0], 1e-3):
            break
        norm = new
    raise StepRejected(f"corrector failed to converge (residual history {history[-3:]})")


def correct(
    sys: System,
    z0: NDArray,
    extra=None,
    *,
    fixed: Optional[dict] = None,
) -> tuple[NDArray, float, int]:
    """Correct, symmetrize, correct once more. Returns ``(z, residual_norm, iterations)``."""
    z, it = gauss_newton(sys, z0, extra, fixed=fixed)
    z, it2 = gauss_newton(sys, sys.symmetrize(z), extra, fixed=fixed)
    return z, float(np.linalg.norm(sys.residual(z))), it + it2


# ---------------------------------------------------------------------------
# eigenvalue pairs and active sets


@dataclass(frozen=True, eq=False)
class PairSpectrum:
    basis: NDArray
    strategy: NDArray  # lambda_i of X (resp. Y)
    slack: NDArray  # lambda_i of W (resp. V)


def _pair_spectrum(S, T, diag: bool, prev_basis=None, flags=None) -> PairSpectrum:
    d = S.shape[0]
    if diag:
        return PairSpectrum(np.eye(d), np.diag(S).copy(), np.diag(T).copy())
    S = 0.5 * (S + S.T)
    T = 0.5 * (T + T.T)
    js = joint_diagonalize(S, T, tol=1e-5)
    Q = js.basis
    if prev_basis is not None:
        overlap = np.abs(prev_basis.T @ Q)
        rows, cols = linear_sum_assignment(-overlap)
        Q = Q[:, cols]
        overlap = overlap[:, cols]
        if flags is not None:
            for i in range(d):
                for j in range(d):
                    if j != i and flags[j] is not flags[i] and overlap[i, j] > overlap[i, i] - 1e-3:
                        raise TrackingAmbiguity(
                            f"eigenvector {i} overlaps columns {i} and {j} almost equally"
                        )
        signs = np.sign(np.sum(prev_basis * Q, axis=0))
        signs[signs == 0] = 1.0
        Q = Q * signs
    return PairSpectrum(Q, np.einsum("ij,ik,kj->j", Q, S, Q), np.einsum("ij,ik,kj->j", Q, T, Q))


def pair_spectra(sys: System, z, active: Optional[ActiveSet] = None):
    """Joint eigen-pairs ``(X, W)`` and ``(Y, V)`` tracked against ``active``."""
    X, Y, *_ = sys.split(z)
    W, V = sys.slacks(z)
    p1 = _pair_spectrum(
        X, W, sys.diag1, None if active is None else active.basis1, None if active is None else active.flags1
    )
    p2 = _pair_spectrum(
        Y, V, sys.diag2, None if active is None else active.basis2, None if active is None else active.flags2
    )
    return p1, p2


def initial_flags(spec: PairSpectrum) -> tuple:
    return tuple(
        Flag.STRATEGY_ZERO if abs(s) <= abs(d) else Flag.SLACK_ZERO
        for s, d in zip(spec.strategy, spec.slack)
    )


def make_active(sys: System, z, previous: Optional[ActiveSet] = None) -> ActiveSet:
    p1, p2 = pair_spectra(sys, z, previous)
    if previous is None:
        return ActiveSet(initial_flags(p1), initial_flags(p2), p1.basis, p2.basis)
    return ActiveSet(previous.flags1, previous.flags2, p1.basis, p2.basis)


def monitored_values(sys: System, z, active: ActiveSet) -> list[tuple[int, int, float, float]]:
    """``(player, index, value, scale)`` of the non-pinned member of every pair."""
    p1, p2 = pair_spectra(sys, z, active)
    out = []
    for player, spec, flags in ((1, p1, active.flags1), (2, p2, active.flags2)):
        scale = max(1.0, float(np.max(np.abs(spec.slack))), float(np.max(np.abs(spec.strategy))))
        for i, f in enumerate(flags):
            val = spec.slack[i] if f is Flag.STRATEGY_ZERO else spec.strategy[i]
            out.append((player, i, float(val), scale))
    return out


def min_eigenvalues(sys: System, z) -> tuple[float, float, float, float]:
    """``lambda_min`` of ``X, Y, W, V`` with diagonal masks read off the diagonal."""
    X, Y, *_ = sys.split(z)
    W, V = sys.slacks(z)

    def lmin(M, diag):
        M = 0.5 * (M + M.T)
        return float(np.min(np.diag(M))) if diag else float(np.linalg.eigvalsh(M)[0])

    return (lmin(X, sys.diag1), lmin(Y, sys.diag2), lmin(W, sys.diag1), lmin(V, sys.diag2))


def is_feasible(sys: System, z, tol: float = ZERO_TOL) -> bool:
    X, Y, *_ = sys.split(z)
    W, V = sys.slacks(z)
    scale = max(1.0, np.max(np.abs(W)), np.max(np.abs(V)))
    return min(min_eigenvalues(sys, z)) >= -tol * scale


# ---------------------------------------------------------------------------
# start point


def initial_bonus(game: SdGame, k: int, angle_tol: float = 1e-2) -> float:
    """Bonus ``t0`` making the ``k``-th diagonal strategy dominant for player 1.

    Starts at ``2 m n max|A| + 1`` and doubles (at most 10 times) until the
    top eigenvector of ``phi_{A(t0)}(Y*)`` is within ``angle_tol`` of ``e_k``
    with a spectral gap above ``1e-6``, where ``Y*`` is player 2's best
    response to ``E_kk``.
    """
    if not 1 <= k <= game.m:
        raise InvalidInput(f"k must lie in [1, {game.m}], got {k}")
    m, n = game.m, game.n
    t0 = 2.0 * m * n * float(np.max(np.abs(game.A.entries))) + 1.0
    Ekk = np.zeros((m, m))
    Ekk[k - 1, k - 1] = 1.0
    Ystar = best_response_2(game, Ekk).strategy
    for _ in range(11):
        Phi = np.einsum("ijkl,kl->ij", bonus_tensor(game, k, t0), Ystar)
        if game.mask1 is Mask.DIAGONAL:
            d = np.sort(np.diag(Phi))[::-1]
            gap = d[0] - d[1] if m > 1 else np.inf
            ok = int(np.argmax(np.diag(Phi))) == k - 1 and gap > 1e-6
        else:
            vals, vecs = np.linalg.eigh(Phi)
            gap = vals[-1] - vals[-2] if m > 1 else np.inf
            angle = np.arccos(min(1.0, abs(vecs[k - 1, -1])))
            ok = angle <= angle_tol and gap > 1e-6
        if ok:
            return t0
        t0 *= 2.0
    raise BonusIneffective(
        f"no bonus up to {t0 / 2:.3g} makes diagonal strategy {k} dominant "
        f"(1^T Y* 1 = {np.sum(Ystar):.3g}); try a different k"
    )


def start_point(game: SdGame, k: int, t0: Optional[float] = None):
    """Equilibrium of the bonus game at ``t0`` with its active set.

    Returns ``(point, t0, tie_broken)``.
    """
    if t0 is None:
        t0 = initial_bonus(game, k)
    sys = System(game, k)
    A_t0 = bonus_tensor(game, k, t0)
    m = game.m
    X = np.zeros((m, m))
    X[k - 1, k - 1] = 1.0
    br2 = best_response_2(game, X)
    Y = br2.strategy
    tie = br2.tie_broken
    for _ in range(100):
        br1 = best_response_1(game, Y, A=A_t0)
        br2 = best_response_2(game, br1.strategy)
        change = np.linalg.norm(br1.strategy - X) + np.linalg.norm(br2.strategy - Y)
        X, Y = br1.strategy, br2.strategy
        tie = tie or br1.tie_broken or br2.tie_broken
        if change <= 1e-13:
            break
    else:
        raise StartFailure("best-response iteration did not converge in 100 rounds")
    w, v = best_response_1(game, Y, A=A_t0).value, best_response_2(game, X).value
    z0 = sys.pack(PathPoint(X, Y, w, v, t0))
    try:
        z, res, _ = correct(sys, z0, fixed={sys.it: t0})
    except StepRejected as exc:
        raise StartFailure(f"Newton correction of the start point failed: {exc}") from exc
    if not is_feasible(sys, z):
        raise StartFailure("corrected start point is not feasible")
    active = make_active(sys, z)
    return sys.unpack(z, active, res), t0, tie


# ---------------------------------------------------------------------------
# tangent and step


def null_direction(J: NDArray) -> tuple[NDArray, NDArray]:
    """Right singular vectors sorted by increasing singular value, and the padded values."""
    _, s, Vt = np.linalg.svd(J, full_matrices=True)
    N = J.shape[1]
    sv = np.zeros(N)
    sv[: len(s)] = s
    return Vt[::-1], sv[::-1]


def tangent_at(sys: System, z, previous: Optional[NDArray] = None, check: bool = True) -> NDArray:
    J = sys.jacobian_aug(z)
    vecs, sv = null_direction(J)
    if check and sv[1] <= NULL_TOL * max(1.0, sv[-1]):
        raise NearSingular(
            f"null space is not one-dimensional (singular values {sv[0]:.2e}, {sv[1]:.2e})"
        )
    d = vecs[0]
    if previous is not None:
        if d @ previous < 0:
            d = -d
    elif d[sys.it] > 0:
        d = -d
    return d / np.linalg.norm(d)


def tangent(point: PathPoint, pg: PerturbedGame, previous: Optional[Tangent] = None) -> Tangent:
    """Unit null vector of the symmetry-augmented Jacobian.

    Oriented to agree with ``previous``, or with ``dt < 0`` when there is none.
    """
    sys = System(pg.base, pg.k)
    prev = None if previous is None else previous.direction
    d = tangent_at(sys, sys.pack(point), prev)
    return Tangent(d, 1 if prev is None or d @ prev > 0 else -1)


def arclength_row(z_pred: NDArray, direction: NDArray):
    def extra(z):
        return np.array([direction @ (z - z_pred)]), direction[None, :]

    return extra


def predict_correct(sys: System, z, direction: NDArray, h: float) -> tuple[NDArray, float, int]:
    """Pseudo-arclength step of length ``h``; raises ``StepRejected``."""
    if h == 0:
        return z.copy(), float(np.linalg.norm(sys.residual(z))), 0
    z_pred = z + h * direction
    z_new, res, it = correct(sys, z_pred, arclength_row(z_pred, direction))
    if res > CORRECTOR_TOL:
        raise StepRejected(f"residual {res:.2e} above tolerance")
    if np.linalg.norm(z_new - z_pred) > 0.5 * h + 1e-12:
        raise StepRejected("corrector moved too far from the predictor")
    return z_new, res, it


def step(point: PathPoint, tangent_: Tangent, h: float, pg: PerturbedGame) -> PathPoint:
    """Predictor along ``tangent_`` then Gauss-Newton correction.

    The returned point keeps ``point``'s active flags with re-tracked
    eigenbases; it is rejected if the PSD invariants fail.
    """
    if h < 0:
        raise InvalidInput("step length must be non-negative")
    sys = System(pg.base, pg.k)
    z = sys.pack(point)
    z_new, res, _ = predict_correct(sys, z, tangent_.direction, h)
    if not is_feasible(sys, z_new):
        raise StepRejected("corrected point violates the PSD invariants")
    active = None if point.active is None else make_active(sys, z_new, point.active)
    return sys.unpack(z_new, active, res)


# ---------------------------------------------------------------------------
# the path trace


@dataclass
class TraceOptions:
    max_steps: int = 100_000
    h0: float = 1e-2
    tmax_mult: float = 4.0
    h_trial: float = 1e-4


@dataclass(eq=False)
class Trace:
    """Ordered path points and event records from the start point to the end."""

    game: SdGame
    k: int
    t0: float
    records: list = field(default_factory=list)
    status: str = "running"
    certificate: object = None
    steps: int = 0
    diagnostics: list = field(default_factory=list)

    @property
    def points(self) -> list[PathPoint]:
        return [r for r in self.records if isinstance(r, PathPoint)]

    @property
    def events(self) -> list:
        return [r for r in self.records if not isinstance(r, PathPoint)]


class _PuiseuxCollector:
    """Samples ``(t - t*, released eigenvalue)`` on the branch after a crossing."""

    def __init__(self, event, t_star: float):
        self.event = event
        self.t_star = t_star
        self.samples: list[tuple[float, float]] = []

    def add(self, sys: System, z, active: ActiveSet) -> None:
        s = float(sys.split(z)[4]) - self.t_star
        if abs(s) < 1e-14:
            return
        for player, i, val, _ in monitored_values(sys, z, active):
            if (player, i) == (self.event.player, self.event.eigen_index) and val != 0:
                self.samples.append((s, val))

    def ready(self) -> bool:
        if len(self.samples) < 8:
            return False
        mags = [abs(s) for s, _ in self.samples]
        return max(mags) >= 100.0 * min(mags)

    def finish(self) -> None:
        from .errors import FitUnreliable
        from .events import puiseux_fit

        try:
            exponent, coeff = puiseux_fit(self.samples)
        except FitUnreliable as exc:
            self.event.puiseux = {"error": str(exc), "samples": len(self.samples)}
            return
        self.event.puiseux = {
            "exponent": str(exponent),
            "coefficient": coeff,
            "samples": len(self.samples),
        }


def trace_path(game: SdGame, k: int, options: Optional[TraceOptions] = None) -> Trace:
    """Follow the bonus homotopy from its start point down to ``t = 0``.

    Raises a ``PathFailure`` subclass (carrying the partial trace) when the
    path stalls, leaves ``[0, tmax_mult * t0]``, leaves the strategy space
    or ends at a degenerate equilibrium.
    """
    from .errors import (
        DegenerateEndpoint,
        PathLeavesStrategySpace,
        RangeExceeded,
        RefinementFailure,
        StallFailure,
    )
    from .events import EventKind, EventRecord, detect_crossing, refine_event, switch_branch
    from .game import verify_nash

    opts = options or TraceOptions()
    sys = System(game, k)
    pg = PerturbedGame(game, k)
    point, t0, tie = start_point(game, k)
    trace = Trace(game, k, t0, [point])
    if tie:
        trace.diagnostics.append("best-response tie broken at the start point")
    t_max = opts.tmax_mult * t0
    z = sys.pack(point)
    try:
        d = tangent_at(sys, z)
    except NearSingular as exc:
        note = " after a best-response tie" if tie else ""
        raise StartFailure(f"start point is singular{note}; try a different k ({exc})") from exc
    h = opts.h0
    good = 0
    collector: Optional[_PuiseuxCollector] = None

    def fail(cls, msg):
        trace.status = cls.kind
        if collector is not None and collector.ready():
            collector.finish()
        return cls(msg, trace)

    while trace.steps < opts.max_steps:
        try:
            z_new, res, iters = predict_correct(sys, z, d, h)
            prev_point = sys.unpack(z, point.active)
            bracket = detect_crossing(prev_point, sys.unpack(z_new), pg, d, h)
        except (StepRejected, TrackingAmbiguity) as exc:
            h *= 0.5
            good = 0
            if h < H_MIN:
                raise fail(StallFailure, f"step size fell below {H_MIN:g}: {exc}")
            continue
        trace.steps += 1

        if bracket is not None:
            if collector is not None:
                if collector.ready():
                    collector.finish()
                collector = None
            try:
                event = refine_event(bracket, pg)
            except RefinementFailure:
                h *= 0.5
                if h < H_MIN:
                    raise fail(StallFailure, "event refinement failed repeatedly")
                continue
            trace.records.append(event)
            if event.kind is EventKind.HOMOTOPY_END:
                return _finish(trace, sys, event, verify_nash, DegenerateEndpoint)
            switched = switch_branch(event, pg, opts.h_trial)
            if switched is None:
                trace.records.append(
                    EventRecord(EventKind.BOUNDARY_EXIT, event.t_star, event.point)
                )
                raise fail(
                    PathLeavesStrategySpace,
                    f"no feasible continuation after the crossing at t = {event.t_star:.6g}",
                )
            point, d = switched
            event.flipped_index = event.eigen_index
            z = sys.pack(point)
            trace.records.append(point)
            collector = _PuiseuxCollector(event, event.t_star)
            collector.add(sys, z, point.active)
            try:
                d = tangent_at(sys, z, d)
            except NearSingular:
                pass
            h = opts.h0
            good = 0
            continue

        if z_new[sys.it] > t_max:
            trace.records.append(
                EventRecord(EventKind.RANGE_EXCEEDED, float(z_new[sys.it]), sys.unpack(z_new))
            )
            raise fail(RangeExceeded, f"t = {z_new[sys.it]:.6g} exceeds {t_max:.6g}")

        active = make_active(sys, z_new, point.active)
        point = sys.unpack(z_new, active, res)
        trace.records.append(point)
        if collector is not None:
            collector.add(sys, z_new, active)
            if collector.ready():
                collector.finish()
                collector = None
        secant = z_new - z
        z = z_new
        try:
            d = tangent_at(sys, z, d)
        except NearSingular:
            d = secant / np.linalg.norm(secant)
        if iters <= 4:
            good += 1
            if good >= 3:
                h = min(2.0 * h, H_MAX)
                good = 0
        else:
            good = 0
    raise fail(StallFailure, f"no end point within {opts.max_steps} steps")


def _finish(trace: Trace, sys: System, event, verify_nash, DegenerateEndpoint) -> Trace:
    p = event.point
    X = 0.5 * (p.X + p.X.T)
    Y = 0.5 * (p.Y + p.Y.T)
    cert = verify_nash(trace.game, X, Y)
    trace.certificate = cert
    J = np.delete(sys.jacobian_aug(sys.pack(p)), sys.it, axis=1)
    smin = float(np.linalg.svd(J, compute_uv=False)[-1])
    if smin < NULL_TOL * max(1.0, float(np.linalg.norm(J, 2))):
        trace.status = DegenerateEndpoint.kind
        trace.diagnostics.append(
            f"Jacobian at t = 0 is singular (sigma_min {smin:.2e}): equilibria are not isolated"
        )
        raise DegenerateEndpoint(
            f"degenerate end point: sigma_min of the t = 0 Jacobian is {smin:.2e}", trace
        )
    trace.status = "equilibrium" if cert.valid else "not_equilibrium"
    return trace
