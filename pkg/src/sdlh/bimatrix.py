"""Classical bimatrix machinery used as an independent oracle for the tracer."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .errors import DegenerateGame, InternalError, InvalidInput, StepRejected
from .game import Mask, PayoffTensor, SdGame, verify_nash

log = logging.getLogger(__name__)

LABEL_TOL = 1e-9
RATIO_TIE = 1e-10
CLUSTER_RADIUS = 1e-3


@dataclass(frozen=True, eq=False)
class BimatrixGame:
    A: NDArray
    B: NDArray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if A.ndim != 2 or A.shape != B.shape or min(A.shape) < 1:
            raise InvalidInput(f"payoff matrices must share a non-empty 2-d shape, got {A.shape}, {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise InvalidInput("payoff matrices have non-finite entries")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


def labels_of(strategy, game: BimatrixGame, side: int) -> frozenset:
    """Labels of a mixed strategy of player ``side`` (1 or 2).

    Player 1 owns labels ``1..m``, player 2 owns ``m+1..m+n``. A strategy
    carries its own zero-coordinate labels and the labels of the
    opponent's pure best responses against it. The artificial zero vector
    carries exactly its own labels.
    """
    s = np.asarray(strategy, dtype=float)
    m, n = game.m, game.n
    if side == 1:
        own, other, payoff = range(1, m + 1), range(m + 1, m + n + 1), lambda x: x @ game.B
    elif side == 2:
        own, other, payoff = range(m + 1, m + n + 1), range(1, m + 1), lambda y: game.A @ y
    else:
        raise InvalidInput(f"side must be 1 or 2, got {side}")
    labels = {lab for lab, val in zip(own, s) if abs(val) <= LABEL_TOL}
    if np.sum(np.abs(s)) > 0:
        u = payoff(s)
        labels |= {lab for lab, val in zip(other, u) if val >= u.max() - LABEL_TOL}
    return frozenset(labels)


@dataclass
class PivotState:
    """Tableau ``[coefficients | rhs]`` with one column per label."""

    tableau: NDArray
    basis: list  # label held by each row

    def pivot(self, label: int) -> int:
        """Bring ``label`` into the basis; return the label that leaves."""
        T = self.tableau
        col = T[:, label - 1]
        rows = np.flatnonzero(col > 1e-12)
        if rows.size == 0:
            raise InternalError(f"unbounded pivot column for label {label}")
        ratios = T[rows, -1] / col[rows]
        order = np.argsort(ratios, kind="stable")
        best = ratios[order[0]]
        if rows.size > 1 and ratios[order[1]] - best <= RATIO_TIE * max(1.0, abs(best)):
            raise DegenerateGame(f"tie in the min-ratio test when label {label} enters")
        r = rows[order[0]]
        T[r] /= T[r, label - 1]
        for i in range(T.shape[0]):
            if i != r:
                T[i] -= T[i, label - 1] * T[r]
        leaving = self.basis[r]
        self.basis[r] = label
        return leaving

    def values(self, labels) -> NDArray:
        out = np.zeros(len(labels))
        for row, lab in enumerate(self.basis):
            if lab in labels:
                out[labels.index(lab)] = self.tableau[row, -1]
        return out


@dataclass(frozen=True)
class LemkeHowsonResult:
    x: NDArray
    y: NDArray
    w: float
    v: float
    pivots: int
    dropped_k: bool  # ended by the variable with label k leaving, not by k becoming a best response

    def __iter__(self):
        return iter((self.x, self.y, self.w, self.v))


def lemke_howson(game: BimatrixGame, k: int) -> LemkeHowsonResult:
    """Complementary pivoting from the artificial equilibrium with missing label ``k``.

    ``pivots`` counts every basis exchange, including the first one that
    leaves the artificial equilibrium.
    """
    m, n = game.m, game.n
    if not 1 <= k <= m + n:
        raise InvalidInput(f"k must lie in [1, {m + n}], got {k}")
    shift_a = 1.0 + abs(float(game.A.min()))
    shift_b = 1.0 + abs(float(game.B.min()))
    A = game.A + shift_a
    B = game.B + shift_b
    # x-side: B^T x + s = 1 (x labels 1..m, slack labels m+1..m+n)
    tx = np.hstack([B.T, np.eye(n), np.ones((n, 1))])
    # y-side: r + A y = 1 (slack labels 1..m, y labels m+1..m+n)
    ty = np.hstack([np.eye(m), A, np.ones((m, 1))])
    px = PivotState(tx, list(range(m + 1, m + n + 1)))
    py = PivotState(ty, list(range(1, m + 1)))
    limit = math.comb(m + n, m) + 2
    entering = k
    state, other = (px, py) if k <= m else (py, px)
    pivots = 0
    while True:
        leaving = state.pivot(entering)
        pivots += 1
        if leaving == k:
            break
        if pivots > limit:
            raise InternalError(f"no termination after {pivots} pivots")
        # the variable sharing the leaving label enters the other system
        entering = leaving
        state, other = other, state
    dropped = state is (px if k <= m else py)
    xs = px.values(list(range(1, m + 1)))
    ys = py.values(list(range(m + 1, m + n + 1)))
    sx, sy = xs.sum(), ys.sum()
    if sx <= 0 or sy <= 0:
        raise InternalError("pivoting ended at the artificial equilibrium")
    return LemkeHowsonResult(xs / sx, ys / sy, 1.0 / sy - shift_a, 1.0 / sx - shift_b, pivots, dropped)


def embed_diagonal(game: BimatrixGame) -> SdGame:
    """Diagonal semidefinite game with ``A[i, i, j, j] = a_ij`` and both masks diagonal."""
    m, n = game.m, game.n
    TA = np.zeros((m, m, n, n))
    TB = np.zeros((m, m, n, n))
    for i in range(m):
        for j in range(n):
            TA[i, i, j, j] = game.A[i, j]
            TB[i, i, j, j] = game.B[i, j]
    return SdGame(PayoffTensor(TA), PayoffTensor(TB), Mask.DIAGONAL, Mask.DIAGONAL)


def support_enumeration(game: BimatrixGame, tol: float = 1e-9) -> list[tuple[NDArray, NDArray]]:
    """All equilibria found on equal-size supports; complete for non-degenerate games."""
    m, n = game.m, game.n
    if m > 4 or n > 4:
        raise InvalidInput("support enumeration is limited to m, n <= 4")
    A, B = game.A, game.B
    found: list[tuple[NDArray, NDArray]] = []
    for size in range(1, min(m, n) + 1):
        for I in itertools.combinations(range(m), size):
            for J in itertools.combinations(range(n), size):
                # y on J makes rows I indifferent; x on I makes columns J indifferent
                My = np.zeros((size + 1, size + 1))
                My[:size, :size] = A[np.ix_(I, J)]
                My[:size, size] = -1.0
                My[size, :size] = 1.0
                Mx = np.zeros((size + 1, size + 1))
                Mx[:size, :size] = B[np.ix_(I, J)].T
                Mx[:size, size] = -1.0
                Mx[size, :size] = 1.0
                rhs = np.zeros(size + 1)
                rhs[size] = 1.0
                try:
                    sy = np.linalg.solve(My, rhs)
                    sx = np.linalg.solve(Mx, rhs)
                except np.linalg.LinAlgError:
                    log.debug("singular support system for I=%s J=%s", I, J)
                    continue
                x = np.zeros(m)
                y = np.zeros(n)
                x[list(I)] = sx[:size]
                y[list(J)] = sy[:size]
                if x.min() < -tol or y.min() < -tol:
                    continue
                x, y = np.clip(x, 0, None), np.clip(y, 0, None)
                if (A @ y).max() > sy[size] + tol or (x @ B).max() > sx[size] + tol:
                    continue
                if any(np.abs(x - a).max() <= 1e-9 and np.abs(y - b).max() <= 1e-9 for a, b in found):
                    continue
                found.append((x, y))
    return found


# ---------------------------------------------------------------------------
# brute force for 2x2 semidefinite games

def _density(r: NDArray) -> NDArray:
    """Real 2x2 density matrices from disk coordinates ``(a, b)`` (batched)."""
    a, b = r[..., 0], r[..., 1]
    out = np.empty(r.shape[:-1] + (2, 2))
    out[..., 0, 0] = 0.5 * (1 + a)
    out[..., 1, 1] = 0.5 * (1 - a)
    out[..., 0, 1] = out[..., 1, 0] = 0.5 * b
    return out


def _disk_grid(step: float) -> NDArray:
    g = np.arange(-1.0, 1.0 + step / 2, step)
    a, b = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([a.ravel(), b.ravel()], axis=1)
    pts = pts[np.sum(pts**2, axis=1) <= 1.0 + 1e-12]
    # the optimum of a linear functional sits on the circle, so include it densely
    ang = np.arange(0.0, 2 * np.pi, step)
    return np.vstack([pts, np.stack([np.cos(ang), np.sin(ang)], axis=1)])


@dataclass
class BruteForceResult:
    equilibria: list = field(default_factory=list)  # (X, Y) cluster representatives
    degenerate: bool = False
    candidates: int = 0

    def __len__(self):
        return len(self.equilibria)

    def __iter__(self):
        return iter(self.equilibria)


def _payoff_gradient(Phi: NDArray) -> NDArray:
    """``d <X, Phi> / d(a, b)`` in disk coordinates."""
    return np.stack([0.5 * (Phi[..., 0, 0] - Phi[..., 1, 1]), Phi[..., 0, 1]], axis=-1)


def _polish(game: SdGame, X: NDArray, Y: NDArray):
    from .tracer import PathPoint, System, correct, is_feasible

    sys = System(game, 1)
    w = float(np.linalg.eigvalsh(np.einsum("ijkl,kl->ij", game.A.entries, Y))[-1])
    v = float(np.linalg.eigvalsh(np.einsum("ij,ijkl->kl", X, game.B.entries))[-1])
    z0 = sys.pack(PathPoint(X, Y, w, v, 0.0))
    try:
        z, _, _ = correct(sys, z0, fixed={sys.it: 0.0})
    except StepRejected:
        return None
    if not is_feasible(sys, z):
        return None
    Xp, Yp, *_ = sys.split(z)
    return 0.5 * (Xp + Xp.T), 0.5 * (Yp + Yp.T)


def brute_force_2x2_sdg(game: SdGame, grid: float = 0.05) -> BruteForceResult:
    """Grid search over pairs of real 2x2 density matrices, then Newton polish.

    Each density matrix is a point of the unit disk. For every grid point
    ``Y`` the player-1 strategies within ``eps`` of a best response form a
    cap of the disk, found by a ball query; surviving pairs must also be
    ``eps``-best responses for player 2. Candidates are thinned, polished,
    verified and clustered at radius ``1e-3``. The result is flagged
    degenerate when the clusters look like a continuum (more than 20, or
    two of them closer than ``10 * grid``).
    """
    if game.m != 2 or game.n != 2 or game.mask1 is not Mask.FULL or game.mask2 is not Mask.FULL:
        raise InvalidInput("brute force needs a 2x2 game with full masks")
    if not 0 < grid <= 0.5:
        raise InvalidInput(f"grid resolution must lie in (0, 0.5], got {grid}")
    pts = _disk_grid(grid)
    dens = _density(pts)
    tree = cKDTree(pts)
    scale = max(1.0, float(np.max(np.abs(game.A.entries))), float(np.max(np.abs(game.B.entries))))
    eps = 2.0 * grid * scale

    PhiA = np.einsum("ijkl,pkl->pij", game.A.entries, dens)  # player 1's operator per Y
    PhiB = np.einsum("pij,ijkl->pkl", dens, game.B.entries)  # player 2's operator per X
    g1 = _payoff_gradient(PhiA)
    g2 = _payoff_gradient(PhiB)
    best1 = np.linalg.eigvalsh(PhiA)[:, -1]
    best2 = np.linalg.eigvalsh(PhiB)[:, -1]
    base1 = 0.5 * (PhiA[:, 0, 0] + PhiA[:, 1, 1])
    base2 = 0.5 * (PhiB[:, 0, 0] + PhiB[:, 1, 1])

    pairs = []
    for iy in range(len(pts)):
        norm = float(np.linalg.norm(g1[iy]))
        if norm <= eps:
            cand = np.arange(len(pts))
        else:
            d = eps / norm
            cand = np.asarray(tree.query_ball_point(g1[iy] / norm, math.sqrt(2 * d)), dtype=int)
        if cand.size == 0:
            continue
        gap1 = best1[iy] - (base1[iy] + pts[cand] @ g1[iy])
        cand = cand[gap1 <= eps]
        gap2 = best2[cand] - (base2[cand] + g2[cand] @ pts[iy])
        for ix in cand[gap2 <= eps]:
            pairs.append((ix, iy))
    result = BruteForceResult(candidates=len(pairs))
    if not pairs:
        return result

    # thin to representatives about 3 grid steps apart in (x, y) coordinates
    coords = np.array([np.concatenate([pts[ix], pts[iy]]) for ix, iy in pairs])
    ctree = cKDTree(coords)
    taken = np.zeros(len(coords), dtype=bool)
    reps = []
    for i in range(len(coords)):
        if taken[i]:
            continue
        reps.append(i)
        taken[ctree.query_ball_point(coords[i], 3 * grid)] = True

    found: list[tuple[NDArray, NDArray]] = []
    for i in reps:
        ix, iy = pairs[i]
        polished = _polish(game, dens[ix], dens[iy])
        if polished is None:
            continue
        X, Y = polished
        if not verify_nash(game, X, Y).valid:
            continue
        if any(
            math.hypot(np.linalg.norm(X - a), np.linalg.norm(Y - b)) <= CLUSTER_RADIUS for a, b in found
        ):
            continue
        found.append((X, Y))
    result.equilibria = found
    if len(found) > 20:
        result.degenerate = True
    elif len(found) > 1:
        flat = np.array([np.concatenate([X.ravel(), Y.ravel()]) for X, Y in found])
        dmin = min(
            np.linalg.norm(flat[i] - flat[j]) for i in range(len(flat)) for j in range(i + 1, len(flat))
        )
        result.degenerate = bool(dmin < 10 * grid)
    return result
