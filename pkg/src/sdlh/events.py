"""Event points: detection, refinement, branch switching and diagnostics.

An event is a path point where one eigenvalue pair of ``(X, W)`` or
``(Y, V)`` has both members at zero, or where the bonus reaches ``t = 0``.
Between events every pair has exactly one pinned (zero) member; the other
member is monitored and must stay non-negative.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import FitUnreliable, RefinementFailure, StepRejected
from .game import Mask, SdGame, best_response_1, best_response_2, strict_complementarity
from .linalg import numerical_rank
from .tracer import (
    CORRECTOR_TOL,
    ZERO_TOL,
    ActiveSet,
    Flag,
    PathPoint,
    PerturbedGame,
    System,
    correct,
    gauss_newton,
    is_feasible,
    make_active,
    monitored_values,
    null_direction,
    pair_spectra,
    predict_correct,
)

log = logging.getLogger(__name__)

H_TRIAL = 1e-4
MINOR_TOL = 1e-7


class EventKind(str, enum.Enum):
    PAIRED_CROSSING = "PairedCrossing"
    HOMOTOPY_END = "HomotopyEnd"
    BOUNDARY_EXIT = "BoundaryExit"
    RANGE_EXCEEDED = "RangeExceeded"


@dataclass(frozen=True)
class MinorCondition:
    player: int
    level: int
    holds: bool
    strategy_minor: float  # largest |minor| of the strategy at this level
    slack_minor: float


@dataclass(eq=False)
class EventRecord:
    kind: EventKind
    t_star: float
    point: PathPoint
    player: Optional[int] = None
    eigen_index: Optional[int] = None
    flipped_index: Optional[int] = None
    puiseux: Optional[dict] = None
    minors: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class Bracket:
    """A step from ``prev`` of length ``h`` along ``direction`` crossing an event."""

    prev: PathPoint
    direction: NDArray
    h: float
    kind: str  # "pair" or "end"
    player: Optional[int] = None
    index: Optional[int] = None


# ---------------------------------------------------------------------------
# detection


def _quantities(sys: System, z, active: ActiveSet) -> dict:
    out = {("end", None, None): (float(sys.split(z)[4]), 1.0)}
    for player, i, val, scale in monitored_values(sys, z, active):
        out[("pair", player, i)] = (val, scale)
    return out


def detect_crossing(
    prev: PathPoint,
    next_: PathPoint,
    pg: PerturbedGame,
    direction: Optional[NDArray] = None,
    h: Optional[float] = None,
) -> Optional[Bracket]:
    """Bracket the earliest sign change (or sub-tolerance dip) of a monitored value.

    Pairs are matched across the step by eigenvector overlap
    (``TrackingAmbiguity`` propagates). ``t`` dropping to zero or below
    yields an ``"end"`` bracket.
    """
    sys = System(pg.base, pg.k)
    z0, z1 = sys.pack(prev), sys.pack(next_)
    if direction is None:
        direction = z1 - z0
        h = float(np.linalg.norm(direction))
        if h == 0:
            return None
        direction = direction / h
    q0 = _quantities(sys, z0, prev.active)
    q1 = _quantities(sys, z1, prev.active)
    best = None
    for key, (v1, scale) in q1.items():
        v0 = q0[key][0]
        crossed = v1 <= 0.0 if key[0] == "end" else v1 <= ZERO_TOL * scale
        if not crossed:
            continue
        frac = v0 / (v0 - v1) if v0 != v1 else 1.0
        if best is None or frac < best[0]:
            best = (frac, key)
    if best is None:
        return None
    kind, player, index = best[1]
    return Bracket(prev, direction, h, kind, player, index)


# ---------------------------------------------------------------------------
# refinement


def _pair_rows(sys: System, z, player: int, q: NDArray):
    """Values and gradients of ``q^T S q`` and ``q^T T q`` for the pair's strategy/slack."""
    qq = np.outer(q, q).ravel(order="F")
    X, Y, *_ = sys.split(z)
    W, V = sys.slacks(z)
    GW, GV = sys.slack_jacobians(z)
    rs = np.zeros(sys.N)
    if player == 1:
        rs[: sys.nx] = qq
        return float(q @ X @ q), rs, float(q @ W @ q), qq @ GW
    rs[sys.nx : sys.nx + sys.ny] = qq
    return float(q @ Y @ q), rs, float(q @ V @ q), qq @ GV


def _basis_vector(sys: System, z, active: ActiveSet, player: int, index: int) -> NDArray:
    p1, p2 = pair_spectra(sys, z, active)
    return (p1 if player == 1 else p2).basis[:, index]


def _value_along(sys, z0, active, direction, h, key):
    z, _, _ = predict_correct(sys, z0, direction, h)
    vals = _quantities(sys, z, active)
    return z, vals


def _locate(sys, bracket: Bracket):
    """Illinois-safeguarded bisection on the arclength for the earliest crossing."""
    z0 = sys.pack(bracket.prev)
    active = bracket.prev.active
    key = (bracket.kind, bracket.player, bracket.index)
    a, b = 0.0, bracket.h
    zb, qb = _value_along(sys, z0, active, bracket.direction, b, key)
    fa = _quantities(sys, z0, active)[key][0]
    fb = qb[key][0]
    za = z0
    side = 0
    for _ in range(200):
        scale = qb[key][1]
        if abs(b - a) <= 1e-12 or abs(fb) <= 1e-13 * scale:
            break
        c = b - fb * (b - a) / (fb - fa) if fa != fb else 0.5 * (a + b)
        if not (a < c < b):
            c = 0.5 * (a + b)
        try:
            zc, qc = _value_along(sys, z0, active, bracket.direction, c, key)
        except StepRejected:
            c = 0.5 * (a + b)
            zc, qc = _value_along(sys, z0, active, bracket.direction, c, key)
        # another monitored quantity may already be negative at c
        earlier = [
            k2
            for k2, (v, s) in qc.items()
            if k2 != key and (v < 0 if k2[0] == "end" else v < -ZERO_TOL * s)
        ]
        if earlier:
            key = earlier[0]
            b, zb, qb, fb = c, zc, qc, qc[key][0]
            fa = _quantities(sys, z0, active)[key][0]
            a, za, side = 0.0, z0, 0
            continue
        fc = qc[key][0]
        if fc > 0:
            a, za, fa = c, zc, fc
            if side == 1:
                fb *= 0.5
            side = 1
        else:
            b, zb, qb, fb = c, zc, qc, fc
            if side == -1:
                fa *= 0.5
            side = -1
    # the point on the feasible side is closest to the true crossing in sign
    return key, (za if abs(fa) < abs(fb) else zb)


def refine_event(bracket: Bracket, pg: PerturbedGame) -> EventRecord:
    """Localize the crossing, then Newton onto the event point.

    Pair events add the equations ``lambda_strategy = 0`` and
    ``lambda_slack = 0`` of the flagged pair (Rayleigh quotients of the
    tracked eigenvector); end events fix ``t = 0``.
    """
    sys = System(pg.base, pg.k)
    active = bracket.prev.active
    try:
        key, z = _locate(sys, bracket)
    except StepRejected as exc:
        raise RefinementFailure(f"could not localize the crossing: {exc}") from exc
    kind, player, index = key
    try:
        if kind == "end":
            z, res, _ = correct(sys, z, fixed={sys.it: 0.0})
            point = sys.unpack(z, make_active(sys, z, active), res)
            return EventRecord(EventKind.HOMOTOPY_END, 0.0, point)
        for _ in range(4):
            q = _basis_vector(sys, z, active, player, index)

            def extra(zz, q=q):
                vs, rs, vt, rt = _pair_rows(sys, zz, player, q)
                return np.array([vs, vt]), np.vstack([rs, rt])

            z_new, _ = gauss_newton(sys, z, extra)
            z_new, _ = gauss_newton(sys, sys.symmetrize(z_new), extra)
            moved = np.linalg.norm(z_new - z)
            z = z_new
            if moved <= 1e-13:
                break
    except StepRejected as exc:
        raise RefinementFailure(f"augmented Newton diverged: {exc}") from exc
    res = float(np.linalg.norm(sys.residual(z)))
    point = sys.unpack(z, make_active(sys, z, active), res)
    rec = EventRecord(
        EventKind.PAIRED_CROSSING, point.t, point, player=player, eigen_index=index
    )
    rec.minors = minor_scan(point, pg)
    return rec


# ---------------------------------------------------------------------------
# branch switching


def switch_branch(event: EventRecord, pg: PerturbedGame, h_trial: float = H_TRIAL):
    """Flip the flagged pair and step onto the branch where the pinned member is released.

    Returns ``(point, direction)``; ``direction`` orients the next tangent.
    The post-event direction lies in the two-dimensional null space of the
    Jacobian and keeps the previously monitored eigenvalue at zero while the
    previously pinned one grows. Returns ``None`` when neither orientation
    gives a feasible trial point (the path leaves the strategy space).
    """
    sys = System(pg.base, pg.k)
    p = event.point
    z = sys.pack(p)
    active = p.active
    player, index = event.player, event.eigen_index
    q = _basis_vector(sys, z, active, player, index)
    _, rs, _, rt = _pair_rows(sys, z, player, q)
    flag = (active.flags1 if player == 1 else active.flags2)[index]
    # pinned member before the flip is released, monitored member becomes pinned
    r_release, r_pin = (rs, rt) if flag is Flag.STRATEGY_ZERO else (rt, rs)
    vecs, _ = null_direction(sys.jacobian_aug(z))
    n1, n2 = vecs[0], vecs[1]
    d = (r_pin @ n2) * n1 - (r_pin @ n1) * n2
    d /= np.linalg.norm(d)
    if r_release @ d < 0:
        d = -d
    new_active = active.flip(player, index)
    for direction in (d, -d):
        try:
            z_new, res, _ = predict_correct(sys, z, direction, h_trial)
        except StepRejected:
            continue
        if not is_feasible(sys, z_new):
            continue
        tracked = make_active(sys, z_new, new_active)
        released = [
            val for pl, i, val, _ in monitored_values(sys, z_new, tracked) if (pl, i) == (player, index)
        ][0]
        if released <= 0:
            continue
        return sys.unpack(z_new, tracked, res), direction
    return None


# ---------------------------------------------------------------------------
# diagnostics


def puiseux_fit(samples: Sequence[tuple[float, float]], max_denominator: int = 4):
    """Fit ``value ~ c * s**(p/q)`` near ``s = 0``.

    The exponent is the least-squares slope of ``log|value|`` against
    ``log|s|`` rounded to the nearest fraction with denominator at most
    ``max_denominator``. The coefficient is the geometric mean of
    ``|value| / |s|**exponent``; its sign is recovered relative to
    ``s**exponent`` when the exponent is an integer and relative to
    ``|s|**exponent`` otherwise.
    """
    s = np.array([a for a, _ in samples], dtype=float)
    val = np.array([b for _, b in samples], dtype=float)
    if len(s) < 8:
        raise FitUnreliable(f"need at least 8 samples, got {len(s)}")
    if not (np.all(s > 0) or np.all(s < 0)):
        raise FitUnreliable("samples must lie on one side of s = 0")
    if np.any(val == 0):
        raise FitUnreliable("sample values must be non-zero")
    ls, lv = np.log(np.abs(s)), np.log(np.abs(val))
    if ls.max() - ls.min() < math.log(100.0) - 1e-9:
        raise FitUnreliable("samples must span two decades of |s|")
    slope, intercept = np.polyfit(ls, lv, 1)
    fit_residual = float(np.max(np.abs(lv - (slope * ls + intercept))))
    if fit_residual > 0.05:
        raise FitUnreliable(f"log-log fit residual {fit_residual:.3f} exceeds 0.05")
    exponent = Fraction(float(slope)).limit_denominator(max_denominator)
    p = float(exponent)
    magnitude = float(np.exp(np.mean(lv - p * ls)))
    sign = np.sign(np.median(np.sign(val)))
    if exponent.denominator == 1 and s[0] < 0 and exponent.numerator % 2 == 1:
        sign = -sign
    return exponent, float(sign * magnitude)


def _max_minor(M: NDArray, size: int) -> float:
    d = M.shape[0]
    if size > d:
        return 0.0
    if size <= 0:
        return 1.0
    best = 0.0
    for rows in itertools.combinations(range(d), size):
        for cols in itertools.combinations(range(d), size):
            best = max(best, abs(float(np.linalg.det(M[np.ix_(rows, cols)]))))
    return best


def _vanish(M: NDArray, size: int) -> tuple[bool, float]:
    mx = _max_minor(M, size)
    scale = max(1.0, float(np.linalg.norm(M, 2))) ** max(size, 0)
    return mx <= MINOR_TOL * scale, mx


def minor_scan(point: PathPoint, pg: PerturbedGame) -> list[MinorCondition]:
    """Evaluate the determinantal event conditions at every level.

    Player 1, level ``k``: all ``k x k`` minors of ``X`` and all
    ``(m-k+1) x (m-k+1)`` minors of ``W`` vanish. Player 2, level ``l``:
    all ``(n-l+1)``-minors of ``Y`` and all ``l``-minors of ``V`` vanish.
    """
    sys = System(pg.base, pg.k)
    z = sys.pack(point)
    X, Y, *_ = sys.split(z)
    W, V = sys.slacks(z)
    X, Y = 0.5 * (X + X.T), 0.5 * (Y + Y.T)
    if sys.diag1:
        W = np.diag(np.diag(W))
    if sys.diag2:
        V = np.diag(np.diag(V))
    out = []
    m, n = sys.m, sys.n
    for k in range(1, m + 1):
        hs, ms = _vanish(X, k)
        hw, mw = _vanish(W, m - k + 1)
        out.append(MinorCondition(1, k, hs and hw, ms, mw))
    for l in range(1, n + 1):
        hs, ms = _vanish(Y, n - l + 1)
        hv, mv = _vanish(V, l)
        out.append(MinorCondition(2, l, hs and hv, ms, mv))
    return out


@dataclass
class ProbeReport:
    samples: int
    condition_I_violations: int
    witnesses: list = field(default_factory=list)
    strict_checked: int = 0
    strict_violations: list = field(default_factory=list)

    @property
    def condition_I_holds(self) -> bool:
        return self.condition_I_violations == 0


def _random_strategy(rng, d: int, rank: int, diagonal: bool) -> NDArray:
    weights = rng.dirichlet(np.ones(rank))
    if diagonal:
        S = np.zeros((d, d))
        idx = rng.choice(d, size=rank, replace=False)
        S[idx, idx] = weights
        return S
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    U = Q[:, :rank]
    return (U * weights) @ U.T


def _slack_rank(Phi: NDArray, diagonal: bool) -> int:
    if diagonal:
        d = np.diag(Phi)
        slack = d.max() - d
        scale = max(1.0, float(np.max(np.abs(d))))
        return int(np.sum(np.abs(slack) > 1e-8 * scale))
    vals = np.linalg.eigvalsh(Phi)
    return numerical_rank(vals[-1] * np.eye(len(vals)) - Phi)


def nondegeneracy_probe(
    game: SdGame, samples: int = 10_000, seed: int = 0, equilibria: Sequence = ()
) -> ProbeReport:
    """Falsification probe for the non-degeneracy conditions.

    Condition I is checked on random strategies of every rank: against a
    rank-``k`` strategy the opponent's best-response slack must have rank at
    least ``dim - k``. Supplied equilibria ``(X, Y)`` are checked for strict
    complementarity. A clean report is evidence, not proof.
    """
    rng = np.random.default_rng(seed)
    m, n = game.m, game.n
    profiles = [(1, k) for k in range(1, m + 1)] + [(2, k) for k in range(1, n + 1)]
    violations = 0
    witnesses = []
    for s in range(samples):
        player, rank = profiles[s % len(profiles)]
        if player == 1:
            X = _random_strategy(rng, m, rank, game.mask1 is Mask.DIAGONAL)
            Phi = np.einsum("ij,ijkl->kl", X, game.B.entries)
            r = _slack_rank(Phi, game.mask2 is Mask.DIAGONAL)
            need = n - rank
        else:
            Y = _random_strategy(rng, n, rank, game.mask2 is Mask.DIAGONAL)
            Phi = np.einsum("ijkl,kl->ij", game.A.entries, Y)
            r = _slack_rank(Phi, game.mask1 is Mask.DIAGONAL)
            need = m - rank
        if r < need:
            violations += 1
            if len(witnesses) < 5:
                witnesses.append(
                    {"player": player, "rank": rank, "slack_rank": r,
                     "strategy": (X if player == 1 else Y).tolist()}
                )
    report = ProbeReport(samples, violations, witnesses)
    for X, Y in equilibria:
        X, Y = np.asarray(X, float), np.asarray(Y, float)
        w = best_response_1(game, Y).value
        v = best_response_2(game, X).value
        W = w * np.eye(m) - np.einsum("ijkl,kl->ij", game.A.entries, Y)
        V = v * np.eye(n) - np.einsum("ij,ijkl->kl", X, game.B.entries)
        if game.mask1 is Mask.DIAGONAL:
            W = np.diag(np.diag(W))
        if game.mask2 is Mask.DIAGONAL:
            V = np.diag(np.diag(V))
        report.strict_checked += 1
        if not (strict_complementarity(X, W, m) and strict_complementarity(Y, V, n)):
            report.strict_violations.append({"X": X.tolist(), "Y": Y.tolist()})
    return report
