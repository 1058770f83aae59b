import itertools
from fractions import Fraction

import numpy as np
import pytest

from conftest import T2, hybrid_branch
from sdlh.bimatrix import BimatrixGame, embed_diagonal, labels_of
from sdlh.errors import FitUnreliable
from sdlh.events import (
    EventKind,
    detect_crossing,
    minor_scan,
    nondegeneracy_probe,
    puiseux_fit,
)
from sdlh.fixtures import hybrid_game, twisted_coordination
from sdlh.game import strict_complementarity, verify_nash
from sdlh.tracer import PathPoint, PerturbedGame, System, make_active, monitored_values, pair_spectra

E11 = np.diag([1.0, 0.0])
E22 = np.diag([0.0, 1.0])


def segments_after_switch(trace):
    """Accepted points following each paired crossing, up to the next event."""
    out, current = [], None
    for rec in trace.records:
        if isinstance(rec, PathPoint):
            if current is not None:
                current[1].append(rec)
        else:
            current = (rec, []) if rec.kind is EventKind.PAIRED_CROSSING else None
            if current is not None:
                out.append(current)
    return out


# ---------------------------------------------------------------------------
# Puiseux fitting


def samples(fn, sign=1.0, count=12):
    return [(sign * s, fn(sign * s)) for s in np.logspace(-4, -1, count)]


def test_puiseux_square():
    exponent, coeff = puiseux_fit(samples(lambda s: s * s))
    assert exponent == 2 and coeff == pytest.approx(1.0)


def test_puiseux_three_halves():
    exponent, coeff = puiseux_fit(samples(lambda s: 3 * s**1.5), 4)
    assert exponent == Fraction(3, 2) and coeff == pytest.approx(3.0, rel=0.02)


def test_puiseux_negative_side_linear():
    exponent, coeff = puiseux_fit(samples(lambda s: -25 / 4 * s, sign=-1.0))
    assert exponent == 1 and coeff == pytest.approx(-25 / 4)


@pytest.mark.parametrize("p, q", list(itertools.product(range(1, 5), repeat=2)))
def test_puiseux_recovers_rational_exponents(p, q):
    exponent, _ = puiseux_fit(samples(lambda s: 2 * s ** (p / q)), 4)
    assert exponent == Fraction(p, q)


def test_puiseux_rejects_bad_samples():
    with pytest.raises(FitUnreliable, match="8 samples"):
        puiseux_fit(samples(lambda s: s, count=7))
    mixed = samples(lambda s: s)[:6] + samples(lambda s: s, sign=-1.0)[:6]
    with pytest.raises(FitUnreliable, match="one side"):
        puiseux_fit(mixed)
    short = [(s, s) for s in np.linspace(0.01, 0.05, 10)]
    with pytest.raises(FitUnreliable, match="decades"):
        puiseux_fit(short)
    rng = np.random.default_rng(0)
    noisy = [(s, s * np.exp(rng.normal(0, 0.5))) for s, _ in samples(lambda s: s)]
    with pytest.raises(FitUnreliable, match="residual"):
        puiseux_fit(noisy)


def test_hybrid_first_event_puiseux(hybrid_trace):
    fit = hybrid_trace.events[0].puiseux
    assert fit["exponent"] == "1"
    assert fit["coefficient"] == pytest.approx(-25 / 4, rel=0.05)


# ---------------------------------------------------------------------------
# minors


def test_minor_scan_identity_strategy_never_vanishes():
    pg = PerturbedGame(twisted_coordination(0.6), 1)
    point = PathPoint(np.eye(2) / 2, np.eye(2) / 2, 1.0, 1.0, 0.0)
    for cond in minor_scan(point, pg):
        if cond.player == 1:
            assert cond.strategy_minor > 1e-3 and not cond.holds


def test_minor_scan_strict_points_have_no_level():
    pg = PerturbedGame(hybrid_game(), 1)
    for s in (-0.02, -0.05, -0.1):
        X, Y, w, v = hybrid_branch(s)
        assert not any(c.holds for c in minor_scan(PathPoint(X, Y, w, v, 1 + s), pg))


# ---------------------------------------------------------------------------
# detection and event invariants


def test_detect_crossing_none_on_smooth_step(hybrid_trace):
    pg = PerturbedGame(hybrid_game(), 1)
    p0, p1 = hybrid_trace.points[1:3]
    assert p0.t > 1.5 and detect_crossing(p0, p1, pg) is None


def test_detect_crossing_brackets_first_event(hybrid_trace):
    pg = PerturbedGame(hybrid_game(), 1)
    before = [p for p in hybrid_trace.points if p.t > 1.0][-1]
    X, Y, w, v = hybrid_branch(-0.01)
    after = PathPoint(X, Y, w, v, 0.99)
    bracket = detect_crossing(before, after, pg)
    assert bracket is not None and (bracket.kind, bracket.player) == ("pair", 1)


def test_hybrid_event_times(hybrid_trace):
    kinds = [e.kind for e in hybrid_trace.events]
    assert kinds == [EventKind.PAIRED_CROSSING, EventKind.PAIRED_CROSSING, EventKind.HOMOTOPY_END]
    assert hybrid_trace.events[0].t_star == pytest.approx(1.0, abs=1e-9)
    assert hybrid_trace.events[1].t_star == pytest.approx(T2, abs=1e-8)


def test_hybrid_first_event_zero_slack(hybrid_trace):
    event = hybrid_trace.events[0]
    sys = System(hybrid_game(), 1)
    W, _ = sys.slacks(sys.pack(event.point))
    assert np.max(np.abs(np.diag(W))) <= 1e-8
    level2 = [c for c in event.minors if (c.player, c.level) == (1, 2)][0]
    assert level2.holds


def test_hybrid_second_switch_pins_strategy(hybrid_trace):
    after = [p for p in hybrid_trace.points if p.t < T2]
    assert after and all(np.allclose(p.X, E22, atol=1e-9) for p in after)


def check_event_invariants(trace, game):
    sys = System(game, trace.k)
    for event in trace.events:
        if event.kind is not EventKind.PAIRED_CROSSING:
            continue
        z = sys.pack(event.point)
        p1, p2 = pair_spectra(sys, z, event.point.active)
        spec = p1 if event.player == 1 else p2
        i = event.eigen_index
        scale = max(1.0, float(np.max(np.abs(spec.slack))), float(np.max(np.abs(spec.strategy))))
        assert abs(spec.strategy[i]) <= 1e-8 * scale and abs(spec.slack[i]) <= 1e-8 * scale
        W, V = sys.slacks(z)
        X, Y, *_ = sys.split(z)
        S, T, d = (X, W, sys.m) if event.player == 1 else (Y, V, sys.n)
        if (sys.diag1 if event.player == 1 else sys.diag2):
            S, T = np.diag(np.diag(S)), np.diag(np.diag(T))
        assert not strict_complementarity(S, T, d)
        assert any(c.holds for c in event.minors if c.player == event.player)


def check_post_switch(trace, game):
    sys = System(game, trace.k)
    for event, points in segments_after_switch(trace):
        for p in points[:10]:
            z = sys.pack(p)
            p1, p2 = pair_spectra(sys, z, p.active)
            spec = p1 if event.player == 1 else p2
            i = event.flipped_index
            released = [val for pl, j, val, _ in monitored_values(sys, z, p.active)
                        if (pl, j) == (event.player, i)][0]
            pinned = spec.strategy[i] + spec.slack[i] - released
            assert released > 0 and abs(pinned) <= 1e-8


def test_hybrid_event_invariants(hybrid_trace):
    check_event_invariants(hybrid_trace, hybrid_game())
    check_post_switch(hybrid_trace, hybrid_game())


def test_bimatrix_event_invariants(bimatrix_runs):
    for game, k, _, trace in bimatrix_runs[:20]:
        sd = embed_diagonal(game)
        check_event_invariants(trace, sd)
        check_post_switch(trace, sd)


def test_bimatrix_events_are_degenerate_equilibria(bimatrix_runs):
    for game, k, _, trace in bimatrix_runs[:20]:
        for event in trace.events:
            if event.kind is not EventKind.PAIRED_CROSSING:
                continue
            t = event.t_star
            A = np.array(game.A, float)
            A[k - 1, :] += t
            shifted = BimatrixGame(A, game.B)
            x, y = np.diag(event.point.X), np.diag(event.point.Y)
            cert = verify_nash(PerturbedGame(embed_diagonal(game), k, t).game, np.diag(x), np.diag(y))
            assert cert.valid
            # one label too many: a degenerate vertex of the perturbed game
            lx, ly = labels_of(x, shifted, 1), labels_of(y, shifted, 2)
            assert len(lx) + len(ly) > game.m + game.n


def test_active_set_flags_follow_start():
    game = hybrid_game()
    sys = System(game, 1)
    X, Y, w, v = hybrid_branch(-0.05)
    active = make_active(sys, sys.pack(PathPoint(X, Y, w, v, 0.95)))
    assert len(active.flags1) == 2 and len(active.flags2) == 2


# ---------------------------------------------------------------------------
# non-degeneracy probe


def test_probe_five_equilibrium_game_clean():
    S = [E11, E22, np.eye(2) / 2, np.full((2, 2), 0.5), np.array([[0.5, -0.5], [-0.5, 0.5]])]
    report = nondegeneracy_probe(twisted_coordination(0.6), 10_000, 0, [(M, M) for M in S])
    assert report.condition_I_holds and report.strict_checked == 5 and not report.strict_violations


def test_probe_identity_operator_condition_one_holds():
    report = nondegeneracy_probe(twisted_coordination(0.5), 10_000, 0)
    assert report.condition_I_holds and report.samples == 10_000


def test_probe_flags_pure_non_strict_equilibrium():
    report = nondegeneracy_probe(twisted_coordination(1.0, corner=0.0), 200, 0, [(E22, E22)])
    assert len(report.strict_violations) == 1


def test_probe_is_seeded():
    game = twisted_coordination(0.7)
    a = nondegeneracy_probe(game, 500, 3)
    b = nondegeneracy_probe(game, 500, 3)
    assert (a.condition_I_violations, a.witnesses) == (b.condition_I_violations, b.witnesses)
