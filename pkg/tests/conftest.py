import math

import numpy as np
import pytest

from sdlh.bimatrix import BimatrixGame, embed_diagonal, lemke_howson
from sdlh.errors import DegenerateGame
from sdlh.fixtures import hybrid_game
from sdlh.tracer import trace_path

SQRT26 = math.sqrt(26.0)
T2 = (129.0 - 4.0 * SQRT26) / 125.0
FINAL_Y = np.array(
    [[0.5 + 5 * SQRT26 / 52, SQRT26 / 52], [SQRT26 / 52, 0.5 - 5 * SQRT26 / 52]]
)


def hybrid_branch(s: float):
    """Closed-form middle segment of the hybrid fixture, ``s = t - 1``."""
    r = math.sqrt(10 * s + 4)
    X = np.diag([(20 * s + 8 + 25 * s * r) / (4 * (5 * s + 2)), -25 * s / (2 * r)])
    y12 = -5 * s / (2 * (5 * s + 4))
    Y = np.array(
        [
            [5 * (s / 2 + 0.4 + r / 5) / (5 * s + 4), y12],
            [y12, 5 * (s / 2 + 0.4 - r / 5) / (5 * s + 4)],
        ]
    )
    v = (60 * s + 24 + math.sqrt(250 * s**3 + 500 * s**2 + 320 * s + 64)) / (8 * (5 * s + 2))
    w = (9 * s + 8) / (5 * s + 4)
    return X, Y, w, v


def random_bimatrix(seed: int, dims=(2, 3)):
    """Seeded random bimatrix game that Lemke-Howson pivots without ties."""
    rng = np.random.default_rng(seed)
    while True:
        m, n = (int(d) for d in rng.choice(dims, size=2))
        game = BimatrixGame(rng.uniform(-1, 1, (m, n)), rng.uniform(-1, 1, (m, n)))
        k = 1 + seed % m
        try:
            lemke_howson(game, k)
        except DegenerateGame:
            continue
        return game, k


@pytest.fixture(scope="session")
def hybrid_trace():
    return trace_path(hybrid_game(), 1)


@pytest.fixture(scope="session")
def bimatrix_runs():
    """50 seeded games: (game, k, Lemke-Howson result, trace of the diagonal embedding)."""
    runs = []
    for seed in range(50):
        game, k = random_bimatrix(seed)
        runs.append((game, k, lemke_howson(game, k), trace_path(embed_diagonal(game), k)))
    return runs


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion

_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if not item.nodeid.split("::")[0].endswith("test_acceptance.py"):
        return
    doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
    if report.when == "call" or (report.when == "setup" and report.failed):
        _ACCEPTANCE[doc] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for doc, status in sorted(_ACCEPTANCE.items(), key=lambda kv: int(kv[0].split()[0])):
        number, _, text = doc.partition(" ")
        terminalreporter.write_line(f"criterion {number}: {status}  {text}")
