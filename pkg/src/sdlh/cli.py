"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 solver failure, 3 verification negative.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .bimatrix import BimatrixGame, brute_force_2x2_sdg, embed_diagonal, lemke_howson
from .errors import InvalidInput, PathFailure, SdlhError
from .events import nondegeneracy_probe
from .game import Mask, PayoffTensor, SdGame, VERIFY_TOL, check_density, verify_nash
from .tracer import TraceOptions, trace_path

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2
EXIT_NEGATIVE = 3

ORACLE_TOL = 1e-6
CLUSTER_TOL = 1e-3

log = logging.getLogger("sdlh")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidInput(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    command: str
    input: Optional[str] = None
    strategies: Optional[str] = None
    k: int = 1
    tol: float = VERIFY_TOL
    max_steps: int = 100_000
    tmax_mult: float = 4.0
    seed: int = 0
    out: Optional[str] = None
    trace_out: Optional[str] = None
    m: int = 2
    n: int = 2
    bimatrix: bool = False
    samples: int = 10_000
    grid: float = 0.05

    def validate(self) -> None:
        if self.tol <= 0:
            raise InvalidInput(f"--tol must be positive, got {self.tol}")
        if self.max_steps <= 0:
            raise InvalidInput(f"--max-steps must be positive, got {self.max_steps}")
        if self.tmax_mult <= 1:
            raise InvalidInput(f"--tmax-mult must exceed 1, got {self.tmax_mult}")
        if self.k < 1:
            raise InvalidInput(f"--k must be at least 1, got {self.k}")


def _emit(doc: dict, out: Optional[str]) -> None:
    text = io.dumps(doc)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _sd_game(game) -> SdGame:
    return embed_diagonal(game) if isinstance(game, BimatrixGame) else game


def _check_k(cfg: RunConfig, m: int) -> None:
    if not 1 <= cfg.k <= m:
        raise InvalidInput(f"--k must lie in [1, {m}], got {cfg.k}")


def cmd_solve(cfg: RunConfig) -> tuple[int, io.ResultDocument]:
    raw = io.read_game(cfg.input)
    game = _sd_game(raw)
    _check_k(cfg, game.m)
    opts = TraceOptions(max_steps=cfg.max_steps, tmax_mult=cfg.tmax_mult)
    start = time.perf_counter()
    doc = io.ResultDocument(game=io.game_digest(raw), k=cfg.k, outcome="running")
    trace = None
    try:
        trace = trace_path(game, cfg.k, opts)
    except PathFailure as exc:
        trace = exc.trace
        doc.outcome, doc.message = exc.kind, str(exc)
    except SdlhError as exc:
        doc.outcome, doc.message = type(exc).__name__, str(exc)
    doc.wall_time = time.perf_counter() - start
    if trace is not None:
        doc.events = [io.event_to_dict(e) for e in trace.events]
        doc.steps = trace.steps
        doc.diagnostics = list(trace.diagnostics)
        if cfg.trace_out:
            io.write_trace(trace, cfg.trace_out)
    code = EXIT_SOLVER
    if doc.outcome == "running":
        cert = verify_nash(game, trace.certificate.X, trace.certificate.Y, tol=cfg.tol)
        doc.certificate = io.certificate_to_dict(cert)
        if cert.valid:
            doc.outcome, code = "Equilibrium", EXIT_OK
        else:
            doc.outcome = "NotEquilibrium"
            doc.message = f"end point fails verification (residuals {cert.residuals})"
    return code, doc


def cmd_verify(cfg: RunConfig):
    game = _sd_game(io.read_game(cfg.input))
    X, Y = io.read_strategies(cfg.strategies)
    if X.shape != (game.m, game.m) or Y.shape != (game.n, game.n):
        raise InvalidInput(
            f"strategies have shapes {X.shape}, {Y.shape}; game needs ({game.m}, {game.m}), ({game.n}, {game.n})"
        )
    X = check_density(X, game.mask1, name="X")
    Y = check_density(Y, game.mask2, name="Y")
    cert = verify_nash(game, X, Y, tol=cfg.tol)
    return (EXIT_OK if cert.valid else EXIT_NEGATIVE), cert


def cmd_oracle(cfg: RunConfig) -> tuple[int, dict]:
    raw = io.read_game(cfg.input)
    if isinstance(raw, BimatrixGame):
        _check_k(cfg, raw.m)
        report = {"mode": "bimatrix", "k": cfg.k}
        try:
            lh = lemke_howson(raw, cfg.k)
            trace = trace_path(embed_diagonal(raw), cfg.k, TraceOptions(cfg.max_steps, tmax_mult=cfg.tmax_mult))
        except SdlhError as exc:
            report.update(error=type(exc).__name__, message=str(exc))
            return EXIT_SOLVER, report
        end = trace.certificate
        dist = max(
            float(np.max(np.abs(np.diag(end.X) - lh.x))), float(np.max(np.abs(np.diag(end.Y) - lh.y)))
        )
        report.update(
            lemke_howson={"x": lh.x.tolist(), "y": lh.y.tolist(), "pivots": lh.pivots},
            traced={"x": np.diag(end.X).tolist(), "y": np.diag(end.Y).tolist(), "events": len(trace.events)},
            distance=dist,
            agree=bool(dist <= ORACLE_TOL),
        )
        return (EXIT_OK if dist <= ORACLE_TOL else EXIT_NEGATIVE), report
    game = raw
    if game.m != 2 or game.n != 2 or game.mask1 is not Mask.FULL or game.mask2 is not Mask.FULL:
        raise InvalidInput("oracle needs a bimatrix game or a 2x2 semidefinite game with full masks")
    _check_k(cfg, game.m)
    report = {"mode": "brute_force", "k": cfg.k, "grid": cfg.grid}
    bf = brute_force_2x2_sdg(game, cfg.grid)
    report.update(
        clusters=[{"X": X.tolist(), "Y": Y.tolist()} for X, Y in bf.equilibria],
        degenerate=bf.degenerate,
    )
    try:
        trace = trace_path(game, cfg.k, TraceOptions(cfg.max_steps, tmax_mult=cfg.tmax_mult))
    except SdlhError as exc:
        report.update(error=type(exc).__name__, message=str(exc))
        return EXIT_SOLVER, report
    end = trace.certificate
    dist = min(
        (max(np.linalg.norm(end.X - X), np.linalg.norm(end.Y - Y)) for X, Y in bf.equilibria),
        default=float("inf"),
    )
    report.update(traced={"X": end.X.tolist(), "Y": end.Y.tolist()}, distance=float(dist), agree=bool(dist <= CLUSTER_TOL))
    if bf.degenerate:
        return EXIT_SOLVER, report
    return (EXIT_OK if dist <= CLUSTER_TOL else EXIT_NEGATIVE), report


def generate(m: int, n: int, seed: int, bimatrix: bool = False):
    """Random game with entries uniform in ``[-1, 1]``; symmetrized tensors unless ``bimatrix``."""
    if not (1 <= m <= 6 and 1 <= n <= 6):
        raise InvalidInput(f"dimensions must lie in [1, 6], got m = {m}, n = {n}")
    rng = np.random.default_rng(seed)
    if bimatrix:
        return BimatrixGame(rng.uniform(-1, 1, (m, n)), rng.uniform(-1, 1, (m, n)))
    A = PayoffTensor.symmetrized(rng.uniform(-1, 1, (m, m, n, n)))
    B = PayoffTensor.symmetrized(rng.uniform(-1, 1, (m, m, n, n)))
    return SdGame(A, B)


def cmd_gen(cfg: RunConfig) -> tuple[int, dict]:
    game = generate(cfg.m, cfg.n, cfg.seed, cfg.bimatrix)
    doc = io.game_to_dict(game)
    doc["seed"] = cfg.seed
    return EXIT_OK, doc


def cmd_probe(cfg: RunConfig) -> tuple[int, dict]:
    game = _sd_game(io.read_game(cfg.input))
    equilibria = []
    if cfg.strategies:
        X, Y = io.read_strategies(cfg.strategies)
        equilibria.append((check_density(X, game.mask1, name="X"), check_density(Y, game.mask2, name="Y")))
    if cfg.samples <= 0:
        raise InvalidInput(f"--samples must be positive, got {cfg.samples}")
    rep = nondegeneracy_probe(game, cfg.samples, cfg.seed, equilibria)
    doc = {
        "seed": cfg.seed,
        "samples": rep.samples,
        "condition_I_holds": rep.condition_I_holds,
        "condition_I_violations": rep.condition_I_violations,
        "witnesses": rep.witnesses,
        "strict_checked": rep.strict_checked,
        "strict_violations": rep.strict_violations,
    }
    ok = rep.condition_I_holds and not rep.strict_violations
    return (EXIT_OK if ok else EXIT_NEGATIVE), doc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdlh", description="Lemke-Howson path tracing for semidefinite games")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, game=True):
        if game:
            sp.add_argument("input", help="game file (JSON)")
        sp.add_argument("--out", help="write the JSON report here instead of stdout")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--tol", type=float, default=VERIFY_TOL)
        sp.add_argument("-v", "--verbose", action="store_true")

    def tracing(sp):
        sp.add_argument("--k", type=int, default=1, help="diagonal strategy receiving the bonus")
        sp.add_argument("--max-steps", type=int, default=100_000)
        sp.add_argument("--tmax-mult", type=float, default=4.0)

    sp = sub.add_parser("solve", help="trace the homotopy path to an equilibrium")
    common(sp)
    tracing(sp)
    sp.add_argument("--trace-out", help="write path points and events as JSON lines")

    sp = sub.add_parser("verify", help="check a strategy pair against the equilibrium conditions")
    common(sp)
    sp.add_argument("strategies", help="JSON file with fields X and Y")

    sp = sub.add_parser("oracle", help="compare the tracer with Lemke-Howson or brute force")
    common(sp)
    tracing(sp)
    sp.add_argument("--grid", type=float, default=0.05)

    sp = sub.add_parser("gen", help="write a random game")
    common(sp, game=False)
    sp.add_argument("--m", type=int, default=2)
    sp.add_argument("--n", type=int, default=2)
    sp.add_argument("--bimatrix", action="store_true", help="emit a random bimatrix game instead")

    sp = sub.add_parser("probe", help="sample the non-degeneracy conditions")
    common(sp)
    sp.add_argument("--samples", type=int, default=10_000)
    sp.add_argument("--strategies", help="equilibrium to check for strict complementarity")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    fields = {k: v for k, v in vars(ns).items() if k in RunConfig.__dataclass_fields__}
    cfg = RunConfig(**fields)
    try:
        cfg.validate()
        if cfg.command == "solve":
            code, doc = cmd_solve(cfg)
            _emit(doc.to_dict(), cfg.out)
            if code != EXIT_OK:
                print(f"{doc.outcome}: {doc.message}", file=sys.stderr)
                for line in doc.diagnostics:
                    print(f"  {line}", file=sys.stderr)
            return code
        if cfg.command == "verify":
            code, cert = cmd_verify(cfg)
            _emit(io.certificate_to_dict(cert), cfg.out)
            return code
        handler = {"oracle": cmd_oracle, "gen": cmd_gen, "probe": cmd_probe}[cfg.command]
        code, doc = handler(cfg)
        _emit(doc, cfg.out)
        return code
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SdlhError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        log.debug("numerical failure", exc_info=True)
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
