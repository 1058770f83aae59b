"""JSON game files, strategy files, result documents and trace export."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .bimatrix import BimatrixGame
from .errors import InvalidInput
from .game import Mask, NashCertificate, PayoffTensor, SdGame

FORMAT_VERSION = 1


def _array(value: Any, depth: int, where: str) -> np.ndarray:
    """Nested list of numbers with exactly ``depth`` levels and rectangular shape."""

    def walk(v, level, path):
        if level == depth:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InvalidInput(f"{path}: expected a number, got {type(v).__name__}")
            if not math.isfinite(v):
                raise InvalidInput(f"{path}: non-finite value {v}")
            return
        if not isinstance(v, list) or not v:
            raise InvalidInput(f"{path}: expected a non-empty list")
        for i, item in enumerate(v):
            walk(item, level + 1, f"{path}[{i}]")

    walk(value, 0, where)
    try:
        arr = np.array(value, dtype=float)
    except ValueError as exc:
        raise InvalidInput(f"{where}: ragged nested lists ({exc})") from None
    if arr.ndim != depth:
        raise InvalidInput(f"{where}: ragged nested lists")
    return arr


def _load_json(path: Union[str, Path]) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidInput(f"{path}: cannot read ({exc.strerror})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise InvalidInput(f"{path}: top level must be an object")
    return doc


def game_from_dict(doc: dict, where: str = "game") -> Union[SdGame, BimatrixGame]:
    kind = doc.get("type", "semidefinite")
    for key in ("A", "B"):
        if key not in doc:
            raise InvalidInput(f"{where}: missing field '{key}'")
    if kind == "bimatrix":
        A = _array(doc["A"], 2, f"{where}.A")
        B = _array(doc["B"], 2, f"{where}.B")
        return BimatrixGame(A, B)
    if kind != "semidefinite":
        raise InvalidInput(f"{where}.type: unknown game type '{kind}'")
    A = _array(doc["A"], 4, f"{where}.A")
    B = _array(doc["B"], 4, f"{where}.B")
    for key, T in (("A", A), ("B", B)):
        if "m" in doc and T.shape[0] != doc["m"]:
            raise InvalidInput(f"{where}.{key}: first dimension {T.shape[0]} differs from m = {doc['m']}")
        if "n" in doc and T.shape[2] != doc["n"]:
            raise InvalidInput(f"{where}.{key}: third dimension {T.shape[2]} differs from n = {doc['n']}")
    masks = []
    for key in ("mask1", "mask2"):
        try:
            masks.append(Mask(doc.get(key, "full")))
        except ValueError:
            raise InvalidInput(f"{where}.{key}: expected 'full' or 'diagonal'") from None
    try:
        return SdGame(PayoffTensor(A), PayoffTensor(B), *masks)
    except InvalidInput as exc:
        raise InvalidInput(f"{where}: {exc}") from None


def game_to_dict(game: Union[SdGame, BimatrixGame]) -> dict:
    if isinstance(game, BimatrixGame):
        return {"type": "bimatrix", "A": game.A.tolist(), "B": game.B.tolist()}
    return {
        "type": "semidefinite",
        "m": game.m,
        "n": game.n,
        "mask1": game.mask1.value,
        "mask2": game.mask2.value,
        "A": game.A.entries.tolist(),
        "B": game.B.entries.tolist(),
    }


def read_game(path) -> Union[SdGame, BimatrixGame]:
    return game_from_dict(_load_json(path), str(path))


def dumps(doc: Any) -> str:
    # repr-based float output round-trips doubles exactly
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=True) + "\n"


def write_game(game, path) -> None:
    Path(path).write_text(dumps(game_to_dict(game)))


def read_strategies(path) -> tuple[np.ndarray, np.ndarray]:
    doc = _load_json(path)
    for key in ("X", "Y"):
        if key not in doc:
            raise InvalidInput(f"{path}: missing field '{key}'")
    return _array(doc["X"], 2, f"{path}.X"), _array(doc["Y"], 2, f"{path}.Y")


def game_digest(game: Union[SdGame, BimatrixGame]) -> dict:
    body = json.dumps(game_to_dict(game), sort_keys=True, separators=(",", ":"))
    digest = {"sha256": hashlib.sha256(body.encode()).hexdigest()}
    if isinstance(game, BimatrixGame):
        digest.update(type="bimatrix", m=game.m, n=game.n)
    else:
        digest.update(
            type="semidefinite", m=game.m, n=game.n, mask1=game.mask1.value, mask2=game.mask2.value
        )
    return digest


def certificate_to_dict(cert: NashCertificate) -> dict:
    return {
        "X": cert.X.tolist(),
        "Y": cert.Y.tolist(),
        "w": cert.w,
        "v": cert.v,
        "min_eig_W": cert.min_eig_W,
        "min_eig_V": cert.min_eig_V,
        "gap_X": cert.gap_X,
        "gap_Y": cert.gap_Y,
        "strict": cert.strict,
        "tol": cert.tol,
        "valid": cert.valid,
    }


def event_to_dict(event) -> dict:
    return {
        "kind": event.kind.value,
        "t_star": event.t_star,
        "player": event.player,
        "eigen_index": event.eigen_index,
        "flipped_index": event.flipped_index,
        "puiseux": event.puiseux,
        "minors": [
            {"player": c.player, "level": c.level, "holds": c.holds} for c in event.minors
        ],
    }


def point_to_dict(point) -> dict:
    doc = {
        "t": point.t,
        "w": point.w,
        "v": point.v,
        "X": point.X.tolist(),
        "Y": point.Y.tolist(),
        "residual": point.residual_norm,
    }
    if point.active is not None:
        doc["active"] = list(point.active.codes())
    return doc


@dataclass
class ResultDocument:
    game: dict
    k: int
    outcome: str
    certificate: Optional[dict] = None
    events: list = field(default_factory=list)
    steps: int = 0
    wall_time: float = 0.0
    message: str = ""
    diagnostics: list = field(default_factory=list)

    def to_dict(self, include_time: bool = True) -> dict:
        doc = {
            "format": FORMAT_VERSION,
            "game": self.game,
            "k": self.k,
            "outcome": self.outcome,
            "certificate": self.certificate,
            "events": self.events,
            "steps": self.steps,
            "message": self.message,
            "diagnostics": self.diagnostics,
        }
        if include_time:
            doc["wall_time"] = self.wall_time
        return doc


def write_trace(trace, path) -> None:
    """One JSON record per line: accepted points and events in path order."""
    from .tracer import PathPoint

    with open(path, "w") as fh:
        for rec in trace.records:
            if isinstance(rec, PathPoint):
                doc = {"record": "point", **point_to_dict(rec)}
            else:
                doc = {"record": "event", **event_to_dict(rec), "point": point_to_dict(rec.point)}
            fh.write(json.dumps(doc, sort_keys=True) + "\n")
