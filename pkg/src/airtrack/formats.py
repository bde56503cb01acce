"""JSON documents exchanged between CLI stages.

All floats are written with 9 significant digits and keys in a fixed
order, so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .blobs import Measurement, measurements_from_json, measurements_to_json
from .errors import VolumeFormatError


def g9(x: float) -> float:
    return float(f"{float(x):.9g}")


def _round(obj):
    if isinstance(obj, (float, np.floating)):
        return g9(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_round(v) for v in obj]
    return obj


def dumps(doc) -> str:
    return json.dumps(_round(doc), indent=1) + "\n"


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(doc))


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"{os.fspath(path)}: invalid JSON ({exc})") from None


@dataclass
class StateRecord:
    pos: list[float]
    r: float
    dir: list[float]
    trace_filtered: float
    trace_smoothed: float


@dataclass
class BranchRecord:
    """A tracked branch as stored on disk (smoothed means only)."""

    seed: int
    accepted: bool
    mu: float
    states: list[StateRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    def positions(self) -> np.ndarray:
        return np.array([s.pos for s in self.states], dtype=np.float64).reshape(-1, 3)


def branch_record(b) -> BranchRecord:
    states = []
    for f, s in zip(b.states_filtered, b.states_smoothed):
        m = s.state.mean
        states.append(StateRecord(
            pos=[g9(v) for v in m[:3]], r=g9(m[3]), dir=[g9(v) for v in m[4:]],
            trace_filtered=g9(f.posterior.trace()), trace_smoothed=g9(s.state.trace()),
        ))
    return BranchRecord(seed=int(b.seed_index), accepted=bool(b.accepted), mu=g9(b.score_mu),
                        states=states)


def branches_to_json(records: Sequence[BranchRecord], config: dict) -> dict:
    return {
        "branches": [
            {
                "seed": r.seed,
                "accepted": r.accepted,
                "mu": r.mu,
                "states": [
                    {"pos": s.pos, "r": s.r, "dir": s.dir,
                     "trace_filtered": s.trace_filtered, "trace_smoothed": s.trace_smoothed}
                    for s in r.states
                ],
            }
            for r in records
        ],
        "config": config,
    }


def branches_from_json(doc: dict) -> tuple[list[BranchRecord], dict]:
    try:
        records = [
            BranchRecord(
                seed=int(b["seed"]), accepted=bool(b["accepted"]), mu=float(b["mu"]),
                states=[
                    StateRecord(pos=[float(v) for v in s["pos"]], r=float(s["r"]),
                                dir=[float(v) for v in s["dir"]],
                                trace_filtered=float(s["trace_filtered"]),
                                trace_smoothed=float(s["trace_smoothed"]))
                    for s in b["states"]
                ],
            )
            for b in doc["branches"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"malformed branch document: {exc!r}") from None
    return records, dict(doc.get("config", {}))


def write_branches(path, records: Sequence[BranchRecord], config: dict) -> None:
    write_json(path, branches_to_json(records, config))


def read_branches(path) -> tuple[list[BranchRecord], dict]:
    return branches_from_json(read_json(path))


def write_measurements(path, ms: Sequence[Measurement]) -> None:
    write_json(path, measurements_to_json(ms))


def read_measurements(path) -> list[Measurement]:
    doc = read_json(path)
    if not isinstance(doc, list):
        raise VolumeFormatError(f"{os.fspath(path)}: expected a JSON array of measurements")
    try:
        return measurements_from_json(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"malformed measurement: {exc!r}") from None
