"""Whole-volume branch extraction.

Seeds are taken strongest-first (largest scale, then largest |response|).
From each seed a branch is tracked along the local tube axis and then
along its negation; the two halves are joined, re-filtered as a single
sequence and smoothed, and finally scored by their mean posterior trace.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Literal, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .blobs import Measurement, blob_order_key, principal_axis
from .errors import NumericalError
from .smoother import (
    FilterStep,
    GateParams,
    SmoothedStep,
    _cho,
    gate_arrays,
    innovation_cov,
    predict,
    rts_smooth,
    run_filter,
    update,
)
from .statespace import MIN_RADIUS, GaussianState, ModelMatrices, initial_state, make_models
from .volume import Volume

logger = logging.getLogger(__name__)

FALLBACK_AXIS = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class TrackerConfig:
    mu_c: float = 2.0
    min_branch_length: int = 3
    max_branch_length: int = 500
    covariance_source: Literal["smoothed", "filtered"] = "smoothed"
    max_coast_steps: int = 0
    delta: float = 0.5
    sigma_q: float = 0.3
    sigma_m_pos: float = 2.0
    sigma_m_r: float = 1.0
    p0_scale: float = 1.0
    kappa: float = 3.0
    p_gate: float = 0.99
    rect_gate_use_stddev: bool = False
    renormalize_direction: bool = True
    min_radius: float = MIN_RADIUS

    def __post_init__(self):
        if not self.mu_c > 0:
            raise ValueError("mu_c must be positive")
        if self.min_branch_length < 1:
            raise ValueError("min_branch_length must be >= 1")
        if self.max_branch_length < self.min_branch_length:
            raise ValueError("max_branch_length must be >= min_branch_length")
        if self.covariance_source not in ("smoothed", "filtered"):
            raise ValueError(f"unknown covariance_source {self.covariance_source!r}")
        if self.max_coast_steps < 0:
            raise ValueError("max_coast_steps must be >= 0")
        if not self.p0_scale > 0:
            raise ValueError("p0_scale must be positive")
        # surface model/gate errors at construction time
        self.models()
        self.gate_params()

    def models(self) -> ModelMatrices:
        return make_models(self.delta, self.sigma_q, self.sigma_m_pos, self.sigma_m_r)

    def gate_params(self) -> GateParams:
        return GateParams(self.kappa, self.p_gate, self.rect_gate_use_stddev)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Branch:
    states_filtered: list[FilterStep]
    states_smoothed: list[SmoothedStep]
    seed_index: int
    direction_sign: int = 1
    score_mu: float = float("nan")
    accepted: bool = False

    def __len__(self) -> int:
        return len(self.states_filtered)

    @property
    def measurement_indices(self) -> list[int]:
        return [s.measurement_index for s in self.states_filtered if s.measurement_index is not None]

    def positions(self) -> np.ndarray:
        """Smoothed centre positions, ``(n, 3)``."""
        return np.array([s.state.position for s in self.states_smoothed]).reshape(-1, 3)

    def traces(self, source: str = "smoothed") -> np.ndarray:
        if source == "smoothed":
            return np.array([s.state.trace() for s in self.states_smoothed])
        return np.array([s.posterior.trace() for s in self.states_filtered])


class MeasurementPool:
    """Measurements plus a consumed mask and a spatial index for gating."""

    def __init__(self, measurements: Sequence[Measurement]):
        self.measurements = list(measurements)
        n = len(self.measurements)
        self.Y = np.array([m.vector for m in self.measurements]).reshape(n, 4)
        self.consumed = np.array([m.consumed for m in self.measurements], dtype=bool)
        self._kd = cKDTree(self.Y[:, :3]) if n else None
        self._order = sorted(range(n), key=lambda i: blob_order_key(self.measurements[i]))
        self._cursor = 0

    def __len__(self) -> int:
        return len(self.measurements)

    def consume(self, i: int) -> None:
        self.consumed[i] = True
        self.measurements[i].consumed = True

    def next_seed(self) -> int | None:
        while self._cursor < len(self._order):
            i = self._order[self._cursor]
            if not self.consumed[i]:
                return i
            self._cursor += 1
        return None

    def gate(self, pred: GaussianState, mm: ModelMatrices, gp: GateParams) -> list[int]:
        """Unconsumed pool indices inside both gates, nearest first."""
        if self._kd is None:
            return []
        S = innovation_cov(pred, mm)
        factor = _cho(S)
        z = mm.H @ pred.mean
        diag = np.diag(S)[:3]
        reach = gp.kappa * (np.sqrt(diag) if gp.use_stddev else diag)
        near = self._kd.query_ball_point(z[:3], r=float(reach.max()), p=np.inf)
        if not near:
            return []
        near = np.sort(np.asarray(near, dtype=int))
        near = near[~self.consumed[near]]
        rows, _ = gate_arrays(z, S, self.Y[near], gp, S_factor=factor)
        return near[rows].tolist()


def select_seed(pool: MeasurementPool, vol: Volume | None) -> tuple[int, np.ndarray] | None:
    """Strongest unconsumed measurement and its tube axis, or None."""
    i = pool.next_seed()
    if i is None:
        return None
    axis = FALLBACK_AXIS.copy()
    if vol is not None:
        try:
            axis = principal_axis(vol, pool.measurements[i])
        except (NumericalError, ValueError) as exc:
            logger.debug("seed %d: %s; using +x", i, exc)
    return i, axis


def track_branch(seed: int, axis, pool: MeasurementPool, cfg: TrackerConfig,
                 max_steps: int | None = None, sign: int = 1) -> Branch:
    """Track one direction from ``seed``; consumes every measurement it uses."""
    mm = cfg.models()
    gp = cfg.gate_params()
    max_steps = cfg.max_branch_length if max_steps is None else max_steps
    state = initial_state(pool.measurements[seed], np.asarray(axis, dtype=np.float64), cfg.p0_scale)
    steps = [FilterStep(state, state, seed)]
    coasting = 0
    while len(steps) < max_steps:
        pred = predict(state, mm)
        try:
            cands = pool.gate(pred, mm, gp)
        except NumericalError:
            break
        if not cands:
            coasting += 1
            if coasting > cfg.max_coast_steps:
                break
            steps.append(FilterStep(pred, pred, None))
            state = pred
            continue
        coasting = 0
        idx = cands[0]
        try:
            post = update(pred, pool.Y[idx], mm, cfg.renormalize_direction, cfg.min_radius)
        except NumericalError:
            break
        pool.consume(idx)
        steps.append(FilterStep(pred, post, idx))
        state = post
    while steps[-1].measurement_index is None:
        steps.pop()
    try:
        smoothed = rts_smooth(steps, mm)
    except NumericalError:
        smoothed = [SmoothedStep(s.posterior.copy()) for s in steps]
    return Branch(steps, smoothed, seed, sign)


def join_halves(forward: Branch, backward: Branch, pool: MeasurementPool,
                cfg: TrackerConfig) -> Branch:
    """Re-filter ``reverse(backward) + forward`` as one sequence and smooth it.

    The backward half's far end becomes step 0, started from its measurement
    and pointing back toward the seed.
    """
    mm = cfg.models()
    back = [s.measurement_index for s in backward.states_filtered[1:]][::-1]
    fwd = [s.measurement_index for s in forward.states_filtered]
    sequence = back + fwd
    first = sequence[0]
    if back:
        direction = -backward.states_filtered[-1].posterior.direction
        direction = direction / np.linalg.norm(direction)
    else:
        direction = forward.states_filtered[0].posterior.direction.copy()
    prior = initial_state(pool.measurements[first], direction, cfg.p0_scale)
    ys = [None if i is None else pool.Y[i] for i in sequence[1:]]
    try:
        steps = run_filter(prior, ys, mm, cfg.renormalize_direction, cfg.min_radius)
        for step, i in zip(steps, sequence):
            step.measurement_index = i
        smoothed = rts_smooth(steps, mm)
    except NumericalError:
        # keep the forward half alone when the joined pass breaks down
        return forward
    return Branch(steps, smoothed, forward.seed_index, 1)


def branch_score(b: Branch, cfg: TrackerConfig) -> float:
    """Mean total variance (covariance trace) over the branch."""
    if len(b) == 0:
        raise ValueError("empty branch")
    return float(np.mean(b.traces(cfg.covariance_source)))


def validate(branches: Sequence[Branch], cfg: TrackerConfig) -> tuple[list[Branch], list[Branch]]:
    accepted, rejected = [], []
    for b in branches:
        b.accepted = bool(b.score_mu <= cfg.mu_c and len(b) >= cfg.min_branch_length)
        (accepted if b.accepted else rejected).append(b)
    return accepted, rejected


def track_all(measurements: Sequence[Measurement] | MeasurementPool, vol: Volume | None,
              cfg: TrackerConfig | None = None) -> list[Branch]:
    """Track from every seed until the pool is exhausted; scores and validates."""
    cfg = cfg or TrackerConfig()
    pool = measurements if isinstance(measurements, MeasurementPool) else MeasurementPool(measurements)
    branches = []
    while True:
        picked = select_seed(pool, vol)
        if picked is None:
            break
        seed, axis = picked
        pool.consume(seed)
        fwd = track_branch(seed, axis, pool, cfg, sign=1)
        budget = cfg.max_branch_length - len(fwd) + 1
        if budget > 1:
            bwd = track_branch(seed, -axis, pool, cfg, max_steps=budget, sign=-1)
        else:
            bwd = Branch(fwd.states_filtered[:1], fwd.states_smoothed[:1], seed, -1)
        branch = join_halves(fwd, bwd, pool, cfg) if len(bwd) > 1 else fwd
        branch.score_mu = branch_score(branch, cfg)
        branches.append(branch)
    validate(branches, cfg)
    return branches
