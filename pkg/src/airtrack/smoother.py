"""Kalman filtering with gating, and Rauch-Tung-Striebel smoothing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import NumericalError
from .statespace import MIN_RADIUS, GaussianState, ModelMatrices, constrain, symmetrize

JITTER = 1e-9


@dataclass
class FilterStep:
    predicted: GaussianState
    posterior: GaussianState
    # None marks a coasted step (prediction only)
    measurement_index: int | None = None


@dataclass
class SmoothedStep:
    state: GaussianState


def gate_threshold(p_gate: float) -> float:
    """Ellipsoidal gate size from gate probability, inverting ``P_g = 1 - exp(-G/2)``."""
    if not 0.0 < p_gate < 1.0:
        raise ValueError(f"gate probability must lie in (0, 1), got {p_gate}")
    return -2.0 * math.log1p(-p_gate)


@dataclass(frozen=True)
class GateParams:
    kappa: float = 3.0
    p_gate: float = 0.99
    use_stddev: bool = False

    def __post_init__(self):
        if self.kappa < 3:
            raise ValueError(f"kappa must be >= 3, got {self.kappa}")
        gate_threshold(self.p_gate)

    @property
    def G(self) -> float:
        return gate_threshold(self.p_gate)


def _cho(m: np.ndarray):
    """Cholesky factor, retrying once with jitter before giving up."""
    try:
        return linalg.cho_factor(m, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        pass
    try:
        return linalg.cho_factor(m + JITTER * np.eye(len(m)), lower=True)
    except (linalg.LinAlgError, ValueError):
        raise NumericalError("covariance is not positive definite") from None


def predict(s: GaussianState, mm: ModelMatrices) -> GaussianState:
    mean = mm.F @ s.mean
    cov = symmetrize(mm.F @ s.cov @ mm.F.T + mm.Q)
    return GaussianState(mean, cov)


def innovation_cov(pred: GaussianState, mm: ModelMatrices) -> np.ndarray:
    return symmetrize(mm.H @ pred.cov @ mm.H.T + mm.R)


def gate_arrays(
    predicted_meas: np.ndarray,
    S: np.ndarray,
    Y: np.ndarray,
    gp: GateParams,
    S_factor=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Rectangular then ellipsoidal gate over rows of ``Y``.

    Returns ``(rows, d2)`` for surviving rows, ordered by increasing
    Mahalanobis distance (ties by row number).
    """
    if len(Y) == 0:
        return np.empty(0, dtype=int), np.empty(0)
    diag = np.diag(S)
    bound = gp.kappa * (np.sqrt(diag) if gp.use_stddev else diag)
    resid = Y - predicted_meas
    rows = np.flatnonzero(np.all(np.abs(resid) <= bound, axis=1))
    if len(rows) == 0:
        return rows, np.empty(0)
    factor = S_factor if S_factor is not None else _cho(S)
    r = resid[rows]
    d2 = np.einsum("ij,ij->i", r, linalg.cho_solve(factor, r.T).T)
    keep = d2 <= gp.G
    rows, d2 = rows[keep], d2[keep]
    order = np.lexsort((rows, d2))
    return rows[order], d2[order]


def gate(pred: GaussianState, pool: Sequence, mm: ModelMatrices, gp: GateParams) -> list[int]:
    """Indices of unconsumed measurements in ``pool`` inside both gates."""
    live = [i for i, m in enumerate(pool) if not m.consumed]
    if not live:
        return []
    Y = np.array([pool[i].vector for i in live])
    S = innovation_cov(pred, mm)
    rows, _ = gate_arrays(mm.H @ pred.mean, S, Y, gp)
    return [live[r] for r in rows]


def update(
    pred: GaussianState,
    y,
    mm: ModelMatrices,
    renormalize: bool = True,
    min_radius: float | None = MIN_RADIUS,
) -> GaussianState:
    """Condition ``pred`` on one measurement (a Measurement or a 4-vector)."""
    y = y.vector if hasattr(y, "vector") else np.asarray(y, dtype=np.float64)
    v = y - mm.H @ pred.mean
    S = innovation_cov(pred, mm)
    factor = _cho(S)
    # K = P H^T S^-1, computed as (S^-1 H P)^T
    K = linalg.cho_solve(factor, mm.H @ pred.cov).T
    mean = pred.mean + K @ v
    cov = symmetrize(pred.cov - K @ S @ K.T)
    return constrain(GaussianState(mean, cov), renormalize, min_radius)


def rts_smooth(steps: Sequence[FilterStep], mm: ModelMatrices) -> list[SmoothedStep]:
    if not steps:
        raise ValueError("cannot smooth an empty sequence")
    n = len(steps)
    out: list[SmoothedStep] = [None] * n  # type: ignore[list-item]
    last = steps[-1].posterior
    out[-1] = SmoothedStep(last.copy())
    for k in range(n - 2, -1, -1):
        filt = steps[k].posterior
        nxt_pred = steps[k + 1].predicted
        factor = _cho(nxt_pred.cov)
        # G = P_k|k F^T P_k+1|k^-1
        G = linalg.cho_solve(factor, mm.F @ filt.cov).T
        smooth_next = out[k + 1].state
        mean = filt.mean + G @ (smooth_next.mean - nxt_pred.mean)
        cov = symmetrize(filt.cov - G @ (nxt_pred.cov - smooth_next.cov) @ G.T)
        out[k] = SmoothedStep(GaussianState(mean, cov))
    return out


def run_filter(
    prior: GaussianState,
    measurements: Sequence,
    mm: ModelMatrices,
    renormalize: bool = True,
    min_radius: float | None = MIN_RADIUS,
) -> list[FilterStep]:
    """Forward pass with fixed associations.

    Step 0 is the prior itself; each entry of ``measurements`` (a 4-vector,
    a Measurement, or None to coast) then yields one predict/update step.
    """
    steps = [FilterStep(prior, prior)]
    state = prior
    for y in measurements:
        pred = predict(state, mm)
        post = pred if y is None else update(pred, y, mm, renormalize, min_radius)
        steps.append(FilterStep(pred, post))
        state = post
    return steps
