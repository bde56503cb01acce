"""Linear-Gaussian tube model.

State ``[x, y, z, r, vx, vy, vz]``: centre (mm), radius (mm) and axis
direction. The process moves the centre by ``delta * v`` per step; the
measurement observes centre and radius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STATE_DIM = 7
MEAS_DIM = 4
MIN_RADIUS = 0.1


@dataclass
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def position(self) -> np.ndarray:
        return self.mean[:3]

    @property
    def radius(self) -> float:
        return float(self.mean[3])

    @property
    def direction(self) -> np.ndarray:
        return self.mean[4:]

    def trace(self) -> float:
        return float(np.trace(self.cov))

    def copy(self) -> "GaussianState":
        return GaussianState(self.mean.copy(), self.cov.copy())


@dataclass(frozen=True)
class ModelMatrices:
    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    delta: float


def make_models(
    delta: float = 1.0,
    sigma_q: float = 0.3,
    sigma_m_pos: float = 2.0,
    sigma_m_r: float = 1.0,
) -> ModelMatrices:
    for name, val in [("delta", delta), ("sigma_q", sigma_q),
                      ("sigma_m_pos", sigma_m_pos), ("sigma_m_r", sigma_m_r)]:
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")
    F = np.eye(STATE_DIM)
    F[0, 4] = F[1, 5] = F[2, 6] = delta
    Q = np.zeros((STATE_DIM, STATE_DIM))
    Q[3:, 3:] = sigma_q**2 * delta * np.eye(4)
    H = np.zeros((MEAS_DIM, STATE_DIM))
    H[:, :MEAS_DIM] = np.eye(MEAS_DIM)
    R = np.diag([sigma_m_pos**2] * 3 + [sigma_m_r**2])
    for m in (F, Q, H, R):
        m.setflags(write=False)
    return ModelMatrices(F=F, Q=Q, H=H, R=R, delta=float(delta))


def initial_state(measurement, axis, p0_scale: float = 1.0) -> GaussianState:
    """Seed density centred on a blob, pointing along ``axis``, cov ``p0_scale * I``."""
    if not p0_scale > 0:
        raise ValueError(f"p0_scale must be positive, got {p0_scale}")
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm == 0:
        raise ValueError("seed axis is the zero vector")
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"seed axis must be unit length, got norm {norm}")
    mean = np.concatenate([np.asarray(measurement.position, dtype=np.float64),
                           [float(measurement.radius)], axis])
    return GaussianState(mean, p0_scale * np.eye(STATE_DIM))


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def constrain(state: GaussianState, renormalize: bool = True,
              min_radius: float | None = MIN_RADIUS) -> GaussianState:
    """Clamp the radius and rescale the direction to unit norm; covariance untouched."""
    mean = state.mean
    if min_radius is not None and mean[3] <= min_radius:
        mean[3] = min_radius
    if renormalize:
        n = np.linalg.norm(mean[4:])
        if n > 0:
            mean[4:] /= n
    return state
