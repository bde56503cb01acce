"""Multi-scale blob measurements from a volume.

Two kinds of points are emitted, both at a voxel whose scale-normalized
Laplacian of Gaussian beats the two adjacent scales at the same voxel:

* blobs: strict extrema over the 3x3x3 neighbourhood at the same and the
  adjacent scales (the usual scale-space maxima);
* tube points (``ridges=True``): voxels on a tubular structure that are
  strict maxima within the tube cross-section. A clean tube has a flat
  response along its axis, so blob maxima alone are several mm apart.

The radius is ``sqrt(3) * scale``, where the normalized response of a
solid ball peaks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import ndimage

from .errors import IsotropicPointError
from .volume import Volume, gaussian_kernel, hessian_at, second_derivative_kernel

RADIUS_PER_SCALE = math.sqrt(3.0)

Polarity = Literal["bright", "dark", "both"]


@dataclass
class Measurement:
    """One blob: position and radius in mm plus its scale-space response."""

    position: tuple[float, float, float]
    radius: float
    scale: float
    response: float
    consumed: bool = False

    @property
    def vector(self) -> np.ndarray:
        """The 4-vector ``[x, y, z, r]`` seen by the filter."""
        return np.array([*self.position, self.radius])


@dataclass(frozen=True)
class BlobConfig:
    scales: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 12.0)
    response_threshold: float = 0.1
    polarity: Polarity = "bright"
    ridges: bool = True
    # tube-point shape limits on Hessian eigenvalues |l1| <= |l2| <= |l3|
    ridge_axis_ratio: float = 0.3  # |l1| / |l2|
    ridge_roundness: float = 0.5  # |l2| / |l3|
    ridge_gradient: float = 0.5  # |grad . axis| / (scale * |l2|)

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if not scales:
            raise ValueError("at least one scale is required")
        if any(s <= 0 for s in scales):
            raise ValueError(f"scales must be positive, got {scales}")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError(f"scales must be strictly ascending, got {scales}")
        if self.response_threshold < 0:
            raise ValueError("response_threshold must be nonnegative")
        if self.polarity not in ("bright", "dark", "both"):
            raise ValueError(f"unknown polarity {self.polarity!r}")


def log_response(vol: Volume, sigma_mm: float) -> Volume:
    """Scale-normalized LoG, ``sigma^2 * laplacian(G_sigma * I)``."""
    if not sigma_mm > 0:
        raise ValueError(f"sigma must be positive, got {sigma_mm}")
    g = [gaussian_kernel(sigma_mm / s) for s in vol.spacing]
    d2 = [second_derivative_kernel(sigma_mm, s) for s in vol.spacing]
    corr = lambda a, k, ax: ndimage.correlate1d(a, k, axis=ax, mode="nearest")  # noqa: E731

    gz = corr(vol.data, g[2], 2)
    gyz = corr(gz, g[1], 1)
    lap = corr(gyz, d2[0], 0)
    gxz = corr(gz, g[0], 0)
    lap += corr(gxz, d2[1], 1)
    gxy = corr(corr(vol.data, g[0], 0), g[1], 1)
    lap += corr(gxy, d2[2], 2)
    # the fully smoothed volume falls out for free; hessian_at reuses it
    if float(sigma_mm) not in vol._smoothed:
        smooth = corr(gyz, g[0], 0)
        smooth.setflags(write=False)
        vol._smoothed[float(sigma_mm)] = smooth
    lap *= sigma_mm**2
    return vol.with_data(lap)


def _strict_max(values: list[np.ndarray], n: int) -> np.ndarray:
    """Strict maxima of ``values[n]`` over its 3x3x3 block at scales n-1..n+1."""
    v = values[n]
    footprint = np.ones((3, 3, 3), dtype=bool)
    footprint[1, 1, 1] = False
    # 'nearest' makes border voxels tie with themselves, so they never qualify
    mask = v > ndimage.maximum_filter(v, footprint=footprint, mode="nearest")
    for m in (n - 1, n + 1):
        if 0 <= m < len(values):
            mask &= v > ndimage.maximum_filter(values[m], size=3, mode="nearest")
    return mask


def _hessian_and_gradient(smooth: np.ndarray, idx: np.ndarray, spacing):
    """Central-difference Hessians (n, 3, 3) and gradients (n, 3) in mm units."""
    i, j, k = idx.T
    sx, sy, sz = spacing

    def at(a, b, c):
        return smooth[i + a, j + b, k + c]

    c0 = at(0, 0, 0)
    H = np.empty((len(idx), 3, 3))
    H[:, 0, 0] = (at(1, 0, 0) - 2 * c0 + at(-1, 0, 0)) / sx**2
    H[:, 1, 1] = (at(0, 1, 0) - 2 * c0 + at(0, -1, 0)) / sy**2
    H[:, 2, 2] = (at(0, 0, 1) - 2 * c0 + at(0, 0, -1)) / sz**2
    H[:, 0, 1] = H[:, 1, 0] = (at(1, 1, 0) - at(1, -1, 0) - at(-1, 1, 0) + at(-1, -1, 0)) / (4 * sx * sy)
    H[:, 0, 2] = H[:, 2, 0] = (at(1, 0, 1) - at(1, 0, -1) - at(-1, 0, 1) + at(-1, 0, -1)) / (4 * sx * sz)
    H[:, 1, 2] = H[:, 2, 1] = (at(0, 1, 1) - at(0, 1, -1) - at(0, -1, 1) + at(0, -1, -1)) / (4 * sy * sz)
    g = np.stack([(at(1, 0, 0) - at(-1, 0, 0)) / (2 * sx),
                  (at(0, 1, 0) - at(0, -1, 0)) / (2 * sy),
                  (at(0, 0, 1) - at(0, 0, -1)) / (2 * sz)], axis=1)
    return H, g


def _tube_points(vol: Volume, v: np.ndarray, scale: float, cand: np.ndarray,
                 cfg: "BlobConfig") -> np.ndarray:
    """Subset of candidate voxels that are cross-sectional maxima of ``v`` on a tube."""
    dims = np.asarray(vol.dims)
    idx = np.argwhere(cand)
    idx = idx[np.all((idx >= 1) & (idx <= dims - 2), axis=1)]
    if len(idx) == 0:
        return idx
    H, g = _hessian_and_gradient(vol.smoothed(scale), idx, vol.spacing)
    if cfg.polarity == "dark":
        H = -H
    evals, evecs = np.linalg.eigh(H)
    order = np.argsort(np.abs(evals), axis=1)
    evals = np.take_along_axis(evals, order, axis=1)
    evecs = np.take_along_axis(evecs, order[:, None, :], axis=2)
    l1, l2, l3 = np.abs(evals).T
    ok = l1 <= cfg.ridge_axis_ratio * l2
    ok &= l2 >= cfg.ridge_roundness * l3
    if cfg.polarity != "both":
        # bright tube: strong curvature negative across the axis
        ok &= (evals[:, 1] < 0) & (evals[:, 2] < 0)
    # on a ball every radius looks like a ridge; its centre-ward gradient gives it away
    along = np.abs(np.einsum("ij,ij->i", g, evecs[:, :, 0]))
    ok &= along <= cfg.ridge_gradient * scale * l2
    idx, evecs = idx[ok], evecs[ok]
    if len(idx) == 0:
        return idx
    step = min(vol.spacing) / np.asarray(vol.spacing)
    e2, e3 = evecs[:, :, 1], evecs[:, :, 2]
    center = v[tuple(idx.T)]
    keep = np.ones(len(idx), dtype=bool)
    for d in (e2, e3, (e2 + e3) / np.sqrt(2), (e2 - e3) / np.sqrt(2)):
        for sign in (1.0, -1.0):
            probe = idx + sign * d * step
            keep &= center > ndimage.map_coordinates(v, probe.T, order=1, mode="nearest")
    return idx[keep]


def detect_blobs(vol: Volume, cfg: BlobConfig | None = None) -> list[Measurement]:
    cfg = cfg or BlobConfig()
    if min(vol.dims) <= 3:
        raise ValueError(f"volume must be larger than 3 voxels per axis, got {vol.dims}")
    responses = [log_response(vol, s).data for s in cfg.scales]
    if cfg.polarity == "bright":
        values = [-r for r in responses]
    elif cfg.polarity == "dark":
        values = responses
    else:
        values = [np.abs(r) for r in responses]

    found = []
    for n, scale in enumerate(cfg.scales):
        v = values[n]
        cand = (v > 0) & (np.abs(responses[n]) >= cfg.response_threshold)
        if n > 0:
            cand &= v > values[n - 1]
        if n + 1 < len(values):
            cand &= v > values[n + 1]
        blobs = cand & _strict_max(values, n)
        points = [np.argwhere(blobs)]
        if cfg.ridges:
            points.append(_tube_points(vol, v, scale, cand & ~blobs, cfg))
        for i, j, k in np.concatenate(points):
            pos = vol.index_to_world((i, j, k))
            found.append(
                Measurement(
                    position=tuple(float(p) for p in pos),
                    radius=RADIUS_PER_SCALE * scale,
                    scale=scale,
                    response=float(responses[n][i, j, k]),
                )
            )
    found.sort(key=blob_order_key)
    return found


def blob_order_key(m: Measurement):
    """Scale descending, |response| descending, then (z, y, x)."""
    x, y, z = m.position
    return (-m.scale, -abs(m.response), z, y, x)


def principal_axis(vol: Volume, m: Measurement) -> np.ndarray:
    """Unit tube axis at a blob: the Hessian eigenvector of least curvature.

    Raises IsotropicPointError when the Hessian vanishes.
    """
    h = hessian_at(vol, m.position, m.scale)
    evals, evecs = np.linalg.eigh(h)
    if np.max(np.abs(evals)) < 1e-12:
        raise IsotropicPointError(f"flat Hessian at {m.position}")
    axis = evecs[:, int(np.argmin(np.abs(evals)))]
    axis = axis / np.linalg.norm(axis)
    for c in axis:
        if abs(c) > 1e-12:
            if c < 0:
                axis = -axis
            break
    return axis


def measurements_to_json(ms: list[Measurement]) -> list[dict]:
    return [
        {"pos": list(m.position), "r": m.radius, "scale": m.scale, "response": m.response}
        for m in ms
    ]


def measurements_from_json(items: list[dict]) -> list[Measurement]:
    out = []
    for it in items:
        pos = it["pos"]
        if len(pos) != 3:
            raise ValueError(f"measurement position must have 3 components, got {pos}")
        out.append(
            Measurement(
                position=tuple(float(p) for p in pos),
                radius=float(it["r"]),
                scale=float(it["scale"]),
                response=float(it["response"]),
            )
        )
    return out
