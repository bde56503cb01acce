"""Centerline distance metrics and the region-growing baseline."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .volume import Volume


@dataclass(frozen=True)
class CenterlineMetrics:
    d_fp: float
    d_fn: float
    d_err: float

    def to_json(self) -> dict:
        return asdict(self)


def _as_points(p, name: str) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    if len(arr) == 0:
        raise ValueError(f"{name} point set is empty")
    return arr


def centerline_distance(seg_points, ref_points) -> CenterlineMetrics:
    """Mean nearest-neighbour distances seg->ref (d_fp) and ref->seg (d_fn)."""
    seg = _as_points(seg_points, "segmentation")
    ref = _as_points(ref_points, "reference")
    d_fp = float(cKDTree(ref).query(seg)[0].mean())
    d_fn = float(cKDTree(seg).query(ref)[0].mean())
    return CenterlineMetrics(d_fp, d_fn, (d_fp + d_fn) / 2)


def region_grow(vol: Volume, threshold: float, seed_point) -> np.ndarray:
    """26-connected component of ``vol >= threshold`` containing the seed.

    Returns voxel indices as an ``(n, 3)`` integer array in lexicographic order.
    """
    idx = np.rint(vol.world_to_index(seed_point)).astype(int)
    if np.any(idx < 0) or np.any(idx >= np.asarray(vol.dims)):
        raise ValueError(f"seed {tuple(seed_point)} lies outside the volume")
    seed = tuple(idx)
    if vol.data[seed] < threshold:
        raise ValueError(f"seed value {vol.data[seed]:.4g} is below threshold {threshold}")
    labels, _ = ndimage.label(vol.data >= threshold, structure=np.ones((3, 3, 3), dtype=int))
    return np.argwhere(labels == labels[seed])


def voxel_points(vol: Volume, indices: np.ndarray) -> np.ndarray:
    """World positions of voxel indices."""
    return vol.index_to_world(np.asarray(indices, dtype=np.float64).reshape(-1, 3))


def branch_recall(branches: Sequence, tree, tol_mm: float) -> float:
    """Fraction of ground-truth samples within ``tol_mm`` of any branch state."""
    truth = tree.samples()
    if len(truth) == 0:
        raise ValueError("tree has no centerline samples")
    pts = [b.positions() for b in branches if len(b)]
    if not pts:
        return 0.0
    dist, _ = cKDTree(np.vstack(pts)).query(truth)
    return float(np.mean(dist <= tol_mm))


def format_table(rows: Sequence[tuple[str, CenterlineMetrics]]) -> str:
    """Aligned plain-text table with d_FP, d_FN and d_err columns in mm."""
    header = ("Method", "d_FP (mm)", "d_FN (mm)", "d_err (mm)")
    body = [(name, f"{m.d_fp:.3f}", f"{m.d_fn:.3f}", f"{m.d_err:.3f}") for name, m in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(4)]
    line = lambda r: "  ".join(  # noqa: E731
        c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))
    )
    sep = "-" * len(line(header))
    return "\n".join([line(header), sep, *map(line, body)]) + "\n"
