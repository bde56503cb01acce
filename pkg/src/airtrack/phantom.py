"""Synthetic bifurcating tube trees with exact centerlines.

Trees are rasterized with a soft Gaussian cross-section so a rendered
phantom looks like a probability image: 1 on the centerline, ``exp(-2)``
at the nominal radius, 0 beyond twice the radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .volume import Volume

SAMPLE_SPACING = 0.5
JITTER_DEG = 5.0


@dataclass(frozen=True)
class PhantomSpec:
    root: tuple[float, float, float] = (64.0, 64.0, 6.0)
    root_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    root_radius: float = 5.0
    depth: int = 3
    branch_angle_deg: float = 30.0
    radius_taper: float = 0.7
    segment_length: float = 26.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.radius_taper < 1:
            raise ValueError(f"radius_taper must lie in (0, 1), got {self.radius_taper}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.root_radius <= 0 or self.segment_length <= 0:
            raise ValueError("root_radius and segment_length must be positive")
        if np.linalg.norm(self.root_direction) == 0:
            raise ValueError("root_direction is the zero vector")
        if self.leaf_radius < 0.5:
            raise ValueError(
                f"leaf radius {self.leaf_radius:.3f} mm is below 0.5 mm; "
                "reduce depth or raise radius_taper/root_radius"
            )

    @property
    def leaf_radius(self) -> float:
        return self.root_radius * self.radius_taper**self.depth


@dataclass
class PhantomBranch:
    points: np.ndarray  # (n, 3) mm
    radii: np.ndarray  # (n,) mm
    parent: int = -1


@dataclass
class PhantomTree:
    branches: list[PhantomBranch] = field(default_factory=list)

    def samples(self) -> np.ndarray:
        """All centerline samples stacked as an ``(n, 3)`` array."""
        if not self.branches:
            return np.empty((0, 3))
        return np.vstack([b.points for b in self.branches])

    def translated(self, offset) -> "PhantomTree":
        offset = np.asarray(offset, dtype=np.float64)
        return PhantomTree([PhantomBranch(b.points + offset, b.radii.copy(), b.parent)
                            for b in self.branches])

    def to_json(self) -> dict:
        return {
            "branches": [
                {
                    "points": [[_g9(c) for c in p] for p in b.points],
                    "radii": [_g9(r) for r in b.radii],
                    "parent": int(b.parent),
                }
                for b in self.branches
            ]
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PhantomTree":
        branches = []
        for b in doc["branches"]:
            pts = np.asarray(b["points"], dtype=np.float64).reshape(-1, 3)
            radii = np.asarray(b["radii"], dtype=np.float64)
            if len(radii) != len(pts):
                raise ValueError("points and radii differ in length")
            branches.append(PhantomBranch(pts, radii, int(b.get("parent", -1))))
        return cls(branches)


def _g9(x: float) -> float:
    return float(f"{float(x):.9g}")


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of ``v`` about unit ``axis``."""
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1 - c)


def _random_perpendicular(d: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = _unit(np.cross(d, helper))
    e2 = np.cross(d, e1)
    phi = rng.uniform(0.0, 2 * math.pi)
    return math.cos(phi) * e1 + math.sin(phi) * e2


def generate_tree(spec: PhantomSpec) -> PhantomTree:
    """Binary tree of straight segments, built breadth first.

    Every branch direction gets a seeded tilt of at most 5 degrees; children
    split by +/- ``branch_angle_deg`` about a shared random axis normal to
    the parent.
    """
    # Philox is counter based, so the stream is the same on every platform
    rng = np.random.Generator(np.random.Philox(spec.rng_seed))
    tree = PhantomTree()
    n_samples = int(math.ceil(spec.segment_length / SAMPLE_SPACING)) + 1
    t = np.linspace(0.0, spec.segment_length, n_samples)
    queue = [(np.asarray(spec.root, dtype=np.float64), _unit(spec.root_direction),
              spec.root_radius, 0, -1)]
    while queue:
        start, nominal, radius, level, parent = queue.pop(0)
        tilt = math.radians(rng.uniform(-JITTER_DEG, JITTER_DEG))
        direction = _unit(_rotate(nominal, _random_perpendicular(nominal, rng), tilt))
        points = start + t[:, None] * direction
        tree.branches.append(PhantomBranch(points, np.full(n_samples, radius), parent))
        index = len(tree.branches) - 1
        if level < spec.depth:
            axis = _random_perpendicular(direction, rng)
            angle = math.radians(spec.branch_angle_deg)
            for sign in (1.0, -1.0):
                child = _unit(_rotate(direction, axis, sign * angle))
                queue.append((points[-1].copy(), child, radius * spec.radius_taper,
                              level + 1, index))
    return tree


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Distances from points ``p`` (n, 3) to segment ab, and the segment parameter."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        u = np.zeros(len(p))
    else:
        u = np.clip((p - a) @ ab / denom, 0.0, 1.0)
    closest = a + u[:, None] * ab
    return np.linalg.norm(p - closest, axis=1), u


def rasterize(tree: PhantomTree, dims, spacing=(1.0, 1.0, 1.0),
              origin=(0.0, 0.0, 0.0)) -> Volume:
    dims = tuple(int(n) for n in dims)
    spacing = np.asarray(spacing, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    out = np.zeros(dims)
    lo_ok = origin + 2 * spacing
    hi_ok = origin + (np.asarray(dims) - 3) * spacing
    for n, b in enumerate(tree.branches):
        if np.any(b.points < lo_ok - 1e-9) or np.any(b.points > hi_ok + 1e-9):
            raise ValueError(f"branch {n} leaves the volume (2-voxel margin)")

    for b in tree.branches:
        for a, c, ra, rc in zip(b.points[:-1], b.points[1:], b.radii[:-1], b.radii[1:]):
            reach = 2 * max(ra, rc)
            lo = np.floor((np.minimum(a, c) - reach - origin) / spacing).astype(int)
            hi = np.ceil((np.maximum(a, c) + reach - origin) / spacing).astype(int)
            lo = np.maximum(lo, 0)
            hi = np.minimum(hi, np.asarray(dims) - 1)
            if np.any(hi < lo):
                continue
            axes = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
            pts = origin + grid * spacing
            d, u = _segment_distance(pts, a, c)
            r = ra + u * (rc - ra)
            val = np.where(d <= 2 * r, np.exp(-2.0 * d**2 / r**2), 0.0)
            block = out[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
            np.maximum(block, val.reshape(block.shape), out=block)
    return Volume(out, tuple(spacing), tuple(origin))


def _broadcast_half_width(hw) -> np.ndarray:
    hw = np.asarray(hw, dtype=np.float64)
    return np.broadcast_to(hw, (3,)).astype(np.float64)


def corrupt(vol: Volume, noise_sigma: float = 0.0, occlusions=(), rng_seed: int = 0) -> Volume:
    """Add clamped Gaussian noise, then blank axis-aligned occlusion boxes.

    Each occlusion is ``(center_mm, half_width_mm)``; the half width may be a
    scalar (cube) or a per-axis triple (slab).
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    data = vol.data.copy()
    if noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(rng_seed))
        data += rng.normal(0.0, noise_sigma, size=data.shape)
        np.clip(data, 0.0, 1.0, out=data)
    if occlusions:
        coords = [vol.origin[a] + np.arange(n) * vol.spacing[a] for a, n in enumerate(vol.dims)]
        for center, half_width in occlusions:
            center = np.asarray(center, dtype=np.float64)
            hw = _broadcast_half_width(half_width)
            sel = [np.abs(coords[a] - center[a]) <= hw[a] for a in range(3)]
            data[np.ix_(*sel)] = 0.0
    return vol.with_data(data)


def occlusion_slabs(tree: PhantomTree, count: int, thickness: float = 4.0) -> list:
    """Boxes blanking a ``thickness``-mm slab across the middle of each of the first ``count`` branches.

    The slab is thin along the axis closest to the branch direction and wide
    enough across it to cover the whole soft profile.
    """
    if count > len(tree.branches):
        raise ValueError(f"tree has only {len(tree.branches)} branches, {count} slabs requested")
    boxes = []
    for b in tree.branches[:count]:
        mid = len(b.points) // 2
        direction = b.points[-1] - b.points[0]
        hw = np.full(3, 2.5 * float(b.radii[mid]) + 2.0)
        hw[int(np.argmax(np.abs(direction)))] = thickness / 2
        boxes.append((tuple(float(c) for c in b.points[mid]), tuple(float(h) for h in hw)))
    return boxes
