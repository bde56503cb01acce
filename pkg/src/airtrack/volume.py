"""3D scalar volumes in world (mm) coordinates.

Arrays are stored with shape ``(nx, ny, nz)`` so that ``data[i, j, k]`` is
the voxel at ``origin + (i*sx, j*sy, k*sz)``. On disk the layout is
x-fastest, which is Fortran order for this shape.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import VolumeFormatError

TRUNCATE = 4.0

_ELEMENT_TYPES = {
    "MET_FLOAT": np.dtype("<f4"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_UCHAR": np.dtype("u1"),
}


@dataclass(frozen=True, eq=False)
class Volume:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # smoothed copies keyed by sigma; derived data only, never exposed
    _smoothed: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or len(origin) != 3:
            raise ValueError("spacing and origin must be triples")
        if min(spacing) <= 0:
            raise ValueError(f"spacing must be strictly positive, got {spacing}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains NaN or Inf")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def world_to_index(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=np.float64)
        return (p - np.asarray(self.origin)) / np.asarray(self.spacing)

    def index_to_world(self, index) -> np.ndarray:
        i = np.asarray(index, dtype=np.float64)
        return np.asarray(self.origin) + i * np.asarray(self.spacing)

    def with_data(self, data: np.ndarray) -> "Volume":
        """New volume on the same grid."""
        return Volume(data, self.spacing, self.origin)

    def smoothed(self, sigma_mm: float) -> np.ndarray:
        """Cached ``gaussian_smooth`` array for ``sigma_mm``."""
        key = float(sigma_mm)
        arr = self._smoothed.get(key)
        if arr is None:
            arr = _smooth_array(self.data, self.spacing, key)
            arr.setflags(write=False)
            self._smoothed[key] = arr
        return arr


def gaussian_kernel(sigma_vox: float) -> np.ndarray:
    """Sampled Gaussian truncated at 4 sigma and renormalized to sum 1."""
    radius = max(1, int(np.ceil(TRUNCATE * sigma_vox)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma_vox) ** 2)
    return k / k.sum()


def second_derivative_kernel(sigma_mm: float, spacing: float) -> np.ndarray:
    """Sampled d^2/dx^2 of a unit-mass Gaussian, in 1/mm^2 per unit input.

    Corrected to zero sum (constants map to zero) and to unit second moment
    /2 (so x^2 maps to exactly 2).
    """
    sigma_vox = sigma_mm / spacing
    g = gaussian_kernel(sigma_vox)
    radius = (len(g) - 1) // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64) * spacing
    k = g * (x**2 - sigma_mm**2) / sigma_mm**4
    k -= g * k.sum()
    k *= 2.0 / np.sum(k * x**2)
    return k


def _smooth_array(data: np.ndarray, spacing, sigma_mm: float) -> np.ndarray:
    out = data
    for axis in range(3):
        k = gaussian_kernel(sigma_mm / spacing[axis])
        out = ndimage.correlate1d(out, k, axis=axis, mode="nearest")
    return out


def gaussian_smooth(vol: Volume, sigma_mm: float) -> Volume:
    """Separable Gaussian smoothing with per-axis widths ``sigma_mm / spacing``.

    Borders use edge replication.
    """
    if not sigma_mm > 0:
        raise ValueError(f"sigma must be positive, got {sigma_mm}")
    return vol.with_data(vol.smoothed(sigma_mm))


def _check_inside(vol: Volume, idx: np.ndarray, margin: float) -> None:
    hi = np.asarray(vol.dims, dtype=np.float64) - 1.0 - margin
    eps = 1e-9
    if np.any(idx < margin - eps) or np.any(idx > hi + eps):
        raise ValueError(f"point at index {idx.tolist()} is outside the volume (margin {margin})")


def _corner_weights(idx: np.ndarray, dims) -> tuple[np.ndarray, np.ndarray]:
    base = np.floor(idx).astype(int)
    base = np.minimum(base, np.maximum(np.asarray(dims) - 2, 0))
    base = np.maximum(base, 0)
    frac = np.clip(idx - base, 0.0, 1.0)
    return base, frac


def _trilinear(block: np.ndarray, frac: np.ndarray) -> float:
    # block has shape (2, 2, 2, ...) for the 8 surrounding corners
    fx, fy, fz = frac
    c = block[0] * (1 - fx) + block[1] * fx
    c = c[0] * (1 - fy) + c[1] * fy
    return c[0] * (1 - fz) + c[1] * fz


def trilinear_sample(vol: Volume, point) -> float:
    idx = vol.world_to_index(point)
    _check_inside(vol, idx, 0.0)
    base, frac = _corner_weights(idx, vol.dims)
    sl = tuple(slice(b, min(b + 2, n)) for b, n in zip(base, vol.dims))
    block = vol.data[sl]
    # pad degenerate single-voxel axes so the block is always 2x2x2
    block = np.pad(block, [(0, 2 - s) for s in block.shape], mode="edge")
    return float(_trilinear(block, frac))


def hessian_at(vol: Volume, point, sigma_mm: float) -> np.ndarray:
    """Hessian of the ``sigma_mm``-smoothed volume at a world point.

    Central differences are taken on the smoothed grid at the eight voxels
    around ``point`` and blended trilinearly. Returns a symmetric 3x3 array
    in response units per mm^2.
    """
    if not sigma_mm > 0:
        raise ValueError(f"sigma must be positive, got {sigma_mm}")
    idx = vol.world_to_index(point)
    _check_inside(vol, idx, 1.0)
    smooth = vol.smoothed(sigma_mm)
    base, frac = _corner_weights(idx, vol.dims)
    # 4x4x4 neighbourhood, edge-replicated where it touches the border
    ranges = [np.clip(np.arange(b - 1, b + 3), 0, n - 1) for b, n in zip(base, vol.dims)]
    s = smooth[np.ix_(*ranges)]
    sx, sy, sz = vol.spacing
    c = slice(1, 3)
    lo, hi = slice(0, 2), slice(2, 4)
    dxx = (s[hi, c, c] - 2 * s[c, c, c] + s[lo, c, c]) / sx**2
    dyy = (s[c, hi, c] - 2 * s[c, c, c] + s[c, lo, c]) / sy**2
    dzz = (s[c, c, hi] - 2 * s[c, c, c] + s[c, c, lo]) / sz**2
    dxy = (s[hi, hi, c] - s[hi, lo, c] - s[lo, hi, c] + s[lo, lo, c]) / (4 * sx * sy)
    dxz = (s[hi, c, hi] - s[hi, c, lo] - s[lo, c, hi] + s[lo, c, lo]) / (4 * sx * sz)
    dyz = (s[c, hi, hi] - s[c, hi, lo] - s[c, lo, hi] + s[c, lo, lo]) / (4 * sy * sz)
    xx, yy, zz, xy, xz, yz = (_trilinear(d, frac) for d in (dxx, dyy, dzz, dxy, dxz, dyz))
    return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])


# -- MetaImage subset -------------------------------------------------------

def _parse_header(path: str) -> dict[str, str]:
    fields = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise VolumeFormatError(f"{path}:{lineno}: expected 'Key = Value'")
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    return fields


def _floats(fields, key, n, default=None):
    if key not in fields:
        if default is None:
            raise VolumeFormatError(f"missing header field {key}")
        return default
    try:
        vals = tuple(float(v) for v in fields[key].split())
    except ValueError:
        raise VolumeFormatError(f"cannot parse {key} = {fields[key]!r}") from None
    if len(vals) != n:
        raise VolumeFormatError(f"{key} needs {n} values, got {len(vals)}")
    return vals


def load_volume(path: str | os.PathLike) -> Volume:
    """Read a 3D MetaImage (``.mhd`` + raw) file."""
    path = os.fspath(path)
    fields = _parse_header(path)
    if fields.get("ObjectType", "Image") != "Image":
        raise VolumeFormatError(f"unsupported ObjectType {fields['ObjectType']!r}")
    if "NDims" not in fields:
        raise VolumeFormatError("missing header field NDims")
    if fields["NDims"] != "3":
        raise VolumeFormatError(f"only NDims = 3 is supported, got {fields['NDims']}")
    if fields.get("BinaryDataByteOrderMSB", "False") not in ("False", "false", "0"):
        raise VolumeFormatError("big-endian raw data is not supported")
    if fields.get("CompressedData", "False") not in ("False", "false", "0"):
        raise VolumeFormatError("compressed raw data is not supported")
    dims = _floats(fields, "DimSize", 3)
    if any(d != int(d) or d < 1 for d in dims):
        raise VolumeFormatError(f"DimSize must be positive integers, got {fields['DimSize']}")
    dims = tuple(int(d) for d in dims)
    spacing = _floats(fields, "ElementSpacing", 3)
    origin = _floats(fields, "Offset", 3, default=(0.0, 0.0, 0.0))
    etype = fields.get("ElementType")
    if etype is None:
        raise VolumeFormatError("missing header field ElementType")
    if etype not in _ELEMENT_TYPES:
        raise VolumeFormatError(f"unsupported ElementType {etype}")
    dtype = _ELEMENT_TYPES[etype]
    datafile = fields.get("ElementDataFile")
    if not datafile:
        raise VolumeFormatError("missing header field ElementDataFile")
    raw_path = os.path.join(os.path.dirname(path), datafile)
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    actual = os.path.getsize(raw_path)
    if actual != expected:
        raise VolumeFormatError(
            f"raw file {raw_path} has {actual} bytes, expected {expected} for {dims} {etype}"
        )
    flat = np.fromfile(raw_path, dtype=dtype)
    data = flat.reshape(dims, order="F").astype(np.float64)
    try:
        return Volume(data, spacing, origin)
    except ValueError as exc:
        raise VolumeFormatError(str(exc)) from None


def save_volume(vol: Volume, path: str | os.PathLike, element_type: str = "MET_FLOAT") -> None:
    """Write ``vol`` as ``<stem>.mhd`` with a sibling ``<stem>.raw``."""
    path = os.fspath(path)
    dtype = _ELEMENT_TYPES[element_type]
    stem, _ = os.path.splitext(path)
    raw_name = os.path.basename(stem) + ".raw"
    fmt = lambda xs: " ".join(repr(float(x)) for x in xs)  # noqa: E731
    header = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        f"Offset = {fmt(vol.origin)}",
        f"ElementSpacing = {fmt(vol.spacing)}",
        "DimSize = " + " ".join(str(n) for n in vol.dims),
        f"ElementType = {element_type}",
        f"ElementDataFile = {raw_name}",
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(header) + "\n")
    payload = np.asarray(vol.data, dtype=dtype).ravel(order="F")
    with open(os.path.join(os.path.dirname(path), raw_name), "wb") as fh:
        fh.write(payload.tobytes())
