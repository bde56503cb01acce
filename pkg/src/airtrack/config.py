"""Flat ``key = value`` pipeline configuration (a TOML subset).

Defaults for the filter noise, prior, gate and validation cut-off are the
published tuned values; everything else is exposed so a run can be
reproduced from the config file alone.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace

from .blobs import BlobConfig
from .errors import ConfigError
from .phantom import PhantomSpec
from .tracker import TrackerConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


def _opt(default, unit: str, help: str):
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata={"unit": unit, "help": help})
    return field(default=default, metadata={"unit": unit, "help": help})


@dataclass
class PipelineConfig:
    # blob measurements
    scales: list = _opt([1.0, 2.0, 4.0, 8.0, 12.0], "mm", "LoG scales, strictly ascending")
    response_threshold: float = _opt(0.1, "-", "minimum |normalized LoG| at the selected scale")
    polarity: str = _opt("bright", "-", "bright | dark | both")
    ridges: bool = _opt(True, "-", "also emit cross-sectional maxima on tubes")
    ridge_axis_ratio: float = _opt(0.3, "-", "max |l1|/|l2| for a tube point")
    ridge_roundness: float = _opt(0.5, "-", "min |l2|/|l3| for a tube point")
    ridge_gradient: float = _opt(0.5, "-", "max axial gradient / (scale*|l2|) for a tube point")
    # state-space model
    delta: float = _opt(0.5, "mm", "tracking step size")
    sigma_q: float = _opt(0.3, "-", "process noise std (radius and direction)")
    sigma_m_pos: float = _opt(2.0, "mm", "measurement noise std on position")
    sigma_m_r: float = _opt(1.0, "mm", "measurement noise std on radius")
    p0_scale: float = _opt(1.0, "-", "seed covariance is p0_scale * I7")
    renormalize_direction: bool = _opt(True, "-", "rescale direction to unit norm after updates")
    min_radius: float = _opt(0.1, "mm", "radius clamp after updates")
    # gating
    kappa: float = _opt(3.0, "-", "rectangular gate coefficient (>= 3)")
    p_gate: float = _opt(0.99, "-", "ellipsoidal gate probability")
    rect_gate_use_stddev: bool = _opt(False, "-", "rectangular gate on std devs instead of variances")
    # branches
    mu_c: float = _opt(2.0, "mm^2", "branch validation cut-off on mean covariance trace")
    min_branch_length: int = _opt(3, "steps", "shortest branch that can be accepted")
    max_branch_length: int = _opt(500, "steps", "longest branch tracked from one seed")
    covariance_source: str = _opt("smoothed", "-", "smoothed | filtered covariances for the score")
    max_coast_steps: int = _opt(0, "steps", "prediction-only steps allowed through gaps")
    # evaluation
    rg_threshold: float = _opt(0.5, "-", "region-growing threshold for the baseline")
    recall_tol: float = _opt(2.0, "mm", "distance tolerance for branch recall")
    # phantom
    rng_seed: int = _opt(0, "-", "seed for every random draw")
    phantom_dims: list = _opt([128, 128, 128], "voxels", "phantom volume size")
    phantom_spacing: list = _opt([1.0, 1.0, 1.0], "mm", "phantom voxel spacing")
    phantom_root: list = _opt([64.0, 64.0, 6.0], "mm", "root branch start")
    phantom_root_direction: list = _opt([0.0, 0.0, 1.0], "-", "root branch direction")
    phantom_root_radius: float = _opt(5.0, "mm", "root branch radius")
    phantom_depth: int = _opt(3, "generations", "bifurcation depth")
    phantom_branch_angle_deg: float = _opt(30.0, "deg", "bifurcation half-angle")
    phantom_radius_taper: float = _opt(0.7, "-", "child/parent radius ratio")
    phantom_segment_length: float = _opt(26.0, "mm", "branch length")
    noise_sigma: float = _opt(0.0, "-", "additive Gaussian noise std (image in [0, 1])")
    occlusion_slabs: int = _opt(0, "-", "blank a slab across each of the first N branches")
    occlusion_thickness: float = _opt(4.0, "mm", "slab thickness along the branch")
    occlusions: list = _opt([], "mm", "extra boxes [cx, cy, cz, hx, hy, hz]")

    def blob_config(self) -> BlobConfig:
        return BlobConfig(
            scales=tuple(self.scales), response_threshold=self.response_threshold,
            polarity=self.polarity, ridges=self.ridges, ridge_axis_ratio=self.ridge_axis_ratio,
            ridge_roundness=self.ridge_roundness, ridge_gradient=self.ridge_gradient,
        )

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(
            mu_c=self.mu_c, min_branch_length=self.min_branch_length,
            max_branch_length=self.max_branch_length, covariance_source=self.covariance_source,
            max_coast_steps=self.max_coast_steps, delta=self.delta, sigma_q=self.sigma_q,
            sigma_m_pos=self.sigma_m_pos, sigma_m_r=self.sigma_m_r, p0_scale=self.p0_scale,
            kappa=self.kappa, p_gate=self.p_gate, rect_gate_use_stddev=self.rect_gate_use_stddev,
            renormalize_direction=self.renormalize_direction, min_radius=self.min_radius,
        )

    def phantom_spec(self) -> PhantomSpec:
        return PhantomSpec(
            root=tuple(self.phantom_root), root_direction=tuple(self.phantom_root_direction),
            root_radius=self.phantom_root_radius, depth=self.phantom_depth,
            branch_angle_deg=self.phantom_branch_angle_deg,
            radius_taper=self.phantom_radius_taper,
            segment_length=self.phantom_segment_length, rng_seed=self.rng_seed,
        )

    def explicit_occlusions(self) -> list:
        return [(tuple(o[:3]), tuple(o[3:])) for o in self.occlusions]

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self) -> "PipelineConfig":
        """Build every sub-config once so bad values fail early as ConfigError."""
        try:
            self.blob_config()
            self.tracker_config()
            self.phantom_spec()
            for name in ("phantom_dims", "phantom_spacing", "phantom_root", "phantom_root_direction"):
                if len(getattr(self, name)) != 3:
                    raise ValueError(f"{name} needs 3 values")
            if any(n < 8 for n in self.phantom_dims):
                raise ValueError("phantom_dims must be at least 8 per axis")
            if any(s <= 0 for s in self.phantom_spacing):
                raise ValueError("phantom_spacing must be positive")
            if self.noise_sigma < 0 or self.occlusion_slabs < 0 or self.occlusion_thickness <= 0:
                raise ValueError("noise_sigma, occlusion_slabs must be >= 0, thickness > 0")
            if any(len(o) != 6 for o in self.occlusions):
                raise ValueError("each occlusion needs 6 numbers [cx, cy, cz, hx, hy, hz]")
            if self.recall_tol <= 0:
                raise ValueError("recall_tol must be positive")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


def _coerce(name: str, value, default):
    """Match ``value`` to the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be an array")
        if name == "occlusions":
            return [[_coerce(name, float(v) if isinstance(v, int) else v, 0.0) for v in row]
                    if isinstance(row, list) else _bad_row(name) for row in value]
        proto = default[0] if default else 0.0
        return [_coerce(name, v, proto) for v in value]
    raise ConfigError(f"unsupported option {name}")  # pragma: no cover


def _bad_row(name):
    raise ConfigError(f"{name} entries must be arrays")


def config_from_mapping(values: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    base = base or PipelineConfig()
    known = {f.name: f for f in fields(PipelineConfig)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    updates = {k: _coerce(k, v, getattr(base, k)) for k, v in values.items()}
    return replace(base, **updates).validate()


def load_config(path) -> PipelineConfig:
    try:
        with open(path, "rb") as fh:
            values = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: tables are not supported ({', '.join(nested)})")
    return config_from_mapping(values)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def dump_config(cfg: PipelineConfig) -> str:
    return "".join(f"{k} = {_toml_value(v)}\n" for k, v in cfg.as_dict().items())


def describe_options() -> str:
    """One line per key: name, default, unit and meaning (for --help)."""
    lines = []
    for f in fields(PipelineConfig):
        default = f.default_factory() if callable(f.default_factory) else f.default  # type: ignore[misc]
        lines.append(f"  {f.name} = {_toml_value(default)}  [{f.metadata['unit']}]  {f.metadata['help']}")
    return "\n".join(lines)
