"""Flat run configuration shared by the CLI subcommands."""

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ValidationError
from .losses import LossWeights
from .normals import SamplingConfig


@dataclass(frozen=True)
class Config:
    # triplet sampling / combined normal map
    triplets_per_group: int = 100
    min_angle: float = 15.0
    min_distance: float = 0.3
    normal_window: int = 3
    # loss weights and base-loss parameters
    alpha: float = 3.0
    beta: float = 5.0
    gamma: float = 1.0
    delta: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    match_iou: float = 0.5
    # plane fitting and rendering
    mask_threshold: float = 0.5
    fit_method: str = "pca"
    ransac_iterations: int = 256
    ransac_threshold: float = None
    # iBims
    dbe_threshold: float = 0.05
    dbe_max_distance: float = 10.0
    dde_plane_distance: float = 3.0
    # finite-difference checks in `losses`
    grad_checks: int = 200
    grad_step: float = 1e-4

    def sampling(self, seed):
        return SamplingConfig(self.triplets_per_group, self.min_angle, self.min_distance, seed)

    def weights(self):
        return LossWeights(self.alpha, self.beta, self.gamma, self.delta)

    def to_dict(self):
        return asdict(self)


def load_config(path=None):
    """Config from a flat JSON object; unknown keys are rejected."""
    if path is None:
        return Config()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path}: {exc.msg} at byte {exc.pos}") from None
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    known = {f.name: f for f in fields(Config)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValidationError(f"unknown config keys {unknown}", field=unknown[0])
    kw = {}
    for name, value in data.items():
        default = known[name].default
        if value is None or isinstance(default, str):
            kw[name] = value
        elif isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(value, int):
                raise ValidationError(f"config key {name!r} must be an integer", field=name)
            kw[name] = value
        else:
            if not isinstance(value, (int, float)):
                raise ValidationError(f"config key {name!r} must be a number", field=name)
            kw[name] = float(value)
    try:
        cfg = Config(**kw)
        cfg.sampling(0)
        cfg.weights()
    except ValueError as exc:
        raise ValidationError(f"config: {exc}") from None
    if cfg.fit_method not in ("pca", "ransac"):
        raise ValidationError("fit_method must be 'pca' or 'ransac'", field="fit_method")
    return cfg
