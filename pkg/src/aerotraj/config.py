"""Pipeline configuration: a flat key = value text file plus CLI overrides
(flags win).  Unknown keys are rejected so typos cannot silently fall back
to defaults."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    rate: float = 25.0
    recording: str = "recording"
    figures: bool = True

    # geo-referenced bundle adjustment
    ba_lambda: float = 1.0
    ba_huber_px: float = 2.0
    ba_max_iterations: int = 100

    # per-frame localization
    ransac_max_iterations: int = 2000
    ransac_inlier_threshold_px: float = 3.0
    ransac_confidence: float = 0.999
    ransac_huber_px: float = 2.0
    ransac_refine_focal: bool = False
    pose_process_noise: float = 0.01
    pose_measurement_noise: float = 0.1
    rot_process_noise: float = 0.001
    rot_measurement_noise: float = 0.01

    # ground generation
    ground_density: float = 3.0
    ground_cell_size: float = 0.5
    ground_height_quantile: float = 0.1
    ground_height_band: float = 0.3
    ground_max_slope: float = 0.25
    ground_sor_neighbors: int = 16
    ground_sor_sigma: float = 2.0
    ground_degree: int = 3
    ground_control_spacing: float = 2.0
    ground_smoothing_weight: float = 0.1

    # tracking
    tracker_gate: float = 2.0
    tracker_category_penalty: float = 1.0
    tracker_min_hits: int = 3
    tracker_max_coast: int = 12
    tracker_min_track_length: int = 3
    tracker_sigma_meas: float = 0.05
    tracker_sigma_acc: float = 2.0
    tracker_yaw_window: int = 5

    # scenario mining
    ttc_threshold: float = 4.0
    ttc_pair_distance: float = 50.0
    pet_max: float = 10.0
    pet_zone_cell: float = 2.0
    parking_stop_speed: float = 0.2
    parking_stop_duration: float = 3.0
    switch_hysteresis: float = 0.15
    ttc_bin_width: float = 0.5
    pet_bin_width: float = 1.0
    parking_bin_width: float = 5.0

    # evaluation
    eval_gate: float = 2.0


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _parse_value(name: str, raw: str):
    f = _FIELDS[name]
    if f.type in ("bool", bool):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key {name!r}: cannot parse boolean from {raw!r}")
    try:
        if f.type in ("int", int):
            return int(raw)
        if f.type in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r}")
    return raw


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Config file (optional) + overrides; unknown keys are errors."""
    cfg = PipelineConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
                key, _, value = stripped.partition("=")
                key = key.strip()
                value = value.strip()
                if key not in _FIELDS:
                    raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
                setattr(cfg, key, _parse_value(key, value))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = _parse_value(key, value)
        setattr(cfg, key, value)
    return cfg


def config_echo(cfg: PipelineConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(PipelineConfig)}
