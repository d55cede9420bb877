"""Pipeline configuration: one home for every tunable parameter.

Defaults follow the operating values the pipeline was designed around:
RDP tolerance 0.5 m, segment validity thresholds (2 m length, 15 deg from
the radial axis), torso elevation gate 0.25 m, 0.4 s peak suppression
window, and 0.3 s minimum peak-to-peak time. Everything is overridable via
a TOML-style config file with [section] key = value lines.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace

DISTANCE_MODES = ("track_displacement", "doppler_integral")
PEAK_REFINE_MODES = ("none", "parabolic")


class ConfigError(ValueError):
    """Invalid configuration value or unreadable config file."""


@dataclass(frozen=True)
class DbscanConfig:
    eps: float = 0.4            # clustering radius, meters, in (x, y, z)
    min_pts: int = 3            # neighborhood size for a core point (self included)
    min_cluster_size: int = 5   # clusters smaller than this are pets/clutter
    merge_radius: float = 0.4   # detections closer than this are one object


@dataclass(frozen=True)
class TrackerConfig:
    gate: float = 1.0           # max association distance, meters
    sigma_a: float = 2.0        # process noise (white acceleration), m/s^2
    sigma_m: float = 0.15       # measurement noise, meters
    confirm_hits: int = 3       # consecutive hits before a track is confirmed
    kill_misses: int = 5        # consecutive misses before a track is dropped


@dataclass(frozen=True)
class SegmenterConfig:
    rdp_epsilon: float = 0.5    # polyline decimation tolerance, meters
    min_length: float = 2.0     # minimum valid segment length, meters
    max_angle_deg: float = 15.0  # maximum radial misalignment, degrees
    clinic_tol: float = 1.0     # endpoint tolerance for walkway matching, meters


@dataclass(frozen=True)
class GaitConfig:
    z_torso: float = 0.25       # torso elevation gate half-width, meters
    nms_window: float = 0.4     # centered peak-suppression window, seconds
    min_peak_gap: float = 0.3   # minimum peak-to-peak time, seconds
    max_step_len: float = 1.0   # outlier bound, meters
    max_step_time: float = 3.0  # outlier bound, seconds
    distance_mode: str = "track_displacement"
    peak_refine: str = "none"   # sub-sample peak timing: none | parabolic


@dataclass(frozen=True)
class ReportingConfig:
    heatmap_cell: float = 0.25  # occupancy grid cell size, meters


@dataclass(frozen=True)
class PipelineConfig:
    frame_rate: float = 10.0
    dbscan: DbscanConfig = field(default_factory=DbscanConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    gait: GaitConfig = field(default_factory=GaitConfig)
    reporting: ReportingConfig = field(default_factory=ReportingConfig)

    def validate(self) -> "PipelineConfig":
        positives = [
            ("frame_rate", self.frame_rate),
            ("dbscan.eps", self.dbscan.eps),
            ("dbscan.min_pts", self.dbscan.min_pts),
            ("dbscan.min_cluster_size", self.dbscan.min_cluster_size),
            ("dbscan.merge_radius", self.dbscan.merge_radius),
            ("tracker.gate", self.tracker.gate),
            ("tracker.sigma_a", self.tracker.sigma_a),
            ("tracker.sigma_m", self.tracker.sigma_m),
            ("tracker.confirm_hits", self.tracker.confirm_hits),
            ("tracker.kill_misses", self.tracker.kill_misses),
            ("segmenter.rdp_epsilon", self.segmenter.rdp_epsilon),
            ("segmenter.min_length", self.segmenter.min_length),
            ("segmenter.max_angle_deg", self.segmenter.max_angle_deg),
            ("segmenter.clinic_tol", self.segmenter.clinic_tol),
            ("gait.z_torso", self.gait.z_torso),
            ("gait.nms_window", self.gait.nms_window),
            ("gait.min_peak_gap", self.gait.min_peak_gap),
            ("gait.max_step_len", self.gait.max_step_len),
            ("gait.max_step_time", self.gait.max_step_time),
            ("reporting.heatmap_cell", self.reporting.heatmap_cell),
        ]
        for name, value in positives:
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not self.gait.min_peak_gap > self.gait.nms_window / 2:
            raise ConfigError(
                f"gait.min_peak_gap ({self.gait.min_peak_gap}) must exceed half the "
                f"suppression window ({self.gait.nms_window / 2})"
            )
        if self.gait.nms_window < 2.0 / self.frame_rate:
            raise ConfigError(
                f"gait.nms_window ({self.gait.nms_window}) must cover at least two "
                f"frame intervals at {self.frame_rate} fps"
            )
        if self.gait.distance_mode not in DISTANCE_MODES:
            raise ConfigError(
                f"gait.distance_mode must be one of {DISTANCE_MODES}, "
                f"got {self.gait.distance_mode!r}"
            )
        if self.gait.peak_refine not in PEAK_REFINE_MODES:
            raise ConfigError(
                f"gait.peak_refine must be one of {PEAK_REFINE_MODES}, "
                f"got {self.gait.peak_refine!r}"
            )
        return self


_SECTION_TYPES = {
    "dbscan": DbscanConfig,
    "tracker": TrackerConfig,
    "segmenter": SegmenterConfig,
    "gait": GaitConfig,
    "reporting": ReportingConfig,
}


def _coerce(name: str, raw: str, target_type: type):
    text = raw.strip().strip('"').strip("'")
    try:
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: expected a number, got {raw!r}") from None
    return text


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    """Load a config file, or return defaults when path is None.

    The file is TOML-style: [section] headers with key = value lines;
    strings may be bare or quoted. Unknown sections or keys are errors so
    typos never silently fall back to defaults.
    """
    cfg = PipelineConfig()
    if path is None:
        return cfg.validate()

    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {os.fspath(path)!r}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    sections: dict[str, object] = {}
    for section in parser.sections():
        if section == "pipeline":
            for key, raw in parser.items(section):
                if key != "frame_rate":
                    raise ConfigError(f"unknown key [pipeline] {key}")
                cfg = replace(cfg, frame_rate=_coerce("frame_rate", raw, float))
            continue
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown section [{section}]")
        section_type = _SECTION_TYPES[section]
        known = {f.name: f.type for f in fields(section_type)}
        kwargs = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key [{section}] {key}")
            ftype = {"float": float, "int": int, "str": str}[known[key]]
            kwargs[key] = _coerce(f"{section}.{key}", raw, ftype)
        sections[section] = section_type(**kwargs)

    for name, value in sections.items():
        cfg = replace(cfg, **{name: value})
    return cfg.validate()


def apply_overrides(cfg: PipelineConfig, overrides: dict[str, float | str]) -> PipelineConfig:
    """Apply dotted-name overrides such as {'segmenter.rdp_epsilon': 0.4}."""
    for dotted, value in overrides.items():
        if value is None:
            continue
        section_name, _, key = dotted.partition(".")
        if not key:
            cfg = replace(cfg, **{section_name: value})
            continue
        section = getattr(cfg, section_name)
        cfg = replace(cfg, **{section_name: replace(section, **{key: value})})
    return cfg.validate()


def config_as_dict(cfg: PipelineConfig) -> dict:
    out: dict = {"frame_rate": cfg.frame_rate}
    for name, section_type in _SECTION_TYPES.items():
        section = getattr(cfg, name)
        out[name] = {f.name: getattr(section, f.name) for f in fields(section_type)}
    return out
