"""End-to-end per-session processing: frames to walk records.

Home mode keeps the valid radially-aligned segments, suppressing any
segment whose time span overlaps another confirmed track (step length is
only reported when a single person is being tracked). Clinic mode matches
segments to the logged walkway passes instead and reports one record per
logged walk, detected or not.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .config import PipelineConfig
from .gaitmetrics import WalkResult, analyze_segment, direction_sign
from .pointcloud import Session
from .segmenter import (
    LinearSegment,
    WalkLog,
    classify,
    match_clinic_walks,
    split_track,
)
from .tracker import Track, track_frames

MODES = ("home", "clinic")


@dataclass(frozen=True)
class WalkRecord:
    """One reportable walk: the JSON-facing record of a measurement."""

    track_id: int | None
    seg_index: int | None
    t_start: float | None
    direction: str | None           # "approach" | "recede"
    n_peaks: int
    steps: tuple[tuple[float, float], ...]  # (length_m, time_s)
    avg_step_len_m: float | None
    walk_index: int | None = None   # clinic only
    walk_type: str | None = None
    matched: bool | None = None
    reference_step_length: float | None = None

    def as_dict(self) -> dict:
        out = {
            "track_id": self.track_id,
            "seg_index": self.seg_index,
            "t_start": None if self.t_start is None else round(self.t_start, 6),
            "direction": self.direction,
            "n_peaks": self.n_peaks,
            "steps": [
                {"len_m": round(length, 6), "time_s": round(time, 6)}
                for length, time in self.steps
            ],
            "avg_step_len_m": (
                None if self.avg_step_len_m is None else round(self.avg_step_len_m, 6)
            ),
        }
        if self.walk_index is not None:
            out["walk_index"] = self.walk_index
            out["walk_type"] = self.walk_type
            out["matched"] = self.matched
            out["reference_step_length"] = self.reference_step_length
        return out


@dataclass
class SessionResult:
    session: Session
    tracks: list[Track]
    segments: list[LinearSegment]
    walks: list[WalkRecord] = field(default_factory=list)
    suppressed_segments: int = 0

    @property
    def n_measured(self) -> int:
        return sum(1 for w in self.walks if w.avg_step_len_m is not None)


def _record_from_result(result: WalkResult) -> WalkRecord:
    seg = result.segment
    return WalkRecord(
        track_id=seg.parent_track,
        seg_index=seg.seg_index,
        t_start=seg.t_start,
        direction="approach" if direction_sign(seg) < 0 else "recede",
        n_peaks=result.n_peaks,
        steps=tuple((s.step_length, s.step_time) for s in result.steps),
        avg_step_len_m=result.avg_step_length,
    )


def _overlaps_other_track(seg: LinearSegment, tracks: list[Track]) -> bool:
    for track in tracks:
        if track.track_id == seg.parent_track:
            continue
        if track.t_start <= seg.t_end and seg.t_start <= track.t_end:
            return True
    return False


def process_session(
    session: Session,
    cfg: PipelineConfig,
    mode: str = "home",
    walklog: WalkLog | None = None,
) -> SessionResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "clinic" and walklog is None:
        raise ValueError("clinic mode requires a walk log")

    tracks = track_frames(session, cfg)
    segments: list[LinearSegment] = []
    for track in tracks:
        for seg in split_track(track, cfg.segmenter.rdp_epsilon):
            seg.valid = classify(
                seg, cfg.segmenter.min_length, cfg.segmenter.max_angle_deg
            )
            segments.append(seg)

    result = SessionResult(session=session, tracks=tracks, segments=segments)

    if mode == "clinic":
        matched = match_clinic_walks(segments, walklog, cfg.segmenter.clinic_tol)
        for entry, seg in matched.matches:
            record = _record_from_result(analyze_segment(seg, cfg.gait))
            result.walks.append(
                replace(
                    record,
                    walk_index=entry.walk_index,
                    walk_type=entry.walk_type,
                    matched=True,
                    reference_step_length=entry.reference_step_length,
                )
            )
        for entry in matched.unmatched:
            result.walks.append(
                WalkRecord(
                    track_id=None,
                    seg_index=None,
                    t_start=None,
                    direction=None,
                    n_peaks=0,
                    steps=(),
                    avg_step_len_m=None,
                    walk_index=entry.walk_index,
                    walk_type=entry.walk_type,
                    matched=False,
                    reference_step_length=entry.reference_step_length,
                )
            )
        result.walks.sort(
            key=lambda w: (w.walk_index, w.t_start if w.t_start is not None else -1.0)
        )
        return result

    for seg in segments:
        if not seg.valid:
            continue
        if _overlaps_other_track(seg, tracks):
            result.suppressed_segments += 1
            continue
        result.walks.append(_record_from_result(analyze_segment(seg, cfg.gait)))
    result.walks.sort(key=lambda w: (w.t_start, w.track_id, w.seg_index))
    return result
