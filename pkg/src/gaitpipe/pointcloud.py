"""Radar frame data model and the JSONL session file format.

A session is a time-ordered stream of frames; each frame is the set of
moving points the radar reported at one instant. Files are one JSON object
per line: a header line followed by one line per frame, all numeric fields
serialized as fixed-point text with 6 fractional digits so that a written
session reads back bit-for-bit.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

FORMAT_NAME = "gaitpipe-frames"
FORMAT_VERSION = 1

SITES = ("clinic", "home")


class SessionFormatError(ValueError):
    """Malformed session file. Carries the 1-based physical line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonMonotonicTimeError(SessionFormatError):
    """Frame timestamps must strictly increase within a session."""


class RadarPoint(NamedTuple):
    """One moving-point detection: position in meters, Doppler speed in m/s.

    x is lateral (radar at origin), y is range into the room, z is elevation
    relative to the radar mount. Negative s means the point approaches the
    radar.
    """

    x: float
    y: float
    z: float
    s: float


@dataclass(frozen=True)
class Frame:
    """All points reported at time t (seconds since session start)."""

    t: float
    points: tuple[RadarPoint, ...] = ()


@dataclass(frozen=True)
class Session:
    """An ordered frame stream plus capture metadata.

    Immutable after load; safe to share read-only across threads.
    """

    frame_rate: float
    site: str
    room_label: str
    device_id: str
    frames: tuple[Frame, ...] = ()
    dropped_points: int = 0  # points rejected at ingest (non-finite or y < 0)

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")
        if self.site not in SITES:
            raise ValueError(f"site must be one of {SITES}, got {self.site!r}")

    def __iter__(self) -> Iterator[Frame]:
        return iter(self.frames)

    @property
    def duration(self) -> float:
        return self.frames[-1].t if self.frames else 0.0


def _num(value: float) -> float:
    """Quantize to the 6-decimal precision used on disk."""
    return float(f"{value:.6f}")


def quantize_point(x: float, y: float, z: float, s: float) -> RadarPoint:
    return RadarPoint(_num(x), _num(y), _num(z), _num(s))


def _parse_point(raw: object, line: int) -> RadarPoint | None:
    """Validate one [x, y, z, s] entry; return None if it should be dropped."""
    if not isinstance(raw, list) or len(raw) != 4:
        raise SessionFormatError(
            f"point must be a 4-element [x, y, z, s] array, got {raw!r}", line
        )
    try:
        x, y, z, s = (float(v) for v in raw)
    except (TypeError, ValueError):
        raise SessionFormatError(f"non-numeric point entry {raw!r}", line) from None
    if not all(math.isfinite(v) for v in (x, y, z, s)):
        return None
    if y < 0:
        # Spurious returns behind the sensor plane are expected from CFAR
        # output; drop rather than fail the whole session.
        return None
    return RadarPoint(x, y, z, s)


def read_session(path: str | os.PathLike) -> Session:
    """Read a JSONL session file.

    Raises SessionFormatError (with the offending line number) for schema
    violations and NonMonotonicTimeError when frame times do not strictly
    increase. I/O problems propagate as OSError.
    """
    frames: list[Frame] = []
    dropped = 0
    header: dict | None = None
    prev_t: float | None = None

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SessionFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise SessionFormatError("expected a JSON object", lineno)

            if header is None:
                if obj.get("format") != FORMAT_NAME:
                    raise SessionFormatError(
                        f"first line must be a header with format={FORMAT_NAME!r}", lineno
                    )
                if obj.get("version") != FORMAT_VERSION:
                    raise SessionFormatError(
                        f"unsupported version {obj.get('version')!r}", lineno
                    )
                for key in ("frame_rate", "site", "room", "device"):
                    if key not in obj:
                        raise SessionFormatError(f"header missing {key!r}", lineno)
                header = obj
                continue

            if "t" not in obj or "pts" not in obj:
                raise SessionFormatError("frame line must have 't' and 'pts'", lineno)
            try:
                t = float(obj["t"])
            except (TypeError, ValueError):
                raise SessionFormatError(f"non-numeric t {obj['t']!r}", lineno) from None
            if not math.isfinite(t) or t < 0:
                raise SessionFormatError(f"t must be finite and >= 0, got {t}", lineno)
            if prev_t is not None and t <= prev_t:
                raise NonMonotonicTimeError(
                    f"frame time {t} does not increase past {prev_t}", lineno
                )
            prev_t = t

            pts_raw = obj["pts"]
            if not isinstance(pts_raw, list):
                raise SessionFormatError("'pts' must be an array", lineno)
            points = []
            for raw in pts_raw:
                pt = _parse_point(raw, lineno)
                if pt is None:
                    dropped += 1
                else:
                    points.append(pt)
            frames.append(Frame(t=t, points=tuple(points)))

    if header is None:
        raise SessionFormatError("empty file: header line required", 1)

    try:
        frame_rate = float(header["frame_rate"])
    except (TypeError, ValueError):
        raise SessionFormatError(f"non-numeric frame_rate {header['frame_rate']!r}", 1) from None

    return Session(
        frame_rate=frame_rate,
        site=str(header["site"]),
        room_label=str(header["room"]),
        device_id=str(header["device"]),
        frames=tuple(frames),
        dropped_points=dropped,
    )


def _frame_line(frame: Frame) -> str:
    pts = ",".join(
        f"[{p.x:.6f},{p.y:.6f},{p.z:.6f},{p.s:.6f}]" for p in frame.points
    )
    return f'{{"t":{frame.t:.6f},"pts":[{pts}]}}'


def write_session(session: Session, path: str | os.PathLike) -> None:
    """Write a session file atomically (temp file + rename)."""
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "frame_rate": session.frame_rate,
        "site": session.site,
        "room": session.room_label,
        "device": session.device_id,
    }
    lines = [json.dumps(header)]
    lines.extend(_frame_line(frame) for frame in session.frames)
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_session(
    frame_rate: float,
    site: str,
    room_label: str,
    device_id: str,
    frames: Iterable[tuple[float, Iterable[tuple[float, float, float, float]]]],
) -> Session:
    """Assemble a session from raw (t, points) tuples, quantized to disk precision."""
    out = []
    for t, pts in frames:
        out.append(Frame(t=_num(t), points=tuple(quantize_point(*p) for p in pts)))
    return Session(
        frame_rate=frame_rate,
        site=site,
        room_label=room_label,
        device_id=device_id,
        frames=tuple(out),
    )
