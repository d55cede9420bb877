"""Person detection and tracking over the frame stream.

Per frame: density clustering of the 3D point cloud yields detections,
minimum-cost assignment associates detections to live tracks, and a
constant-velocity Kalman filter in the x-y plane carries each track's
position. Tracks confirm after a run of consecutive hits and die after a
run of consecutive misses.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import DbscanConfig, PipelineConfig, TrackerConfig
from .pointcloud import RadarPoint, Session

NOISE = -1
_FORBIDDEN = 1e12  # cost surrogate for pairs outside the gate


@dataclass(frozen=True)
class Detection:
    """One clustered object in a frame: centroid of its member points."""

    t: float
    centroid_x: float
    centroid_y: float
    points: tuple[RadarPoint, ...]


class TrackStatus(Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DEAD = "dead"


@dataclass(frozen=True)
class TrackState:
    """Filtered position at time t plus the point subset assigned that frame."""

    t: float
    x: float
    y: float
    points: tuple[RadarPoint, ...]


@dataclass
class Track:
    track_id: int
    states: list[TrackState] = field(default_factory=list)
    status: TrackStatus = TrackStatus.TENTATIVE

    @property
    def t_start(self) -> float:
        return self.states[0].t

    @property
    def t_end(self) -> float:
        return self.states[-1].t


def dbscan_labels(xyz: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density-cluster points in 3D; return a label per point (-1 = noise).

    Core points have at least min_pts neighbors within eps (themselves
    included, distances inclusive of eps). Clusters are the connected
    components of core points; border points join the cluster of their
    nearest core point, ties broken by lower point index, which makes the
    labeling independent of input order up to renaming. Cluster ids are
    assigned in order of each cluster's smallest core index.

    Neighbor search uses an eps-sized grid hash, so typical frames stay
    near O(n) rather than O(n^2).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ValueError(f"min_pts must be >= 1, got {min_pts}")
    n = len(xyz)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels

    xyz = np.asarray(xyz, dtype=float)
    cells: dict[tuple[int, int, int], list[int]] = {}
    keys = np.floor(xyz / eps).astype(int)
    for i, key in enumerate(map(tuple, keys)):
        cells.setdefault(key, []).append(i)

    eps2 = eps * eps

    def neighbors(i: int) -> list[int]:
        cx, cy, cz = keys[i]
        out = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    bucket = cells.get((cx + dx, cy + dy, cz + dz))
                    if not bucket:
                        continue
                    for j in bucket:
                        d = xyz[i] - xyz[j]
                        if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= eps2:
                            out.append(j)
        return out

    neighborhoods = [neighbors(i) for i in range(n)]
    core = np.array([len(nb) >= min_pts for nb in neighborhoods], dtype=bool)

    # Connected components over core points.
    cluster_id = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != NOISE:
            continue
        queue = deque([seed])
        labels[seed] = cluster_id
        while queue:
            i = queue.popleft()
            for j in neighborhoods[i]:
                if core[j] and labels[j] == NOISE:
                    labels[j] = cluster_id
                    queue.append(j)
        cluster_id += 1

    # Border points: nearest core neighbor, ties to the lower core index.
    for i in range(n):
        if core[i] or labels[i] != NOISE:
            continue
        best = None
        for j in neighborhoods[i]:
            if not core[j]:
                continue
            d = xyz[i] - xyz[j]
            dist2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
            if best is None or dist2 < best[0] or (dist2 == best[0] and j < best[1]):
                best = (dist2, j)
        if best is not None:
            labels[i] = labels[best[1]]
    return labels


def dbscan(
    points: tuple[RadarPoint, ...] | list[RadarPoint],
    eps: float,
    min_pts: int,
    min_cluster_size: int = 1,
    t: float = 0.0,
) -> list[Detection]:
    """Cluster a frame's points into detections.

    Noise points are discarded; clusters with fewer than min_cluster_size
    points are dropped as pets/clutter. Detections are returned in cluster
    label order with centroids over member (x, y).
    """
    if not points:
        return []
    xyz = np.array([(p.x, p.y, p.z) for p in points], dtype=float)
    labels = dbscan_labels(xyz, eps, min_pts)
    detections = []
    for cid in range(labels.max() + 1):
        members = np.flatnonzero(labels == cid)
        if len(members) < min_cluster_size:
            continue
        cx = float(np.mean(xyz[members, 0]))
        cy = float(np.mean(xyz[members, 1]))
        detections.append(
            Detection(
                t=t,
                centroid_x=cx,
                centroid_y=cy,
                points=tuple(points[i] for i in members),
            )
        )
    return detections


def merge_close_detections(
    detections: list[Detection], merge_radius: float
) -> list[Detection]:
    """Fuse detections whose centroids sit within merge_radius of each other.

    A person sometimes splits into two density clusters (sparse elevation
    coverage); two real people are never that close, so single-link merging
    of near-coincident centroids repairs the split before association.
    """
    n = len(detections)
    if n < 2:
        return detections
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            a, b = detections[i], detections[j]
            if math.hypot(a.centroid_x - b.centroid_x, a.centroid_y - b.centroid_y) <= merge_radius:
                parent[find(j)] = find(i)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    if len(groups) == n:
        return detections

    merged = []
    for root in sorted(groups, key=lambda r: min(groups[r])):
        members = sorted(groups[root])
        if len(members) == 1:
            merged.append(detections[members[0]])
            continue
        points = tuple(p for i in members for p in detections[i].points)
        cx = math.fsum(p.x for p in points) / len(points)
        cy = math.fsum(p.y for p in points) / len(points)
        merged.append(
            Detection(
                t=detections[members[0]].t, centroid_x=cx, centroid_y=cy, points=points
            )
        )
    return merged


def min_cost_assignment(cost: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Minimum-total-cost one-to-one assignment on an arbitrary cost matrix.

    Returns the matched (row, col) pairs and their total cost. Rectangular
    matrices match min(rows, cols) pairs.
    """
    cost = np.atleast_2d(np.asarray(cost, dtype=float))
    if cost.size == 0:
        return [], 0.0
    rows, cols = linear_sum_assignment(cost)
    pairs = list(zip(rows.tolist(), cols.tolist()))
    return pairs, float(cost[rows, cols].sum())


def associate(
    predicted: list[tuple[float, float]],
    detections: list[Detection],
    gate: float,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Assign detections to predicted track positions.

    Cost is Euclidean distance; pairs farther than the gate are forbidden.
    Returns (matches, unmatched_track_indices, unmatched_detection_indices).
    """
    n, m = len(predicted), len(detections)
    if n == 0 or m == 0:
        return [], list(range(n)), list(range(m))
    cost = np.empty((n, m), dtype=float)
    for i, (px, py) in enumerate(predicted):
        for j, det in enumerate(detections):
            cost[i, j] = math.hypot(px - det.centroid_x, py - det.centroid_y)
    gated = np.where(cost > gate, _FORBIDDEN, cost)
    pairs, _ = min_cost_assignment(gated)
    matches = [(i, j) for i, j in pairs if cost[i, j] <= gate]
    matched_tracks = {i for i, _ in matches}
    matched_dets = {j for _, j in matches}
    unmatched_tracks = [i for i in range(n) if i not in matched_tracks]
    unmatched_dets = [j for j in range(m) if j not in matched_dets]
    return matches, unmatched_tracks, unmatched_dets


class KalmanCV:
    """Constant-velocity Kalman filter over state (x, y, vx, vy).

    Process noise is the white-acceleration model scaled by sigma_a; the
    measurement is the detection centroid with isotropic noise sigma_m.
    """

    def __init__(
        self,
        x: float,
        y: float,
        sigma_a: float,
        sigma_m: float,
        v0_sigma: float = 1.5,
    ):
        self.sigma_a = sigma_a
        self.sigma_m = sigma_m
        self.state = np.array([x, y, 0.0, 0.0], dtype=float)
        self.cov = np.diag([sigma_m**2, sigma_m**2, v0_sigma**2, v0_sigma**2])

    @property
    def x(self) -> float:
        return float(self.state[0])

    @property
    def y(self) -> float:
        return float(self.state[1])

    def predict(self, dt: float) -> None:
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        F = np.array(
            [[1, 0, dt, 0],
             [0, 1, 0, dt],
             [0, 0, 1, 0],
             [0, 0, 0, 1]],
            dtype=float,
        )
        g = np.array([[0.5 * dt * dt, 0], [0, 0.5 * dt * dt], [dt, 0], [0, dt]])
        Q = self.sigma_a**2 * (g @ g.T)
        self.state = F @ self.state
        self.cov = F @ self.cov @ F.T + Q
        self.cov = 0.5 * (self.cov + self.cov.T)

    def update(self, zx: float, zy: float) -> None:
        H = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=float)
        R = self.sigma_m**2 * np.eye(2)
        z = np.array([zx, zy], dtype=float)
        innovation = z - H @ self.state
        S = H @ self.cov @ H.T + R
        K = self.cov @ H.T @ np.linalg.inv(S)
        self.state = self.state + K @ innovation
        # Joseph form keeps the covariance symmetric positive-definite.
        ikh = np.eye(4) - K @ H
        self.cov = ikh @ self.cov @ ikh.T + K @ R @ K.T
        self.cov = 0.5 * (self.cov + self.cov.T)


def kalman_step(kf: KalmanCV, detection: Detection | None, dt: float) -> tuple[float, float]:
    """Advance one frame: predict, then update if a detection is present."""
    kf.predict(dt)
    if detection is not None:
        kf.update(detection.centroid_x, detection.centroid_y)
    return kf.x, kf.y


@dataclass
class _LiveTrack:
    track_id: int
    kf: KalmanCV
    track: Track
    consecutive_hits: int = 1
    consecutive_misses: int = 0
    ever_confirmed: bool = False


def track_frames(session: Session, cfg: PipelineConfig | None = None) -> list[Track]:
    """Run detection + association + filtering over a whole session.

    Returns every track that reached confirmed status, ordered by track id;
    a track's final status is CONFIRMED if it was still alive at the end of
    the session, DEAD otherwise. Deterministic for a given (session, cfg).
    """
    cfg = cfg or PipelineConfig()
    db: DbscanConfig = cfg.dbscan
    tk: TrackerConfig = cfg.tracker

    live: list[_LiveTrack] = []
    finished: list[Track] = []
    next_id = 0
    prev_t: float | None = None

    def retire(lt: _LiveTrack, status: TrackStatus) -> None:
        if lt.ever_confirmed:
            lt.track.status = status
            finished.append(lt.track)

    for frame in session.frames:
        dt = None if prev_t is None else frame.t - prev_t
        prev_t = frame.t
        if dt is not None:
            for lt in live:
                lt.kf.predict(dt)

        detections = dbscan(
            frame.points, db.eps, db.min_pts, db.min_cluster_size, t=frame.t
        )
        detections = merge_close_detections(detections, db.merge_radius)
        predicted = [(lt.kf.x, lt.kf.y) for lt in live]
        matches, unmatched_tracks, unmatched_dets = associate(
            predicted, detections, tk.gate
        )

        for ti, dj in matches:
            lt = live[ti]
            det = detections[dj]
            lt.kf.update(det.centroid_x, det.centroid_y)
            lt.track.states.append(
                TrackState(t=frame.t, x=lt.kf.x, y=lt.kf.y, points=det.points)
            )
            lt.consecutive_hits += 1
            lt.consecutive_misses = 0
            if not lt.ever_confirmed and lt.consecutive_hits >= tk.confirm_hits:
                lt.ever_confirmed = True
                lt.track.status = TrackStatus.CONFIRMED

        still_live = [live[i] for i, _ in matches]
        for ti in unmatched_tracks:
            lt = live[ti]
            lt.consecutive_misses += 1
            lt.consecutive_hits = 0
            if lt.consecutive_misses >= tk.kill_misses:
                retire(lt, TrackStatus.DEAD)
            else:
                still_live.append(lt)
        still_live.sort(key=lambda lt: lt.track_id)
        live = still_live

        for dj in unmatched_dets:
            det = detections[dj]
            kf = KalmanCV(det.centroid_x, det.centroid_y, tk.sigma_a, tk.sigma_m)
            track = Track(track_id=next_id)
            track.states.append(
                TrackState(t=frame.t, x=kf.x, y=kf.y, points=det.points)
            )
            live.append(_LiveTrack(track_id=next_id, kf=kf, track=track))
            if tk.confirm_hits <= 1:
                live[-1].ever_confirmed = True
                track.status = TrackStatus.CONFIRMED
            next_id += 1

    for lt in live:
        retire(lt, TrackStatus.CONFIRMED)
    finished.sort(key=lambda tr: tr.track_id)
    return finished
