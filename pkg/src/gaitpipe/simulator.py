"""Synthetic gait-scene generator with exact ground truth.

Walkers move along waypoint paths with a cyclic forward-speed profile
(v = base_speed + speed_amp * sin(2*pi*t/step_period + phase), one crest
per step) attenuated by smoothstep ramps at the start and end of the walk.
Each radar frame scatters points over the torso, arms, and legs, with
Doppler equal to the radial projection of each scatterer's velocity plus
noise; arms can swing counter-phase so their Doppler crosses zero and
flips sign, exercising the torso sign gate. Pets are small, slow,
low-elevation scatterer groups.

Everything is driven by one seeded generator, so a scene spec plus seed
reproduces its session byte for byte. The nominal step length of a walker
is base_speed * step_period: over full cycles the sinusoid integrates to
zero, so the distance between consecutive speed crests is exactly that.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .pointcloud import Session, atomic_write_text, build_session
from .segmenter import WalkEntry, WalkLog

TRUTH_FORMAT = "gaitpipe-truth"
MIN_DOPPLER = 0.05  # static-clutter model: slower returns are not reported

WALKWAY_START = (0.0, 6.03)
WALKWAY_END = (0.0, 2.03)


@dataclass(frozen=True)
class WalkerSpec:
    walker_id: str
    path: tuple[tuple[float, float], ...]
    base_speed: float = 1.0       # m/s
    step_period: float = 0.55     # s, one speed crest per step
    speed_amp: float = 0.25       # m/s oscillation amplitude
    phase: float = -math.pi / 2   # speed starts at its trough
    start_time: float = 1.0       # s into the session
    ramp_time: float | None = None   # smoothstep ramp duration; default step_period/2
    torso_half_band: float = 0.2  # torso scatterer |z| spread, meters
    points_torso: int = 8
    points_arms: int = 4
    points_legs: int = 6
    arm_counterphase: bool = True
    arm_swing_amp: float | None = None  # m/s; default 1.4 * base_speed
    noise_pos: float = 0.08       # m
    noise_doppler: float = 0.12   # m/s
    dropout: float = 0.02         # per-point drop probability

    def __post_init__(self):
        if len(self.path) < 2:
            raise ValueError("walker path needs at least 2 waypoints")
        if not self.base_speed > self.speed_amp >= 0:
            raise ValueError(
                "need base_speed > speed_amp >= 0 so the torso never reverses"
            )
        if self.base_speed * self.step_period > 1.0 + 1e-9:
            raise ValueError("nominal step length base_speed*step_period exceeds 1 m")
        if self.start_time < 0:
            raise ValueError("start_time must be >= 0")

    @property
    def true_step_length(self) -> float:
        return self.base_speed * self.step_period


@dataclass(frozen=True)
class PetSpec:
    center: tuple[float, float]
    wander_radius: float = 0.4
    speed: float = 0.25
    z_low: float = -1.05
    z_high: float = -0.85
    n_points: int = 3
    phase: float = 0.0
    noise_doppler: float = 0.1


@dataclass(frozen=True)
class SceneSpec:
    name: str
    site: str
    duration: float
    seed: int
    walkers: tuple[WalkerSpec, ...] = ()
    pets: tuple[PetSpec, ...] = ()
    frame_rate: float = 10.0
    room_label: str = "room"
    device_id: str = "SIM"
    walklog: WalkLog | None = None

    def __post_init__(self):
        if self.duration <= 0 or self.frame_rate <= 0:
            raise ValueError("duration and frame_rate must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class TruthSample:
    t: float
    x: float
    y: float
    speed: float
    is_step_peak: bool


@dataclass(frozen=True)
class WalkerTruth:
    walker_id: str
    true_step_length: float
    base_speed: float
    step_period: float
    t_start: float
    t_end: float
    step_times: tuple[float, ...]
    samples: tuple[TruthSample, ...]


@dataclass(frozen=True)
class GroundTruth:
    scene_name: str
    seed: int
    walkers: tuple[WalkerTruth, ...]


def _smoothstep(u: float) -> float:
    u = min(1.0, max(0.0, u))
    return u * u * (3.0 - 2.0 * u)


class _WalkKinematics:
    """Arc-length motion of one walker along its path.

    Cruise-phase positions come from the closed-form integral of the speed
    profile; the ramp phases are integrated on a fine grid.
    """

    _DT = 0.002

    def __init__(self, spec: WalkerSpec):
        self.spec = spec
        pts = np.asarray(spec.path, dtype=float)
        seg_lengths = np.hypot(*(pts[1:] - pts[:-1]).T)
        self.cum = np.concatenate([[0.0], np.cumsum(seg_lengths)])
        self.pts = pts
        self.length = float(self.cum[-1])

        if spec.ramp_time is not None:
            self.t_ramp = spec.ramp_time
        else:
            # Reaching cruise takes longer the faster the walk (~1.8 m/s^2),
            # never less than half a step.
            self.t_ramp = max(spec.step_period / 2, spec.base_speed / 1.8)
        self.omega = 2.0 * math.pi / spec.step_period
        v0, amp, phi = spec.base_speed, spec.speed_amp, spec.phase

        d_out = v0 * self.t_ramp / 2
        if self.length <= v0 * self.t_ramp + d_out:
            raise ValueError("path too short for the ramp profile")

        # Ramp-in on a fine grid.
        grid_in = np.arange(0.0, self.t_ramp + self._DT, self._DT)
        env = np.array([_smoothstep(u / self.t_ramp) for u in grid_in])
        v_in = env * (v0 + amp * np.sin(self.omega * grid_in + phi))
        s_in = np.concatenate([[0.0], np.cumsum((v_in[1:] + v_in[:-1]) / 2 * np.diff(grid_in))])
        self._grid_in_t, self._grid_in_s, self._grid_in_v = grid_in, s_in, v_in
        self.s_ramp_in = float(s_in[-1])

        # Cruise: closed form, solve for the ramp-out trigger.
        self._cos_ref = math.cos(self.omega * self.t_ramp + phi)
        target = self.length - d_out
        tau1 = self.t_ramp + (target - self.s_ramp_in) / v0
        for _ in range(3):  # Newton refinement against the oscillation term
            err = self._cruise_s(tau1) - target
            tau1 -= err / max(v0 - amp, 1e-6)
        self.tau1 = max(tau1, self.t_ramp)

        # Ramp-out on a fine grid.
        grid_out = np.arange(0.0, self.t_ramp + self._DT, self._DT)
        env = np.array([1.0 - _smoothstep(u / self.t_ramp) for u in grid_out])
        v_out = env * (
            v0 + amp * np.sin(self.omega * (self.tau1 + grid_out) + phi)
        )
        s_out = self._cruise_s(self.tau1) + np.concatenate(
            [[0.0], np.cumsum((v_out[1:] + v_out[:-1]) / 2 * np.diff(grid_out))]
        )
        self._grid_out_t, self._grid_out_s, self._grid_out_v = grid_out, s_out, v_out

        self.tau_end = self.tau1 + self.t_ramp
        self.t_start = spec.start_time
        self.t_end = spec.start_time + self.tau_end

        # Step events: speed crests of the underlying cycle during the walk.
        crest0 = (math.pi / 2 - phi) / self.omega
        while crest0 < 0:
            crest0 += spec.step_period
        self.step_times = []
        k = 0
        while True:
            tc = crest0 + k * spec.step_period
            if tc > self.tau_end:
                break
            self.step_times.append(spec.start_time + tc)
            k += 1

    def _cruise_s(self, tau: float) -> float:
        spec = self.spec
        return (
            self.s_ramp_in
            + spec.base_speed * (tau - self.t_ramp)
            - (spec.speed_amp / self.omega)
            * (math.cos(self.omega * tau + spec.phase) - self._cos_ref)
        )

    def active(self, t: float) -> bool:
        return self.t_start <= t <= self.t_end

    def arc_state(self, t: float) -> tuple[float, float]:
        """(arc position, instantaneous speed) at session time t."""
        tau = t - self.t_start
        spec = self.spec
        base = spec.base_speed + spec.speed_amp * math.sin(self.omega * tau + spec.phase)
        if tau <= self.t_ramp:
            s = float(np.interp(tau, self._grid_in_t, self._grid_in_s))
            v = _smoothstep(tau / self.t_ramp) * base
        elif tau <= self.tau1:
            s = self._cruise_s(tau)
            v = base
        else:
            u = tau - self.tau1
            s = float(np.interp(u, self._grid_out_t, self._grid_out_s))
            v = (1.0 - _smoothstep(u / self.t_ramp)) * base
        return min(s, self.length), v

    def position(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        """(xy point, unit direction) at arc position s."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.pts) - 2)
        seg = self.pts[i + 1] - self.pts[i]
        seg_len = float(np.hypot(*seg))
        u = 0.0 if seg_len == 0 else (s - self.cum[i]) / seg_len
        return self.pts[i] + u * seg, seg / max(seg_len, 1e-12)


def _radial_doppler(points: np.ndarray, velocity: np.ndarray) -> np.ndarray:
    """Radial projection of a shared velocity onto each 3D point's unit vector."""
    r = np.linalg.norm(points, axis=1)
    r = np.where(r < 1e-9, 1e-9, r)
    return (points @ velocity) / r


def _scatter_group(
    rng: np.random.Generator,
    center: np.ndarray,
    n: int,
    pos_sigma: float,
    z_low: float,
    z_high: float,
    velocity_xy: np.ndarray,
    noise_doppler: float,
    dropout: float,
) -> list[tuple[float, float, float, float]]:
    if n <= 0:
        return []
    xy = center + rng.normal(0.0, pos_sigma, size=(n, 2))
    z = rng.uniform(z_low, z_high, size=n)
    pts3 = np.column_stack([xy, z])
    vel3 = np.array([velocity_xy[0], velocity_xy[1], 0.0])
    doppler = _radial_doppler(pts3, vel3) + rng.normal(0.0, noise_doppler, size=n)
    keep = rng.random(n) >= dropout
    out = []
    for i in range(n):
        if keep[i] and abs(doppler[i]) >= MIN_DOPPLER and xy[i, 1] >= 0:
            out.append((float(xy[i, 0]), float(xy[i, 1]), float(z[i]), float(doppler[i])))
    return out


def simulate(scene: SceneSpec) -> tuple[Session, GroundTruth]:
    """Generate the session plus per-walker ground truth for a scene."""
    rng = np.random.default_rng(scene.seed)
    kinematics = [_WalkKinematics(w) for w in scene.walkers]

    n_frames = int(round(scene.duration * scene.frame_rate))
    frame_times = [k / scene.frame_rate for k in range(n_frames)]

    truth_samples: list[list[TruthSample]] = [[] for _ in scene.walkers]
    peak_flags: list[set[int]] = []
    for kin in kinematics:
        flags = set()
        for tc in kin.step_times:
            idx = int(round(tc * scene.frame_rate))
            if 0 <= idx < n_frames:
                flags.add(idx)
        peak_flags.append(flags)

    frames = []
    for idx, t in enumerate(frame_times):
        pts: list[tuple[float, float, float, float]] = []
        for w_i, (spec, kin) in enumerate(zip(scene.walkers, kinematics)):
            if not kin.active(t):
                continue
            s, speed = kin.arc_state(t)
            center, direction = kin.position(s)
            velocity = speed * direction
            truth_samples[w_i].append(
                TruthSample(
                    t=round(t, 6),
                    x=float(center[0]),
                    y=float(center[1]),
                    speed=speed,
                    is_step_peak=idx in peak_flags[w_i],
                )
            )

            pts += _scatter_group(
                rng, center, spec.points_torso, spec.noise_pos,
                -spec.torso_half_band, spec.torso_half_band,
                velocity, spec.noise_doppler, spec.dropout,
            )
            if spec.points_arms:
                # Two arms anti-phase at the stride period: the backswing arm's
                # Doppler flips sign (rejected by the torso gate), the forward
                # arm reads faster than the torso.
                arm_amp = (
                    spec.arm_swing_amp
                    if spec.arm_swing_amp is not None
                    else 1.2 * spec.base_speed
                )
                tau = t - kin.t_start
                envelope = _smoothstep(tau / kin.t_ramp) if kin.t_ramp > 0 else 1.0
                swing = envelope * arm_amp * math.sin(kin.omega * tau / 2 + spec.phase)
                if not spec.arm_counterphase:
                    swing = 0.0
                half_arms = spec.points_arms // 2
                for arm_sign, n_arm in ((+1, half_arms), (-1, spec.points_arms - half_arms)):
                    # Hands reach hip level, so arm returns span below the torso.
                    pts += _scatter_group(
                        rng, center, n_arm, 1.5 * spec.noise_pos,
                        -0.5, 0.35,
                        (speed + arm_sign * swing) * direction,
                        spec.noise_doppler, spec.dropout,
                    )
            if spec.points_legs:
                tau = t - kin.t_start
                half = spec.points_legs // 2
                for leg, n_leg in ((0, half), (1, spec.points_legs - half)):
                    factor = 1.0 + 1.2 * math.sin(
                        kin.omega * tau + spec.phase + math.pi * leg
                    )
                    leg_speed = max(0.0, factor) * speed
                    # Lower body fills z from the hips down, keeping the
                    # person one density-connected cluster.
                    pts += _scatter_group(
                        rng, center, n_leg, spec.noise_pos,
                        -1.0, -0.15,
                        leg_speed * direction, spec.noise_doppler, spec.dropout,
                    )

        for pet in scene.pets:
            ang = pet.phase + pet.speed / max(pet.wander_radius, 1e-6) * t
            center = np.asarray(pet.center) + pet.wander_radius * np.array(
                [math.cos(ang), math.sin(ang)]
            )
            velocity = pet.speed * np.array([-math.sin(ang), math.cos(ang)])
            pts += _scatter_group(
                rng, center, pet.n_points, 0.05,
                pet.z_low, pet.z_high,
                velocity, pet.noise_doppler, 0.0,
            )

        frames.append((t, pts))

    session = build_session(
        frame_rate=scene.frame_rate,
        site=scene.site,
        room_label=scene.room_label,
        device_id=scene.device_id,
        frames=frames,
    )
    walkers_truth = tuple(
        WalkerTruth(
            walker_id=spec.walker_id,
            true_step_length=spec.true_step_length,
            base_speed=spec.base_speed,
            step_period=spec.step_period,
            t_start=kin.t_start,
            t_end=kin.t_end,
            step_times=tuple(kin.step_times),
            samples=tuple(samples),
        )
        for spec, kin, samples in zip(scene.walkers, kinematics, truth_samples)
    )
    return session, GroundTruth(scene_name=scene.name, seed=scene.seed, walkers=walkers_truth)


def write_truth(truth: GroundTruth, path: str | os.PathLike) -> None:
    header = {
        "format": TRUTH_FORMAT,
        "version": 1,
        "scene": truth.scene_name,
        "seed": truth.seed,
        "walkers": [
            {
                "id": w.walker_id,
                "true_step_length": round(w.true_step_length, 6),
                "base_speed": round(w.base_speed, 6),
                "step_period": round(w.step_period, 6),
                "t_start": round(w.t_start, 6),
                "t_end": round(w.t_end, 6),
                "step_times": [round(t, 6) for t in w.step_times],
            }
            for w in truth.walkers
        ],
    }
    lines = [json.dumps(header, sort_keys=True)]
    for w in truth.walkers:
        for s in w.samples:
            lines.append(
                json.dumps(
                    {
                        "t": round(s.t, 6),
                        "walker_id": w.walker_id,
                        "x": round(s.x, 6),
                        "y": round(s.y, 6),
                        "speed": round(s.speed, 6),
                        "is_step_peak": s.is_step_peak,
                    },
                    sort_keys=True,
                )
            )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_truth_header(path: str | os.PathLike) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
    if header.get("format") != TRUTH_FORMAT:
        raise ValueError(f"not a ground-truth file: {os.fspath(path)!r}")
    return header


def _clinic_walklog(
    walks: list[tuple[WalkerSpec, str, int]], participant: str = "P01"
) -> WalkLog:
    entries = tuple(
        WalkEntry(
            participant=participant,
            walk_index=index,
            walk_type=walk_type,
            t_start=spec.start_time,
            reference_step_length=spec.true_step_length,
        )
        for spec, walk_type, index in walks
    )
    return WalkLog(entries=entries, g_s=WALKWAY_START, g_e=WALKWAY_END)


def _build_clinic(
    name: str,
    seed: int,
    base_speed: float,
    step_period: float,
    walk_type: str,
    n_walks: int = 2,
    with_assistant: bool = False,
    walk_gap: float = 16.0,
    noise_doppler: float = 0.12,
) -> SceneSpec:
    walkers = []
    logged = []
    t = 2.0
    for w in range(n_walks):
        walk = WalkerSpec(
            walker_id=f"walk{w}",
            path=(WALKWAY_START, WALKWAY_END),
            base_speed=base_speed,
            step_period=step_period,
            start_time=t,
            noise_doppler=noise_doppler,
        )
        walkers.append(walk)
        logged.append((walk, walk_type, w))
        walk_time = 4.0 / base_speed + 2.0
        if w + 1 < n_walks:
            # Walk back to the start, laterally offset off the walkway.
            walkers.append(
                WalkerSpec(
                    walker_id=f"return{w}",
                    path=((0.35, 2.03), (0.35, 6.03)),
                    base_speed=0.9 * base_speed,
                    step_period=step_period,
                    start_time=t + walk_time,
                )
            )
        t += walk_gap
    if with_assistant:
        walkers.append(
            WalkerSpec(
                walker_id="assistant",
                path=((1.5, 6.3), (1.5, 2.3)),
                base_speed=0.95 * base_speed,
                step_period=step_period * 1.05,
                start_time=2.6,
            )
        )
    duration = t - walk_gap + 4.0 / base_speed + 4.0
    return SceneSpec(
        name=name,
        site="clinic",
        room_label="walkway",
        device_id="SIM",
        duration=duration,
        seed=seed,
        walkers=tuple(walkers),
        walklog=_clinic_walklog(logged),
    )


def _build_home(
    name: str,
    seed: int,
    passes: list[tuple[tuple[tuple[float, float], ...], float]],
    base_speed: float = 1.0,
    step_period: float = 0.55,
    pets: tuple[PetSpec, ...] = (),
    room_label: str = "living",
    concurrent: tuple[WalkerSpec, ...] = (),
) -> SceneSpec:
    walkers = [
        WalkerSpec(
            walker_id=f"pass{i}",
            path=path,
            base_speed=base_speed,
            step_period=step_period,
            start_time=start,
        )
        for i, (path, start) in enumerate(passes)
    ] + list(concurrent)
    t_end = max(
        start + sum(
            math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(path, path[1:])
        ) / (base_speed * 0.8)
        for path, start in passes
    )
    return SceneSpec(
        name=name,
        site="home",
        room_label=room_label,
        device_id="SIM",
        duration=t_end + 3.0,
        seed=seed,
        walkers=tuple(walkers),
        pets=pets,
    )


def make_scenario(
    name: str,
    seed: int | None = None,
    base_speed: float | None = None,
    step_period: float | None = None,
    n_walks: int | None = None,
) -> SceneSpec:
    """Build a named preset scene, optionally overriding the gait parameters."""
    bs = base_speed if base_speed is not None else 1.0
    sp = step_period if step_period is not None else 0.55

    if name == "clinic_control":
        return _build_clinic(
            name, seed if seed is not None else 101, bs, sp, "control",
            n_walks=n_walks if n_walks is not None else 2,
        )
    if name == "clinic_fast":
        # Fast gait reads messier: the torso pitches and dwell per frame
        # shrinks, widening the measured step-time distribution around R.
        return _build_clinic(
            name,
            seed if seed is not None else 102,
            base_speed if base_speed is not None else 1.45,
            step_period if step_period is not None else 0.45,
            "fast",
            n_walks=n_walks if n_walks is not None else 2,
            noise_doppler=0.22,
        )
    if name == "clinic_with_assistant":
        return _build_clinic(
            name, seed if seed is not None else 103, bs, sp, "control",
            n_walks=n_walks if n_walks is not None else 1, with_assistant=True,
        )
    if name == "home_radial":
        return _build_home(
            name, seed if seed is not None else 104,
            passes=[
                (((0.3, 5.8), (0.3, 1.2)), 1.5),
                (((0.3, 1.2), (0.3, 5.8)), 9.5),
            ],
            base_speed=bs, step_period=sp,
        )
    if name == "home_perpendicular":
        return _build_home(
            name, seed if seed is not None else 105,
            passes=[
                (((-2.8, 3.5), (2.8, 3.5)), 1.5),
                (((2.8, 3.5), (-2.8, 3.5)), 10.5),
            ],
            base_speed=bs, step_period=sp, room_label="hallway",
        )
    if name == "home_L_shape":
        return _build_home(
            name, seed if seed is not None else 106,
            passes=[(((0.5, 5.6), (0.5, 1.6), (3.2, 1.6)), 1.5)],
            base_speed=bs, step_period=sp,
        )
    if name == "home_with_pet":
        return _build_home(
            name, seed if seed is not None else 107,
            passes=[
                (((0.3, 5.8), (0.3, 1.2)), 1.5),
                (((0.3, 1.2), (0.3, 5.8)), 9.5),
            ],
            base_speed=bs, step_period=sp,
            pets=(PetSpec(center=(2.0, 2.5)),),
        )
    if name == "two_residents":
        second = WalkerSpec(
            walker_id="resident2",
            path=((-2.6, 4.6), (2.6, 4.9)),
            base_speed=0.9,
            step_period=0.6,
            start_time=1.8,
        )
        return _build_home(
            name, seed if seed is not None else 108,
            passes=[(((0.4, 5.8), (0.4, 1.3)), 1.5)],
            base_speed=bs, step_period=sp,
            concurrent=(second,),
        )
    raise KeyError(f"unknown scenario {name!r}")


SCENARIO_NAMES = (
    "clinic_control",
    "clinic_fast",
    "clinic_with_assistant",
    "home_radial",
    "home_perpendicular",
    "home_L_shape",
    "home_with_pet",
    "two_residents",
)


def scenario_library() -> dict[str, SceneSpec]:
    """All named presets with their default seeds."""
    return {name: make_scenario(name) for name in SCENARIO_NAMES}
