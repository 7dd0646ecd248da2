"""Scene sampling: randomized training rooms and fixed evaluation setups.

Training scenes draw room geometry, head pose, target placement, SNR,
and decay time from documented uniform ranges. Two draws are coupled
by design: the room width is a fraction of its length (no corridor
shaped rooms) and the decay time scales with the SNR (quieter mixes in
livelier rooms would be unrealistically hard). All randomness comes
from a counter-based generator (Philox) keyed by (master seed, record
id), so any record regenerates in isolation on any platform.

Evaluation scenes are fixed: three room presets, the listener at the
room center facing +x, and the target 1 m away at 0 or 30 degrees to
the right.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .room import HeadPose, RoomSpec
from .shmath import SphericalDirection

# Training draw ranges. The draw ORDER inside sample_scene is part of
# the contract; changing either silently regenerates different corpora.
ROOM_X_RANGE = (3.0, 30.0)
ROOM_ASPECT_RANGE = (0.5, 1.0)          # r_y = r_x * aspect
ROOM_Z_RANGE = (2.5, 5.0)
HEAD_FRACTION_RANGE = (0.35, 0.65)      # of the room dimension, x and y
HEAD_Z_RANGE = (1.0, 2.0)
HEAD_YAW_RANGE_DEG = (-45.0, 45.0)
HEAD_PITCH_RANGE_DEG = (-10.0, 10.0)
TARGET_DISTANCE_RANGE = (0.5, 3.0)
TARGET_ANGLE_RANGE_DEG = (-45.0, 45.0)
SNR_RANGE_DB = (0.0, 6.0)
RT60_DRAW_RANGE = (0.1, 0.5)

EVAL_ROOM_DIMS = {
    "party": (15.0, 10.0, 3.5),
    "restaurant": (28.0, 17.0, 4.2),
    "office": (5.0, 2.0, 2.5),
}
EVAL_SNR_DB = 5.0
EVAL_HEAD_HEIGHT = 1.5
EVAL_TARGET_DISTANCE = 1.0
EVAL_TARGET_ANGLES_DEG = (0, 30)

# Sampled targets keep this clearance from every wall.
_TARGET_MARGIN = 0.05


def rt60_from_snr(draw, snr_db):
    """Decay time coupled to the mix SNR: draw * (snr_db + 0.3) / 5.3."""
    return draw * (snr_db + 0.3) / 5.3


@dataclass(frozen=True)
class SceneSpec:
    """One scene: room, listener pose, target placement, and mix SNR.

    ``target`` lives in the head frame (azimuth positive toward the
    left ear, elevation 0 for every scene this module produces) with
    ``radius`` the head-to-target distance in meters. ``rt60_draw``
    keeps the raw uniform draw behind room.rt60 for sampled scenes
    (None for eval presets) so the decay/SNR coupling stays checkable
    after the fact.
    """

    room: RoomSpec
    head: HeadPose
    target: SphericalDirection
    snr_db: float
    seed: int = 0
    record_id: int = 0
    rt60_draw: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.target.radius <= 0:
            raise ValueError("target distance must be > 0")
        if not self.room.contains(self.target_position()):
            raise ValueError("target position falls outside the room")

    def target_position(self):
        """World-frame target coordinates."""
        v = self.target.unit_vector() * self.target.radius
        return np.asarray(self.head.position) + self.head.rotation() @ v

    def to_dict(self):
        return {
            "room_dims": list(self.room.dims),
            "rt60": float(self.room.rt60),
            "head_position": list(self.head.position),
            "head_yaw": float(self.head.yaw),
            "head_pitch": float(self.head.pitch),
            "ear_distance": float(self.head.ear_distance),
            "target_azimuth": float(self.target.azimuth),
            "target_elevation": float(self.target.elevation),
            "target_distance": float(self.target.radius),
            "snr_db": float(self.snr_db),
            "seed": int(self.seed),
            "record_id": int(self.record_id),
            "rt60_draw": None if self.rt60_draw is None else float(self.rt60_draw),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            room=RoomSpec(tuple(d["room_dims"]), d["rt60"]),
            head=HeadPose(tuple(d["head_position"]), yaw=d["head_yaw"],
                          pitch=d["head_pitch"], ear_distance=d["ear_distance"]),
            target=SphericalDirection(d["target_azimuth"], d["target_elevation"],
                                      radius=d["target_distance"]),
            snr_db=d["snr_db"],
            seed=d.get("seed", 0),
            record_id=d.get("record_id", 0),
            rt60_draw=d.get("rt60_draw"),
        )


def record_rng(seed, record_id=0):
    """Counter-based stream for one record.

    Philox keyed by (master seed, record id): records regenerate in
    isolation, in any order, with identical results across platforms.
    """
    for name, value in (("seed", seed), ("record_id", record_id)):
        if int(value) != value or not 0 <= int(value) < 2 ** 64:
            raise ValueError(f"{name} must be an unsigned 64-bit integer")
    key = np.array([seed, record_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _lerp(u, bounds):
    a, b = bounds
    return a + (b - a) * u


def sample_scene(seed, record_id=0, max_retries=64):
    """Draw one training scene from the documented ranges.

    The draw order is fixed: room length, width aspect, height; head
    x, y, z, yaw, pitch; SNR; decay draw; then (distance, angle) pairs
    for the target until one lands inside the room. Target retries are
    the only variable-length part, so every earlier field is a fixed
    function of (seed, record_id) regardless of how many retries run.

    The target angle is azimuth in the head frame; elevation is 0
    there, so with nonzero pitch the target tilts slightly out of the
    world horizontal plane. Raises ValueError when no placement fits
    within max_retries (pathological geometry: reject this seed).
    """
    rng = record_rng(seed, record_id)
    u = rng.random(10)
    r_x = _lerp(u[0], ROOM_X_RANGE)
    r_y = r_x * _lerp(u[1], ROOM_ASPECT_RANGE)
    r_z = _lerp(u[2], ROOM_Z_RANGE)
    lo, hi = HEAD_FRACTION_RANGE
    head_x = r_x * _lerp(u[3], (lo, hi))
    head_y = r_y * _lerp(u[4], (lo, hi))
    head_z = _lerp(u[5], HEAD_Z_RANGE)
    yaw = np.deg2rad(_lerp(u[6], HEAD_YAW_RANGE_DEG))
    pitch = np.deg2rad(_lerp(u[7], HEAD_PITCH_RANGE_DEG))
    snr_db = _lerp(u[8], SNR_RANGE_DB)
    draw = _lerp(u[9], RT60_DRAW_RANGE)

    room = RoomSpec((r_x, r_y, r_z), rt60_from_snr(draw, snr_db))
    head = HeadPose((head_x, head_y, head_z), yaw=yaw, pitch=pitch)

    # Candidate (distance, angle) pairs, consumed in draw order; the
    # first one whose world position clears the walls wins. The block
    # is drawn in one go so stream consumption does not depend on how
    # many candidates get inspected.
    pairs = rng.random((max_retries, 2))
    dists = _lerp(pairs[:, 0], TARGET_DISTANCE_RANGE)
    angles = np.deg2rad(_lerp(pairs[:, 1], TARGET_ANGLE_RANGE_DEG))
    rot = head.rotation()
    for k in range(max_retries):
        d, a = dists[k], angles[k]
        vec = np.array([np.cos(a) * d, np.sin(a) * d, 0.0])
        world = head.position + rot @ vec
        if all(_TARGET_MARGIN < w < dim - _TARGET_MARGIN
               for w, dim in zip(world, room.dims)):
            target = SphericalDirection(float(a), 0.0, radius=float(d))
            return SceneSpec(room=room, head=head, target=target,
                             snr_db=snr_db, seed=int(seed),
                             record_id=int(record_id), rt60_draw=draw)
    raise ValueError(
        f"no target placement found in {max_retries} draws "
        f"(seed={seed}, record_id={record_id}); reject this seed")


def eval_scene_presets(environment, target_angle_deg, rt60):
    """Fixed evaluation scene for one environment and target angle.

    environment: "party", "restaurant", or "office". target_angle_deg:
    0 (straight ahead) or 30 (to the right). rt60 is the decay time in
    seconds and must be supplied by the caller; it is a measured
    property of the space being mimicked, not something this module
    can invent.

    The listener sits at the room center at 1.5 m height facing +x.
    The target sits 1 m away in the listener's horizontal plane and
    the mix SNR is fixed at +5 dB.
    """
    if environment not in EVAL_ROOM_DIMS:
        known = ", ".join(sorted(EVAL_ROOM_DIMS))
        raise ValueError(f"unknown environment {environment!r} (known: {known})")
    if target_angle_deg not in EVAL_TARGET_ANGLES_DEG:
        raise ValueError("target_angle_deg must be 0 or 30 (degrees to the right)")
    if not rt60 > 0:
        raise ValueError("rt60 must be > 0")
    dims = EVAL_ROOM_DIMS[environment]
    room = RoomSpec(dims, float(rt60))
    head = HeadPose((dims[0] / 2.0, dims[1] / 2.0, EVAL_HEAD_HEIGHT))
    # Right of straight ahead is negative azimuth (left ear on +y).
    target = SphericalDirection(np.deg2rad(-float(target_angle_deg)), 0.0,
                                radius=EVAL_TARGET_DISTANCE)
    return SceneSpec(room=room, head=head, target=target, snr_db=EVAL_SNR_DB)
