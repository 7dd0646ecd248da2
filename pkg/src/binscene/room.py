"""Shoebox image-source simulation in the spherical-harmonic domain.

The simulator mirrors an omnidirectional point source across the six
walls of a rectangular room, encodes every image arrival on the SH
basis at its head-frame direction of arrival, and emits the resulting
multichannel impulse response. Wall reflectivity is a single scalar
derived from the requested decay time by Sabine inversion.

Speed of sound is fixed at 343 m/s; amplitudes follow the free-field
1/(4*pi*d) law.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from . import audioio
from .shmath import rotation_matrix, sh_matrix, n_channels
from .signals import AmbiSignal

__all__ = [
    "SPEED_OF_SOUND",
    "RoomSpec",
    "HeadPose",
    "AmbiRir",
    "rt60_to_reflectivity",
    "ear_positions",
    "simulate_ambi_rir",
    "schroeder_decay",
    "estimate_t60",
    "save_ambi_rir",
    "load_ambi_rir",
]

SPEED_OF_SOUND = 343.0  # m/s

# Decay window simulated past the direct arrival, as a multiple of RT60.
DECAY_MARGIN = 1.2

EAR_DISTANCE_DEFAULT = 0.175  # m


@dataclass(frozen=True)
class RoomSpec:
    """Rectangular room dimensions (m) and target decay time (s)."""

    dims: tuple
    rt60: float

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ValueError("room dims must be three positive lengths")
        if self.rt60 <= 0:
            raise ValueError("rt60 must be > 0")
        object.__setattr__(self, "dims", dims)

    @property
    def volume(self):
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def surface(self):
        lx, ly, lz = self.dims
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    def contains(self, point, margin=0.0):
        return all(margin < p < d - margin for p, d in zip(point, self.dims))


@dataclass(frozen=True)
class HeadPose:
    """Head position and orientation inside the room.

    yaw rotates about z, pitch about the rotated y axis (positive up).
    """

    position: tuple
    yaw: float = 0.0
    pitch: float = 0.0
    ear_distance: float = EAR_DISTANCE_DEFAULT

    def __post_init__(self):
        pos = tuple(float(p) for p in self.position)
        if len(pos) != 3:
            raise ValueError("position must be (x, y, z)")
        if self.ear_distance <= 0:
            raise ValueError("ear_distance must be > 0")
        object.__setattr__(self, "position", pos)

    def rotation(self):
        return rotation_matrix(self.yaw, self.pitch)


@dataclass(frozen=True)
class AmbiRir:
    """SH-domain room impulse response, ACN/SN3D, shape (T, channels)."""

    order: int
    fs: int
    data: np.ndarray
    mode: str  # "direct_only" | "full"

    def __post_init__(self):
        if self.mode not in ("direct_only", "full"):
            raise ValueError(f"unknown mode {self.mode!r}")
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] != n_channels(self.order):
            raise ValueError("data shape inconsistent with order")
        object.__setattr__(self, "data", data)

    def as_signal(self):
        return AmbiSignal(self.order, self.fs, self.data)

    def __len__(self):
        return self.data.shape[0]


def rt60_to_reflectivity(room):
    """Uniform wall reflection coefficient by Sabine inversion.

    The Sabine absorption alpha = 0.161 * V / (S * rt60) must not
    exceed 1; shorter decays are physically unreachable for the given
    geometry and are rejected.
    """
    alpha = 0.161 * room.volume / (room.surface * room.rt60)
    if alpha > 1.0:
        raise ValueError(
            f"rt60 {room.rt60:.4f} s is too short for a "
            f"{room.dims[0]:g}x{room.dims[1]:g}x{room.dims[2]:g} m room: "
            f"Sabine absorption {alpha:.3f} > 1 "
            f"(minimum feasible rt60 {0.161 * room.volume / room.surface:.4f} s)")
    return math.sqrt(1.0 - alpha)


def ear_positions(room, head):
    """Left/right ear positions on the rotated interaural axis.

    The interaural axis is the head-frame +y direction (left ear on
    +y). Raises if either ear leaves the room.
    """
    axis = head.rotation() @ np.array([0.0, 1.0, 0.0])
    half = 0.5 * head.ear_distance
    pos = np.asarray(head.position)
    left = pos + half * axis
    right = pos - half * axis
    for name, p in (("left", left), ("right", right)):
        if not room.contains(p):
            raise ValueError(f"{name} ear at {np.round(p, 3)} is outside the room")
    return left, right


def _axis_candidates(src, dim, rcv, reach):
    """Per-axis image coordinates and wall-reflection counts.

    Images along one axis sit at (1-2u)*s + 2*l*L for u in {0,1} and
    integer l; the wall at 0 is hit |l-u| times and the far wall |l|
    times. Candidates farther than `reach` from the receiver along the
    axis cannot contribute and are dropped.
    """
    n = int(math.ceil((reach + dim) / (2.0 * dim))) + 1
    l = np.arange(-n, n + 1)
    pos, refl = [], []
    for u in (0, 1):
        p = (1 - 2 * u) * src + 2.0 * l * dim
        r = np.abs(l - u) + np.abs(l)
        pos.append(p)
        refl.append(r)
    pos = np.concatenate(pos)
    refl = np.concatenate(refl)
    keep = np.abs(pos - rcv) <= reach
    return pos[keep], refl[keep]


_SINC_HALF = 16  # taps each side in fractional-delay mode


def simulate_ambi_rir(room, source, receiver, head, order, fs,
                      mode="full", fractional_delay=False):
    """Image-source RIR encoded on the SH basis at the receiver.

    Parameters
    ----------
    room : RoomSpec
    source, receiver : (3,) positions in meters, strictly inside the room.
    head : HeadPose
        Supplies the orientation used to express image directions in
        the head frame. The receiver need not coincide with
        head.position (per-ear fields pass ear positions here).
    order : int
        SH truncation order, >= 0.
    fs : int
        Sample rate in Hz.
    mode : "full" | "direct_only"
        "direct_only" emits the zeroth-order image (no reflections)
        only.
    fractional_delay : bool
        False (default) rounds arrivals to the nearest sample; True
        spreads each arrival over a 32-tap Hann-windowed sinc.

    Returns
    -------
    AmbiRir
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    source = np.asarray(source, dtype=float)
    receiver = np.asarray(receiver, dtype=float)
    if not room.contains(source):
        raise ValueError(f"source {source} outside room {room.dims}")
    if not room.contains(receiver):
        raise ValueError(f"receiver {receiver} outside room {room.dims}")
    if np.allclose(source, receiver):
        raise ValueError("source and receiver coincide")

    c = SPEED_OF_SOUND
    d_direct = float(np.linalg.norm(source - receiver))
    reflectivity = rt60_to_reflectivity(room)

    if mode == "direct_only":
        t_cut = d_direct / c
        dists = np.array([d_direct])
        refl = np.zeros(1, dtype=int)
        offsets = (source - receiver)[None, :]
    elif mode == "full":
        # Window the impulse train to DECAY_MARGIN * rt60 of decay past
        # the direct arrival.
        t_cut = d_direct / c + DECAY_MARGIN * room.rt60
        reach = t_cut * c
        cand = [_axis_candidates(source[a], room.dims[a], receiver[a], reach)
                for a in range(3)]
        dx = cand[0][0][:, None, None] - receiver[0]
        dy = cand[1][0][None, :, None] - receiver[1]
        dz = cand[2][0][None, None, :] - receiver[2]
        dists = np.sqrt(dx * dx + dy * dy + dz * dz)
        refl = (cand[0][1][:, None, None] + cand[1][1][None, :, None]
                + cand[2][1][None, None, :])
        keep = dists <= reach
        offsets = np.stack([np.broadcast_to(dx, dists.shape)[keep],
                            np.broadcast_to(dy, dists.shape)[keep],
                            np.broadcast_to(dz, dists.shape)[keep]], axis=1)
        refl = refl[keep]
        dists = dists[keep]
    else:
        raise ValueError(f"unknown mode {mode!r}")

    amps = reflectivity ** refl / (4.0 * np.pi * dists)
    delays = dists * (fs / c)

    length = int(round(t_cut * fs)) + 1
    if mode == "full":
        length = max(length, int(math.ceil(room.rt60 * fs)) + 1)
    if fractional_delay:
        length += 2 * _SINC_HALF
    rir = np.zeros((length, n_channels(order)))

    # Head-frame DOAs of all images, encoded on the SH basis.
    rot_inv = head.rotation().T
    units = offsets / dists[:, None]
    head_frame = units @ rot_inv.T
    az = np.arctan2(head_frame[:, 1], head_frame[:, 0])
    el = np.arcsin(np.clip(head_frame[:, 2], -1.0, 1.0))

    chunk = 32768
    for lo in range(0, len(dists), chunk):
        hi = min(lo + chunk, len(dists))
        basis = sh_matrix(order, az[lo:hi], el[lo:hi])
        contrib = amps[lo:hi, None] * basis
        if fractional_delay:
            _scatter_sinc(rir, delays[lo:hi] + _SINC_HALF, contrib)
        else:
            idx = np.round(delays[lo:hi]).astype(int)
            np.add.at(rir, idx, contrib)
    return AmbiRir(order, int(fs), rir, mode)


def _scatter_sinc(rir, delays, contrib):
    """Add arrivals at fractional delays via Hann-windowed sinc kernels."""
    base = np.floor(delays).astype(int)
    frac = delays - base
    taps = np.arange(-_SINC_HALF, _SINC_HALF + 1)
    arg = taps[None, :] - frac[:, None]
    win = 0.5 * (1.0 + np.cos(np.pi * arg / _SINC_HALF))
    win[np.abs(arg) >= _SINC_HALF] = 0.0
    kern = np.sinc(arg) * win
    idx = base[:, None] + taps[None, :]
    np.clip(idx, 0, rir.shape[0] - 1, out=idx)
    for t in range(kern.shape[1]):
        np.add.at(rir, idx[:, t], kern[:, t, None] * contrib)


def schroeder_decay(ir):
    """Backward-integrated energy decay curve in dB (0 dB at start)."""
    ir = np.asarray(ir, dtype=float)
    energy = np.cumsum(ir[::-1] ** 2)[::-1]
    if energy[0] <= 0:
        raise ValueError("impulse response has no energy")
    return 10.0 * np.log10(np.maximum(energy / energy[0], 1e-300))


def estimate_t60(ir, fs, fit_range=(-5.0, -35.0), highpass_hz=None):
    """Decay time from the Schroeder curve slope, extrapolated to 60 dB.

    Fits a line to the curve between `fit_range` dB (default -5 to
    -35) and returns -60/slope.

    An image-source RIR on a sample grid stacks same-sign impulses, so
    its tail carries a DC pedestal that flattens the decay curve.  Pass
    `highpass_hz` (e.g. 200) to remove it before integrating, as decay
    measurement practice does.
    """
    if highpass_hz is not None:
        sos = signal.butter(4, highpass_hz, btype="highpass", fs=fs,
                            output="sos")
        ir = signal.sosfiltfilt(sos, np.asarray(ir, dtype=float))
    curve = schroeder_decay(ir)
    hi, lo = fit_range
    i0 = int(np.argmax(curve <= hi))
    i1 = int(np.argmax(curve <= lo))
    if curve[i0] > hi or curve[i1] > lo or i1 <= i0 + 1:
        raise ValueError("decay range not covered by the impulse response")
    t = np.arange(i0, i1 + 1) / fs
    slope, _ = np.polyfit(t, curve[i0:i1 + 1], 1)
    if slope >= 0:
        raise ValueError("non-decaying Schroeder curve")
    return -60.0 / slope


def save_ambi_rir(path_stem, rir, room=None, head=None, extra=None):
    """Write an AmbiRir as <stem>.wav (float32, ACN channels) + <stem>.json."""
    audioio.write_wav(str(path_stem) + ".wav", rir.fs, rir.data)
    meta = {
        "order": rir.order,
        "fs": rir.fs,
        "mode": rir.mode,
        "channels": n_channels(rir.order),
        "convention": "ACN/SN3D",
    }
    if room is not None:
        meta["room"] = {"dims": list(room.dims), "rt60": room.rt60}
    if head is not None:
        meta["head"] = {"position": list(head.position), "yaw": head.yaw,
                        "pitch": head.pitch, "ear_distance": head.ear_distance}
    if extra:
        meta.update(extra)
    audioio.write_json(str(path_stem) + ".json", meta)


def load_ambi_rir(path_stem):
    """Read a RIR written by :func:`save_ambi_rir`."""
    meta = audioio.read_json(str(path_stem) + ".json")
    fs, data = audioio.read_wav(str(path_stem) + ".wav", expect_fs=meta["fs"])
    if data.ndim == 1:
        data = data[:, None]
    return AmbiRir(meta["order"], fs, data.astype(float), meta["mode"])
