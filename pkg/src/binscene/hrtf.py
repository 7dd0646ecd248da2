"""HRTF set handling: ingestion, conditioning, and coupling compensation.

An :class:`HrtfSet` stores per-direction left/right impulse responses on a
spherical measurement grid together with quadrature weights (summing to
4*pi) so spherical integrals can be evaluated as weighted sums.  The
conditioning steps offered here are the ones a measured set needs before
decoder fitting:

* :func:`crop_direct` truncates each response before the first wall
  reflection,
* :func:`lfe_extend` replaces the unreliable low-frequency region with a
  flat extension of the lowest trustworthy band,
* :func:`coupling_compensation_fit` fits a minimum-phase IIR filter to the
  direction-independent magnitude ratio between a bare-ear set and a set
  measured through a hearing-aid receiver coupling.

Synthetic generators (:func:`delta_hrtf_set`, :func:`pure_delay_hrtf_set`,
:func:`rigid_sphere_hrtf_set`) provide deterministic sets for tests and a
bundled physically-based default; no measured data ships with the package.
"""

import math
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal
from scipy.spatial import SphericalVoronoi

from . import audioio
from .grids import lebedev_grid
from .shmath import SphericalDirection

__all__ = [
    "HrtfSet",
    "IirFilter",
    "crop_direct",
    "lfe_extend",
    "coupling_compensation_fit",
    "voronoi_weights",
    "delta_hrtf_set",
    "pure_delay_hrtf_set",
    "rigid_sphere_hrtf_set",
    "save_hrtf_set",
    "load_hrtf_set",
    "save_iir_filter",
    "load_iir_filter",
]

_FADE_LEN = 16
_ONSET_FRACTION = 0.01


@dataclass(frozen=True)
class HrtfSet:
    """Per-direction HRIR pairs on a spherical grid with quadrature weights."""

    fs: int
    directions: tuple
    left_irs: np.ndarray
    right_irs: np.ndarray
    quadrature_weights: np.ndarray

    def __post_init__(self):
        left = np.ascontiguousarray(np.atleast_2d(self.left_irs), dtype=float)
        right = np.ascontiguousarray(np.atleast_2d(self.right_irs), dtype=float)
        w = np.asarray(self.quadrature_weights, dtype=float)
        n = len(self.directions)
        if left.shape != right.shape or left.shape[0] != n or w.shape != (n,):
            raise ValueError("directions, IRs and weights must agree in count")
        if np.any(w <= 0):
            raise ValueError("quadrature weights must be positive")
        # weights integrate the unit sphere; Voronoi fallbacks are approximate
        if not math.isclose(w.sum(), 4.0 * math.pi, rel_tol=1e-3):
            raise ValueError(f"quadrature weights sum to {w.sum():.6f}, "
                             f"expected 4*pi")
        object.__setattr__(self, "directions", tuple(self.directions))
        object.__setattr__(self, "left_irs", left)
        object.__setattr__(self, "right_irs", right)
        object.__setattr__(self, "quadrature_weights", w)

    @property
    def n_directions(self):
        return len(self.directions)

    @property
    def ir_length(self):
        return self.left_irs.shape[1]

    def azimuths(self):
        return np.array([d.azimuth for d in self.directions])

    def elevations(self):
        return np.array([d.elevation for d in self.directions])


def _onset_index(ir):
    """First sample reaching 1% of the peak magnitude."""
    mags = np.abs(ir)
    peak = mags.max()
    if peak == 0:
        return 0
    return int(np.argmax(mags >= _ONSET_FRACTION * peak))


def crop_direct(hset, max_len, fade_len=_FADE_LEN):
    """Truncate every IR to `max_len` samples with a raised-cosine tail.

    Used to cut a measured response before the first wall reflection
    arrives.  Calling with `max_len` equal to the current length is a
    no-op, which makes the operation idempotent.
    """
    if max_len > hset.ir_length:
        raise ValueError(f"max_len {max_len} exceeds IR length {hset.ir_length}")
    if max_len == hset.ir_length:
        return hset
    if fade_len >= max_len:
        raise ValueError("fade longer than the cropped response")
    for ear in (hset.left_irs, hset.right_irs):
        onsets = np.apply_along_axis(_onset_index, 1, ear)
        if np.any(onsets >= max_len):
            raise ValueError(
                f"max_len {max_len} cuts before the onset at sample "
                f"{int(onsets.max())}")
    fade = 0.5 * (1.0 + np.cos(np.pi * np.arange(1, fade_len + 1) / fade_len))
    window = np.ones(max_len)
    window[-fade_len:] = fade
    return replace(hset,
                   left_irs=hset.left_irs[:, :max_len] * window,
                   right_irs=hset.right_irs[:, :max_len] * window)


def _min_phase_spectrum(mag_full):
    """Minimum-phase complex spectrum for a full-FFT-grid magnitude."""
    logmag = np.log(np.maximum(mag_full, 1e-12))
    cep = np.fft.ifft(logmag).real
    n = len(cep)
    fold = np.zeros(n)
    fold[0] = cep[0]
    fold[1:n // 2] = 2.0 * cep[1:n // 2]
    fold[n // 2] = cep[n // 2]
    return np.exp(np.fft.fft(fold))


def lfe_extend(hset, f_lo):
    """Extend each response below `f_lo` with a flat magnitude plateau.

    The plateau level is the mean magnitude over [f_lo, 2*f_lo].  A
    minimum-phase correction filter realizes the magnitude change, so the
    band above the one-third-octave crossfade is untouched in magnitude
    and the time-domain character of the low end stays causal.
    """
    if not 0 < f_lo < hset.fs / 2:
        raise ValueError("f_lo must lie inside (0, fs/2)")
    if 2 * f_lo >= hset.fs / 2:
        raise ValueError("f_lo too close to Nyquist for a reference band")

    nfft = 1 << max(12, (8 * hset.ir_length - 1).bit_length())
    freqs = np.fft.fftfreq(nfft, 1.0 / hset.fs)
    absf = np.abs(freqs)
    band = (absf >= f_lo) & (absf <= 2 * f_lo)
    f_hi = f_lo * 2.0 ** (1.0 / 3.0)
    # cosine blend plateau->measured across [f_lo, f_lo*2^(1/3)]
    ramp = np.clip((absf - f_lo) / (f_hi - f_lo), 0.0, 1.0)
    blend = 0.5 * (1.0 - np.cos(np.pi * ramp))

    # the boosted low end rings past the IR length; fading the final
    # quarter keeps truncation leakage out of the extended band
    n_out = hset.ir_length
    fade_len = n_out // 4
    fade = 0.5 * (1.0 + np.cos(np.pi * np.arange(1, fade_len + 1) / fade_len))

    def extend(irs):
        out = np.empty_like(irs)
        for i, ir in enumerate(irs):
            spec = np.fft.fft(ir, nfft)
            mag = np.abs(spec)
            floor = 1e-4 * mag.max()
            plateau = mag[band].mean()
            target = blend * mag + (1.0 - blend) * plateau
            corr = _min_phase_spectrum(target / np.maximum(mag, floor))
            y = np.fft.ifft(spec * corr).real[:n_out]
            y[-fade_len:] *= fade
            out[i] = y
        return out

    return replace(hset, left_irs=extend(hset.left_irs),
                   right_irs=extend(hset.right_irs))


@dataclass(frozen=True)
class IirFilter:
    """Recursive filter coefficients (b, a) at a fixed sample rate."""

    b: np.ndarray
    a: np.ndarray
    fs: int

    def apply(self, x, axis=-1):
        return signal.lfilter(self.b, self.a, x, axis=axis)

    def magnitude(self, freqs):
        _, h = signal.freqz(self.b, self.a, worN=np.asarray(freqs, dtype=float),
                            fs=self.fs)
        return np.abs(h)

    def pole_radius(self):
        poles = np.roots(self.a)
        return float(np.max(np.abs(poles))) if len(poles) else 0.0


def coupling_compensation_fit(with_ha, bare, filter_order=16):
    """Fit a minimum-phase IIR compensating a receiver-coupling response.

    The target magnitude is the quadrature-weighted mean, over directions
    and both ears, of the per-direction magnitude ratio bare/with_ha.  The
    returned filter matches that target in log magnitude over
    [100 Hz, 0.9*Nyquist].
    """
    if with_ha.fs != bare.fs or with_ha.n_directions != bare.n_directions:
        raise ValueError("sets must share sample rate and direction grid")
    for da, db in zip(with_ha.directions, bare.directions):
        if abs(da.azimuth - db.azimuth) > 1e-9 or \
           abs(da.elevation - db.elevation) > 1e-9:
            raise ValueError("direction grids differ")

    fs = with_ha.fs
    nfft = 2048
    w = with_ha.quadrature_weights
    num = np.zeros(nfft // 2 + 1)
    for ha_irs, bare_irs in ((with_ha.left_irs, bare.left_irs),
                             (with_ha.right_irs, bare.right_irs)):
        ha_mag = np.abs(np.fft.rfft(ha_irs, nfft, axis=1))
        bare_mag = np.abs(np.fft.rfft(bare_irs, nfft, axis=1))
        floor = 1e-8 * ha_mag.max()
        ratio = bare_mag / np.maximum(ha_mag, floor)
        num += w @ ratio
    target = num / (2.0 * w.sum())
    # A spectral null in with_ha (e.g. a hard zero at Nyquist) sends the
    # ratio to the floor ceiling far outside the scored band; clamp those
    # bins to the in-band range so they cannot dominate the fit.
    f_bins = np.fft.rfftfreq(nfft, 1.0 / fs)
    band = (f_bins >= 100.0) & (f_bins <= 0.9 * fs / 2)
    target = np.clip(target, 0.5 * target[band].min(),
                     2.0 * target[band].max())

    b, a = _fit_iir_magnitude(target, fs, filter_order, nfft)
    filt = IirFilter(b=b, a=a, fs=fs)
    if filt.pole_radius() >= 1.0:
        raise ValueError("compensation fit produced an unstable filter")
    return filt


def _fit_iir_magnitude(target_mag, fs, order, nfft, n_iter=12):
    """Equation-error LS fit of (b, a) to a magnitude target.

    Builds a minimum-phase complex target from the magnitude, then runs
    Sanathanan-Koerner iterations; the 1/|A| reweighting turns the
    equation error into an approximation of the output error.  Poles and
    zeros outside the unit circle are reflected inside, which preserves
    the magnitude response exactly after gain correction.
    """
    mag_full = np.concatenate([target_mag, target_mag[-2:0:-1]])
    spec = _min_phase_spectrum(mag_full)
    half = spec[:nfft // 2 + 1]
    w_ang = 2.0 * np.pi * np.arange(nfft // 2 + 1) / nfft
    # fit weight favors the scored band but keeps the edges bounded
    f_hz = w_ang * fs / (2.0 * np.pi)
    wt = np.where((f_hz >= 100.0) & (f_hz <= 0.45 * fs), 1.0, 0.05)

    ek = np.exp(-1j * np.outer(w_ang, np.arange(order + 1)))
    a = np.zeros(order + 1)
    a[0] = 1.0
    b = None
    n_var = 2 * order + 1
    for _ in range(n_iter):
        denom = np.abs(ek @ a)
        rows = np.sqrt(wt) / np.maximum(denom, 1e-12)
        lhs = np.hstack([ek, -half[:, None] * ek[:, 1:]]) * rows[:, None]
        rhs = half * rows
        # small ridge handles degenerate targets (e.g. identity ratio,
        # where any A = B solves the equation error exactly)
        ridge = 1e-8 * np.sqrt(np.mean(np.abs(lhs) ** 2))
        lhs_ri = np.vstack([lhs.real, lhs.imag, ridge * np.eye(n_var)])
        rhs_ri = np.concatenate([rhs.real, rhs.imag, np.zeros(n_var)])
        sol, _, _, _ = np.linalg.lstsq(lhs_ri, rhs_ri, rcond=None)
        if not np.all(np.isfinite(sol)):
            raise ValueError("rank-deficient compensation fit")
        b = sol[:order + 1]
        a = np.concatenate([[1.0], sol[order + 1:]])
    return _stabilize(b, a)


def _stabilize(b, a):
    """Reflect poles/zeros into the unit circle, keeping |H| unchanged."""
    zeros, poles, gain = signal.tf2zpk(b, a)
    for roots, is_pole in ((zeros, False), (poles, True)):
        for i, r in enumerate(roots):
            m = np.abs(r)
            if m >= 1.0:
                roots[i] = r / (m * m) * (1.0 - 1e-9)
                gain *= m if not is_pole else 1.0 / m
    b2, a2 = signal.zpk2tf(zeros, poles, gain)
    return np.real(b2), np.real(a2)


def voronoi_weights(directions):
    """Spherical Voronoi cell areas as quadrature weights (sum 4*pi)."""
    pts = np.array([d.unit_vector() for d in directions])
    sv = SphericalVoronoi(pts, radius=1.0)
    sv.sort_vertices_of_regions()
    return sv.calculate_areas()


# ---------------------------------------------------------------------------
# synthetic sets


def _grid_directions(grid_points):
    xyz, weights = lebedev_grid(grid_points)
    dirs = tuple(SphericalDirection.from_unit_vector(v) for v in xyz)
    return dirs, weights


def delta_hrtf_set(fs=48000, ir_len=64, grid_points=50):
    """Identical unit impulses in every direction (both ears)."""
    dirs, weights = _grid_directions(grid_points)
    irs = np.zeros((len(dirs), ir_len))
    irs[:, 0] = 1.0
    return HrtfSet(fs=fs, directions=dirs, left_irs=irs, right_irs=irs.copy(),
                   quadrature_weights=weights)


def _woodworth_delay(cos_angle, radius, c=343.0):
    """Arrival-time offset at a point on a rigid sphere, seconds.

    Direct projection on the lit side, creeping-wave path on the shadowed
    side; continuous at the tangent point.
    """
    theta = np.arccos(np.clip(cos_angle, -1.0, 1.0))
    lit = theta <= np.pi / 2
    delay = np.where(lit, -np.cos(theta), theta - np.pi / 2) * radius / c
    return delay


def _frac_delay_kernel(delay_samples, ir_len):
    n = np.arange(ir_len)
    arg = n - delay_samples
    window = np.where(np.abs(arg) < ir_len / 2,
                      0.5 * (1 + np.cos(2 * np.pi * arg / ir_len)), 0.0)
    return np.sinc(arg) * window


def pure_delay_hrtf_set(fs=48000, ir_len=128, ear_distance=0.175,
                        grid_points=50, c=343.0):
    """Flat-magnitude HRIRs carrying only spherical-head arrival delays.

    The interaural delay follows the Woodworth wrap-around rule, so the
    set serves as an analytic ITD oracle.  Delays are offset so both ears
    stay causal.
    """
    dirs, weights = _grid_directions(grid_points)
    radius = ear_distance / 2.0
    base = ir_len // 4  # common causal offset, samples
    left = np.empty((len(dirs), ir_len))
    right = np.empty((len(dirs), ir_len))
    for i, d in enumerate(dirs):
        v = d.unit_vector()
        for ear_sign, out in ((+1.0, left), (-1.0, right)):
            cos_angle = ear_sign * v[1]  # ear axis is head-frame +/-y
            tau = _woodworth_delay(cos_angle, radius, c)
            out[i] = _frac_delay_kernel(base + tau * fs, ir_len)
    return HrtfSet(fs=fs, directions=dirs, left_irs=left, right_irs=right,
                   quadrature_weights=weights)


def _sphere_surface_response(ka_values, cos_thetas):
    """Plane-wave pressure on a rigid sphere surface, relative to free field.

    Classic modal series, evaluated for every (ka, cos_theta) pair at
    once; returns an array of shape (len(ka_values), len(cos_thetas)).
    """
    from scipy.special import spherical_jn, spherical_yn

    ka = np.atleast_1d(np.asarray(ka_values, dtype=float))
    cos_t = np.atleast_1d(np.asarray(cos_thetas, dtype=float))
    nonzero = ka >= 1e-6
    ka_nz = ka[nonzero]
    m_max = int(ka_nz.max() + 30) if ka_nz.size else 0

    orders = np.arange(m_max + 1)
    dh = (spherical_jn(orders[:, None], ka_nz[None, :], derivative=True)
          - 1j * spherical_yn(orders[:, None], ka_nz[None, :], derivative=True))
    coef = ((2 * orders[:, None] + 1) * 1j ** (orders[:, None] - 1)
            / dh / ka_nz[None, :] ** 2)

    # Legendre P_m(cos_theta) by upward recurrence
    leg = np.empty((m_max + 1, cos_t.size))
    leg[0] = 1.0
    if m_max >= 1:
        leg[1] = cos_t
    for m in range(1, m_max):
        leg[m + 1] = ((2 * m + 1) * cos_t * leg[m] - m * leg[m - 1]) / (m + 1)

    out = np.ones((ka.size, cos_t.size), dtype=complex)  # ka=0 limit is 1
    out[nonzero] = coef.T @ leg
    return out


def rigid_sphere_hrtf_set(fs=48000, ir_len=256, ear_distance=0.175,
                          grid_points=50, c=343.0):
    """Analytic rigid-sphere HRTFs: scattering magnitude plus delays.

    Physically based synthetic default for decoder fitting when no
    measured set is supplied; includes head shadow and the creeping-wave
    delay structure.
    """
    dirs, weights = _grid_directions(grid_points)
    radius = ear_distance / 2.0
    nfft = 2 * ir_len
    freqs = np.fft.rfftfreq(nfft, 1.0 / fs)
    base_delay = (ir_len // 4) / fs
    window = np.ones(ir_len)
    fade = ir_len // 8
    window[-fade:] = 0.5 * (1 + np.cos(np.pi * np.arange(1, fade + 1) / fade))

    ys = np.array([d.unit_vector()[1] for d in dirs])
    cos_thetas = np.concatenate([ys, -ys])  # left ears then right ears
    ka = 2 * np.pi * freqs * radius / c
    spec = _sphere_surface_response(ka, cos_thetas)
    spec *= np.exp(-2j * np.pi * freqs * base_delay)[:, None]
    irs = np.fft.irfft(spec, nfft, axis=0)[:ir_len] * window[:, None]
    n = len(dirs)
    return HrtfSet(fs=fs, directions=dirs, left_irs=irs[:, :n].T,
                   right_irs=irs[:, n:].T, quadrature_weights=weights)


# ---------------------------------------------------------------------------
# container I/O


def save_hrtf_set(path, hset, interleaved=False, extra_meta=None):
    """Write a set as a directory of stereo WAVs or one interleaved WAV.

    Directory layout: ``ir_NNN.wav`` (two channels, left then right) plus
    ``manifest.json``.  Interleaved layout: ``<path>.wav`` with channels
    [L0, R0, L1, R1, ...] plus ``<path>.json``.  Manifests store grid
    coordinates in degrees, quadrature weights, sample rate and IR length;
    measurement distance is carried only if supplied via `extra_meta`.
    """
    meta = {
        "fs": hset.fs,
        "ir_length": hset.ir_length,
        "n_directions": hset.n_directions,
        "azimuths_deg": [math.degrees(d.azimuth) for d in hset.directions],
        "elevations_deg": [math.degrees(d.elevation) for d in hset.directions],
        "quadrature_weights": hset.quadrature_weights.tolist(),
        "channel_order": "left,right",
    }
    if extra_meta:
        meta.update(extra_meta)
    if interleaved:
        data = np.empty((hset.ir_length, 2 * hset.n_directions), dtype=float)
        data[:, 0::2] = hset.left_irs.T
        data[:, 1::2] = hset.right_irs.T
        meta["layout"] = "interleaved"
        audioio.write_wav(str(path) + ".wav", hset.fs, data)
        audioio.write_json(str(path) + ".json", meta)
    else:
        os.makedirs(path, exist_ok=True)
        files = []
        for i in range(hset.n_directions):
            name = f"ir_{i:03d}.wav"
            pair = np.stack([hset.left_irs[i], hset.right_irs[i]], axis=1)
            audioio.write_wav(os.path.join(path, name), hset.fs, pair)
            files.append(name)
        meta["layout"] = "directory"
        meta["files"] = files
        audioio.write_json(os.path.join(path, "manifest.json"), meta)


def load_hrtf_set(path):
    """Read a set written by :func:`save_hrtf_set` (either layout)."""
    if os.path.isdir(path):
        meta = audioio.read_json(os.path.join(path, "manifest.json"))
        n = meta["n_directions"]
        left = np.empty((n, meta["ir_length"]))
        right = np.empty((n, meta["ir_length"]))
        for i, name in enumerate(meta["files"]):
            _, pair = audioio.read_wav(os.path.join(path, name),
                                       expect_fs=meta["fs"])
            left[i] = pair[:, 0]
            right[i] = pair[:, 1]
    else:
        stem = str(path)
        if stem.endswith(".wav"):
            stem = stem[:-4]
        meta = audioio.read_json(stem + ".json")
        _, data = audioio.read_wav(stem + ".wav", expect_fs=meta["fs"])
        left = data[:, 0::2].T.copy()
        right = data[:, 1::2].T.copy()
    dirs = tuple(
        SphericalDirection.from_degrees(az, el)
        for az, el in zip(meta["azimuths_deg"], meta["elevations_deg"]))
    return HrtfSet(fs=meta["fs"], directions=dirs, left_irs=left,
                   right_irs=right,
                   quadrature_weights=np.array(meta["quadrature_weights"]))


def save_iir_filter(path, filt):
    """Persist an IirFilter as JSON (b, a, fs)."""
    audioio.write_json(path, {"b": [float(v) for v in filt.b],
                              "a": [float(v) for v in filt.a],
                              "fs": int(filt.fs)})


def load_iir_filter(path):
    meta = audioio.read_json(path)
    return IirFilter(b=np.array(meta["b"]), a=np.array(meta["a"]),
                     fs=meta["fs"])
