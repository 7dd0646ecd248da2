"""Ambisonics decoders: binaural (magnitude least squares) and loudspeaker.

The binaural decoder is one FIR filter per spherical-harmonic channel and
ear, fit against an :class:`~binscene.hrtf.HrtfSet`.  Below the transition
frequency `fc` each frequency bin is a quadrature-weighted complex least
squares solve; from `fc` upward only magnitudes are matched, with phase
continued from the previous bin, which trades physically impossible
high-frequency phase accuracy for correct spectral colour.  Order taper
gains attenuate the highest orders to soften truncation ripple.

The loudspeaker side implements the analytic in-phase decoder: a
mode-matching (pseudo-inverse) matrix with per-degree weights that keep
all speaker gains non-negative on near-uniform layouts.

Sample-rate note: fitting happens at the HRTF set's rate; use
:func:`resample_decoder` to run the result against material at another
rate.
"""

import hashlib
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from . import audioio
from .shmath import (SphericalDirection, TaperWeights, n_channels,
                     sh_matrix, sn3d_to_n3d_factors, taper_weights)
from .signals import AmbiSignal, BinauralSignal, convolve_channels

__all__ = [
    "BinauralDecoder",
    "LoudspeakerLayout",
    "LsDecoder",
    "fit_bimagls",
    "decode_binaural",
    "decode_bilateral",
    "fit_inphase_decoder",
    "inphase_weights",
    "pad_ambisonics_order",
    "normalize_feeds",
    "save_decoder",
    "load_decoder",
    "resample_decoder",
]

DEFAULT_FC = 6239.0  # Hz; order-10 aliasing limit for a 17.5 cm head
DEFAULT_NFFT = 2048
DEFAULT_FILTER_LEN = 512
DEFAULT_REG = 1e-2
_FADE_IN = 16
_FADE_OUT = 64


@dataclass(frozen=True)
class BinauralDecoder:
    """Per-channel FIR filters rendering an ambisonic signal to two ears."""

    order: int
    fs: int
    fc: float
    taper: TaperWeights
    left_filters: np.ndarray
    right_filters: np.ndarray

    def __post_init__(self):
        left = np.ascontiguousarray(self.left_filters, dtype=float)
        right = np.ascontiguousarray(self.right_filters, dtype=float)
        k = n_channels(self.order)
        if left.shape != right.shape or left.shape[0] != k:
            raise ValueError(f"expected {k} filters per ear, got "
                             f"{left.shape} / {right.shape}")
        if not 0 < self.fc < self.fs / 2:
            raise ValueError("fc must lie in (0, fs/2)")
        object.__setattr__(self, "left_filters", left)
        object.__setattr__(self, "right_filters", right)

    @property
    def filter_len(self):
        return self.left_filters.shape[1]


def fit_bimagls(hset, order, fc=DEFAULT_FC, taper=None, nfft=DEFAULT_NFFT,
                filter_len=DEFAULT_FILTER_LEN, reg=DEFAULT_REG):
    """Fit a binaural decoder to an HRTF set.

    Per rfft bin below `fc`: Tikhonov-regularized complex least squares of
    SH-channel filters against the measured responses, weighted by the
    grid quadrature.  At and above `fc`: magnitude least squares, with the
    target phase carried over from the reconstruction at the previous bin.
    `reg` scales the Tikhonov term relative to the largest singular value
    of the weighted SH matrix.  Taper gains multiply the solved filters
    per order.  The spectral solution is converted to FIR filters of
    `filter_len` taps via inverse FFT with a circular shift of
    filter_len//2 and raised-cosine edge fades.

    The set should be conditioned first (cropped before the first
    reflection, low-frequency extended); the fit itself does not check.
    """
    if hset.n_directions == 0:
        raise ValueError("empty measurement grid")
    if order < 1:
        raise ValueError("order must be at least 1")
    fs = hset.fs
    if not 0 < fc < fs / 2:
        raise ValueError("fc must lie in (0, fs/2)")
    if filter_len > nfft:
        raise ValueError("filter_len cannot exceed nfft")
    if taper is None:
        taper = taper_weights(order, "none")
    if taper.order != order:
        raise ValueError("taper order does not match decoder order")

    basis = sh_matrix(order, hset.azimuths(), hset.elevations())
    sqw = np.sqrt(hset.quadrature_weights)
    u_mat, sing, vt = np.linalg.svd(sqw[:, None] * basis, full_matrices=False)
    lam = reg * sing[0]
    if not np.isfinite(lam) or sing[0] == 0:
        raise ValueError("regularization failure: degenerate SH system")
    shrink = sing / (sing ** 2 + lam ** 2)
    # g = V diag(shrink) U^T W^(1/2) H, applied bin by bin
    solve = (vt.T * shrink) @ u_mat.T

    freqs = np.fft.rfftfreq(nfft, 1.0 / fs)
    n_bins = len(freqs)
    spectra = {}
    for ear, irs in (("left", hset.left_irs), ("right", hset.right_irs)):
        h_meas = np.fft.rfft(irs, nfft, axis=1)  # (n_dirs, n_bins)
        g_bins = np.empty((n_bins, basis.shape[1]), dtype=complex)
        recon_phase = None
        for k in range(n_bins):
            if freqs[k] < fc or recon_phase is None:
                target = h_meas[:, k]
            else:
                target = np.abs(h_meas[:, k]) * np.exp(1j * recon_phase)
            g = solve @ (sqw * target)
            g_bins[k] = g
            recon_phase = np.angle(basis @ g)
        spectra[ear] = g_bins

    gains = taper.channel_gains()
    shift = filter_len // 2
    # Short filters shrink the fades so the main tap at filter_len//2
    # never sits inside a ramp; 512 taps keep the full 16/64 windows.
    n_in = min(_FADE_IN, max(1, filter_len // 8))
    n_out = min(_FADE_OUT, max(1, filter_len // 4))
    fade_in = 0.5 * (1 - np.cos(np.pi * np.arange(1, n_in + 1) / (n_in + 1)))
    fade_out = 0.5 * (1 + np.cos(np.pi * np.arange(1, n_out + 1)
                                 / (n_out + 1)))
    filters = {}
    for ear, g_bins in spectra.items():
        firs = np.fft.irfft(g_bins * gains[None, :], nfft, axis=0)
        firs = np.roll(firs, shift, axis=0)[:filter_len]
        firs[:n_in] *= fade_in[:, None]
        firs[-n_out:] *= fade_out[:, None]
        filters[ear] = firs.T.copy()

    return BinauralDecoder(order=order, fs=fs, fc=fc, taper=taper,
                           left_filters=filters["left"],
                           right_filters=filters["right"])


def decode_binaural(sig, dec):
    """Render an ambisonic signal to two ears with a fitted decoder."""
    if sig.order != dec.order:
        raise ValueError(f"signal order {sig.order} != decoder {dec.order}")
    if sig.fs != dec.fs:
        raise ValueError(f"signal fs {sig.fs} != decoder {dec.fs}")
    left = convolve_channels(sig.data, dec.left_filters.T).sum(axis=1)
    right = convolve_channels(sig.data, dec.right_filters.T).sum(axis=1)
    return BinauralSignal(fs=sig.fs, data=np.stack([left, right], axis=1))


def decode_bilateral(left_field, right_field, dec):
    """Render per-ear sound fields: each ear hears its own field only."""
    if left_field.order != right_field.order or left_field.fs != right_field.fs:
        raise ValueError("ear fields disagree in order or sample rate")
    if left_field.data.shape != right_field.data.shape:
        raise ValueError("ear fields disagree in length")
    if left_field.order != dec.order or left_field.fs != dec.fs:
        raise ValueError("field does not match decoder order/fs")
    left = convolve_channels(left_field.data, dec.left_filters.T).sum(axis=1)
    right = convolve_channels(right_field.data, dec.right_filters.T).sum(axis=1)
    return BinauralSignal(fs=left_field.fs,
                          data=np.stack([left, right], axis=1))


# ---------------------------------------------------------------------------
# loudspeaker decoding


@dataclass(frozen=True)
class LoudspeakerLayout:
    """Named speaker directions for a physical array."""

    directions: tuple
    names: tuple
    name: str = "layout"

    def __post_init__(self):
        if len(self.directions) != len(self.names):
            raise ValueError("one name per speaker required")
        seen = set()
        for d in self.directions:
            key = (round(d.azimuth, 9), round(d.elevation, 9))
            if key in seen:
                raise ValueError(f"duplicate speaker direction {key}")
            seen.add(key)
        object.__setattr__(self, "directions", tuple(self.directions))
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self):
        return len(self.directions)

    @classmethod
    def from_text(cls, path):
        """Parse a plain-text layout: `name azimuth_deg elevation_deg`.

        Blank lines and `#` comments are skipped.  A `name:` header line
        sets the layout name.
        """
        directions, names, layout_name = [], [], None
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if line.startswith("name:"):
                    layout_name = line.split(":", 1)[1].strip()
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise ValueError(
                        f"{path}:{lineno}: expected 'name az_deg el_deg'")
                names.append(parts[0])
                directions.append(SphericalDirection.from_degrees(
                    float(parts[1]), float(parts[2])))
        return cls(directions=tuple(directions), names=tuple(names),
                   name=layout_name or "layout")

    def to_text(self, path):
        lines = [f"name: {self.name}", "# speaker azimuth_deg elevation_deg"]
        for nm, d in zip(self.names, self.directions):
            lines.append(f"{nm} {math.degrees(d.azimuth):.4f} "
                         f"{math.degrees(d.elevation):.4f}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class LsDecoder:
    """Speaker gain matrix with in-phase degree weights baked in."""

    matrix: np.ndarray  # (n_speakers, n_channels), applied to SN3D input
    order: int
    inphase: np.ndarray  # per-degree weights, g[0] = 1

    def __post_init__(self):
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("non-finite decoder gains")
        if self.matrix.shape[1] != n_channels(self.order):
            raise ValueError("matrix width does not match order")

    def decode(self, sig):
        """Speaker feeds from an ambisonic signal, shape (T, n_speakers).

        Input of higher order is truncated to the decoder's channels
        (the array cannot reproduce what it cannot resolve); lower
        order is an error.
        """
        if sig.order < self.order:
            raise ValueError("signal order below decoder order")
        return sig.data[:, :self.matrix.shape[1]] @ self.matrix.T


def inphase_weights(order):
    """Per-degree in-phase weights g_n = N!(N+1)! / ((N+n+1)!(N-n)!).

    Normalized so g_0 = 1 (the formula already is).  These are the SH
    expansion coefficients of ((1+cos theta)/2)^N, the all-positive
    virtual microphone pattern; hence decoded speaker gains stay
    non-negative on uniform layouts.
    """
    n = np.arange(order + 1)
    log_g = (math.lgamma(order + 1) + math.lgamma(order + 2)
             - np.array([math.lgamma(order + k + 2) for k in n])
             - np.array([math.lgamma(order - k + 1) for k in n]))
    return np.exp(log_g)


def fit_inphase_decoder(layout, order, method="pinv"):
    """Loudspeaker decoder with per-degree in-phase weighting.

    `method="pinv"` mode-matches via pseudo-inverse and suits irregular
    arrays.  `method="sampling"` uses the transpose of the SH matrix; on
    (near-)uniform layouts it reproduces the in-phase virtual-microphone
    pattern exactly, so decoded plane-wave gains are non-negative.
    """
    n_spk = len(layout)
    k = n_channels(order)
    if n_spk == 0:
        raise ValueError("empty layout")
    if n_spk < k:
        warnings.warn(
            f"layout has {n_spk} speakers but order {order} uses {k} "
            f"channels; decode is minimum-norm", stacklevel=2)
    az = np.array([d.azimuth for d in layout.directions])
    el = np.array([d.elevation for d in layout.directions])
    basis = sh_matrix(order, az, el) * sn3d_to_n3d_factors(order)
    g = inphase_weights(order)
    degrees = np.repeat(np.arange(order + 1),
                        2 * np.arange(order + 1) + 1)
    # fold the SN3D->N3D conversion and degree weights into the matrix
    weights = g[degrees] * sn3d_to_n3d_factors(order)
    if method == "sampling":
        matrix = basis / n_spk * weights[None, :]
    elif method == "pinv":
        rank = np.linalg.matrix_rank(basis)
        if rank < min(n_spk, k):
            raise ValueError(
                f"degenerate layout: rank {rank} < {min(n_spk, k)}")
        matrix = np.linalg.pinv(basis).T * weights[None, :]
    else:
        raise ValueError(f"unknown decode method {method!r}")
    return LsDecoder(matrix=matrix, order=order, inphase=g)


def pad_ambisonics_order(sig, target_order):
    """Zero-pad an ambisonic signal up to a higher order."""
    if target_order < sig.order:
        raise ValueError("target order below signal order")
    if target_order == sig.order:
        return sig
    padded = np.zeros((sig.data.shape[0], n_channels(target_order)))
    padded[:, :sig.data.shape[1]] = sig.data
    return AmbiSignal(order=target_order, fs=sig.fs, data=padded)


def normalize_feeds(feeds, reference=1.0):
    """Scale a multichannel signal to a fixed total sum of squares."""
    feeds = np.asarray(feeds, dtype=float)
    total = float(np.sum(feeds ** 2))
    if total == 0:
        raise ValueError("cannot normalize an all-zero signal")
    return feeds * math.sqrt(reference / total)


# ---------------------------------------------------------------------------
# serialization


def fingerprint(dec):
    """Short content hash of a decoder.

    Hashes the float32 wire format so save/load round trips agree.
    """
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dec.left_filters, dtype=np.float32).tobytes())
    h.update(np.ascontiguousarray(dec.right_filters, dtype=np.float32).tobytes())
    h.update(f"{dec.order}/{dec.fs}/{dec.fc}".encode())
    return h.hexdigest()[:16]


def save_decoder(path_stem, dec, extra_meta=None):
    """Write decoder filters as <stem>_left.wav / <stem>_right.wav + JSON.

    Each WAV holds one channel per ACN index.  The manifest records fit
    parameters and a fingerprint of the filter data.
    """
    stem = str(path_stem)
    audioio.write_wav(stem + "_left.wav", dec.fs, dec.left_filters.T)
    audioio.write_wav(stem + "_right.wav", dec.fs, dec.right_filters.T)
    meta = {
        "order": dec.order,
        "fs": dec.fs,
        "fc": dec.fc,
        "filter_len": dec.filter_len,
        "taper_weights": dec.taper.per_order_gain.tolist(),
        "convention": "ACN/SN3D",
        "fingerprint": fingerprint(dec),
    }
    if extra_meta:
        meta.update(extra_meta)
    audioio.write_json(stem + ".json", meta)


def load_decoder(path_stem):
    stem = str(path_stem)
    meta = audioio.read_json(stem + ".json")
    _, left = audioio.read_wav(stem + "_left.wav", expect_fs=meta["fs"])
    _, right = audioio.read_wav(stem + "_right.wav", expect_fs=meta["fs"])
    taper = TaperWeights(order=meta["order"],
                         per_order_gain=np.array(meta["taper_weights"]))
    dec = BinauralDecoder(order=meta["order"], fs=meta["fs"], fc=meta["fc"],
                          taper=taper, left_filters=left.T.astype(float),
                          right_filters=right.T.astype(float))
    stored = meta.get("fingerprint")
    if stored is not None and stored != fingerprint(dec):
        raise ValueError(f"decoder fingerprint mismatch in {stem}.json")
    return dec


def resample_decoder(dec, fs_new):
    """Polyphase-resample decoder filters to another sample rate."""
    if fs_new == dec.fs:
        return dec
    from fractions import Fraction

    frac = Fraction(fs_new, dec.fs)
    left = signal.resample_poly(dec.left_filters, frac.numerator,
                                frac.denominator, axis=1)
    right = signal.resample_poly(dec.right_filters, frac.numerator,
                                 frac.denominator, axis=1)
    if dec.fc >= fs_new / 2:
        raise ValueError("transition frequency above the new Nyquist")
    return replace(dec, fs=fs_new, left_filters=left, right_filters=right)
