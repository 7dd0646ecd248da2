"""Intrusive evaluation: alignment, level, SISDR, best ear, benefit.

All comparisons are reference-based. Recordings are first time-aligned
to the clean reference by envelope cross-correlation (both ears get
the same shift, preserving interaural timing), level-normalized, and
scored. Monaural metrics reduce over ears by taking the better one.
A benefit value is the metric difference between a processed recording
and the unprocessed (bypass) recording against the same reference.

External auditory-model metrics plug in as executables that take
(reference path, estimate path, audiogram descriptor) and print a
scalar; nothing here reimplements them.
"""

from __future__ import annotations

import math
import subprocess
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, hilbert

from .audioio import write_wav
from .signals import BinauralSignal

SISDR_CAP_DB = 60.0
DEFAULT_RMS_DBFS = -26.0
_MIN_OVERLAP_S = 1.0


def _ear_sum(x):
    x = np.asarray(x, dtype=float)
    return x.sum(axis=1) if x.ndim == 2 else x


def _data(sig):
    return sig.data if isinstance(sig, BinauralSignal) else np.asarray(sig, dtype=float)


def align_xcorr(reference, estimate, max_lag_s=0.5, fs=None):
    """Align an estimate to a reference by envelope cross-correlation.

    The lag is the argmax of the cross-correlation of the ear-summed
    Hilbert envelopes, searched within +-max_lag_s; exact ties go to
    the smallest |lag|. The estimate is shifted by -lag, both signals
    are trimmed to common support, and (reference, estimate, lag) is
    returned. Less than one second of overlap after shifting is an
    error.
    """
    if isinstance(reference, BinauralSignal):
        if not isinstance(estimate, BinauralSignal):
            raise ValueError("mixed signal types")
        if reference.fs != estimate.fs:
            raise ValueError("sample rates differ")
        fs = reference.fs
    elif fs is None:
        raise ValueError("fs required for plain arrays")
    ref = _data(reference)
    est = _data(estimate)
    env_r = np.abs(hilbert(_ear_sum(ref)))
    env_e = np.abs(hilbert(_ear_sum(est)))

    max_lag = int(round(max_lag_s * fs))
    # full cross-correlation; index i maps to lag i - (len(ref) - 1)
    corr = fftconvolve(env_e, env_r[::-1])
    lags = np.arange(corr.shape[0]) - (env_r.shape[0] - 1)
    mask = np.abs(lags) <= max_lag
    corr, lags = corr[mask], lags[mask]
    peak = corr.max()
    ties = lags[corr >= peak - 1e-12 * abs(peak)]
    lag = int(ties[np.lexsort((ties, np.abs(ties)))[0]])

    if lag >= 0:
        est = est[lag:]
    else:
        ref = ref[-lag:]
    n = min(ref.shape[0], est.shape[0])
    if n < _MIN_OVERLAP_S * fs:
        raise ValueError(f"only {n / fs:.2f} s of overlap after shifting; "
                         f"need {_MIN_OVERLAP_S:.0f} s")
    ref, est = ref[:n], est[:n]
    if isinstance(reference, BinauralSignal):
        return (BinauralSignal(fs, ref), BinauralSignal(fs, est), lag)
    return ref, est, lag


def normalize_level(signal, target_rms_dbfs=DEFAULT_RMS_DBFS):
    """Scale so the ear-summed broadband RMS hits the target in dBFS.

    Both channels get the same factor, preserving level differences
    between ears. Idempotent; silence is an error.
    """
    data = _data(signal)
    rms = math.sqrt(float(np.mean(_ear_sum(data) ** 2)))
    if rms == 0.0:
        raise ValueError("cannot normalize silence")
    scale = 10.0 ** (target_rms_dbfs / 20.0) / rms
    if isinstance(signal, BinauralSignal):
        return BinauralSignal(signal.fs, data * scale)
    return data * scale


def sisdr(estimate, reference):
    """Scale-invariant signal-to-distortion ratio in dB, single channel.

    The reference is scaled by the projection alpha = <est, ref> /
    |ref|^2 and the value is the energy ratio of the scaled reference
    to the residual. Exact reconstructions (zero residual) return the
    +60 dB sentinel, and values above it clip to it, keeping
    aggregation finite.
    """
    est = np.asarray(estimate, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if est.ndim != 1 or ref.ndim != 1:
        raise ValueError("sisdr is single-channel; reduce ears first")
    if est.shape[0] != ref.shape[0]:
        raise ValueError("lengths differ; align first")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("zero reference")
    if float(np.dot(est, est)) == 0.0:
        raise ValueError("zero estimate")
    alpha = float(np.dot(est, ref)) / ref_energy
    residual = alpha * ref - est
    err_energy = float(np.dot(residual, residual))
    if err_energy == 0.0:
        return SISDR_CAP_DB
    value = 10.0 * math.log10(alpha * alpha * ref_energy / err_energy)
    return min(value, SISDR_CAP_DB)


def best_ear(metric_fn, estimate, reference):
    """Max of a monaural metric over ears; ties report the left ear."""
    est = _data(estimate)
    ref = _data(reference)
    left = metric_fn(est[:, 0], ref[:, 0])
    right = metric_fn(est[:, 1], ref[:, 1])
    if right > left:
        return right, "right"
    return left, "left"


def benefit(metric_fn, estimate, baseline, reference):
    """Metric improvement of an estimate over a baseline recording."""
    return metric_fn(estimate, reference) - metric_fn(baseline, reference)


def make_external_metric(executable, audiogram="flat", timeout_s=300.0):
    """Adapter for an external metric program.

    The program is invoked as `executable <reference.wav> <estimate.wav>
    <audiogram>` and must print a scalar to stdout. Returns a metric
    function on (estimate, reference) binaural pairs.
    """
    def metric_fn(estimate, reference):
        with tempfile.TemporaryDirectory(prefix="metric_") as tmp:
            ref_path = f"{tmp}/reference.wav"
            est_path = f"{tmp}/estimate.wav"
            write_wav(ref_path, reference.fs, reference.data)
            write_wav(est_path, estimate.fs, estimate.data)
            out = subprocess.run(
                [str(executable), ref_path, est_path, str(audiogram)],
                capture_output=True, text=True, timeout=timeout_s, check=True)
        return float(out.stdout.strip().split()[-1])
    return metric_fn


# ---------------------------------------------------------------------------
# set evaluation


@dataclass(frozen=True)
class MetricRow:
    """Scores for one (device, scene, condition) recording."""

    device: str
    scene: str
    condition: str
    lag: int = 0
    ear: str = ""
    metrics: dict = field(default_factory=dict)
    deltas: dict = field(default_factory=dict)
    error: str = ""

    def to_dict(self):
        return {"device": self.device, "scene": self.scene,
                "condition": self.condition, "lag": self.lag, "ear": self.ear,
                "metrics": dict(self.metrics), "deltas": dict(self.deltas),
                "error": self.error}


@dataclass(frozen=True)
class MetricReport:
    """Per-item rows plus per-(device, condition) and overall means."""

    rows: tuple
    device_means: dict
    condition_means: dict

    def to_dict(self):
        return {"rows": [r.to_dict() for r in self.rows],
                "device_means": {"/".join(k): v for k, v in self.device_means.items()},
                "condition_means": dict(self.condition_means)}

    def format_text(self):
        lines = []
        for r in sorted(self.rows, key=lambda r: (r.device, r.scene, r.condition)):
            if r.error:
                lines.append(f"{r.device} {r.scene} {r.condition}  ERROR {r.error}")
                continue
            parts = [f"{name}={val:8.3f}" for name, val in sorted(r.metrics.items())]
            parts += [f"d_{name}={val:8.3f}" for name, val in sorted(r.deltas.items())]
            lines.append(f"{r.device} {r.scene} {r.condition}  "
                         + "  ".join(parts) + f"  lag={r.lag} ear={r.ear}")
        lines.append("")
        lines.append("summary (means over scenes)")
        for (device, condition), vals in sorted(self.device_means.items()):
            parts = [f"{name}={val:8.3f}" for name, val in sorted(vals.items())]
            lines.append(f"  {device:16s} {condition:12s} " + "  ".join(parts))
        for condition, vals in sorted(self.condition_means.items()):
            parts = [f"{name}={val:8.3f}" for name, val in sorted(vals.items())]
            lines.append(f"  {'ALL':16s} {condition:12s} " + "  ".join(parts))
        return "\n".join(lines) + "\n"


def _mean_dicts(dicts):
    keys = sorted({k for d in dicts for k in d})
    return {k: float(np.mean([d[k] for d in dicts if k in d])) for k in keys}


def evaluate_set(references, recordings, conditions, baseline="bypass",
                 external_metrics=None, max_lag_s=0.5,
                 target_rms_dbfs=DEFAULT_RMS_DBFS):
    """Score a grid of recordings against per-scene references.

    references: {scene: BinauralSignal}. recordings: {(device, scene,
    condition): BinauralSignal}. Each recording is aligned to its
    reference, normalized, and scored with best-ear SISDR plus any
    external metrics ({name: metric_fn}); deltas are taken against the
    baseline condition of the same (device, scene). A missing baseline
    drops the deltas with a warning; a failing item becomes an error
    row and the run continues. Row order follows sorted keys, so the
    report is independent of input dict ordering.
    """
    external_metrics = external_metrics or {}
    devices = sorted({d for d, _, _ in recordings})
    scenes = sorted({s for _, s, _ in recordings})
    have_baseline = baseline in conditions and any(
        (d, s, baseline) in recordings for d in devices for s in scenes)
    if not have_baseline:
        warnings.warn(f"no '{baseline}' recordings: benefit columns omitted")

    def score(device, scene, condition):
        rec = recordings[(device, scene, condition)]
        ref = references[scene]
        ref_a, rec_a, lag = align_xcorr(ref, rec, max_lag_s=max_lag_s)
        ref_a = normalize_level(ref_a, target_rms_dbfs)
        rec_a = normalize_level(rec_a, target_rms_dbfs)
        value, ear = best_ear(sisdr, rec_a, ref_a)
        out = {"sisdr": value}
        for name, fn in sorted(external_metrics.items()):
            out[name] = float(fn(rec_a, ref_a))
        return out, lag, ear

    rows = []
    for device in devices:
        for scene in scenes:
            base_scores = None
            if have_baseline and (device, scene, baseline) in recordings:
                try:
                    base_scores, _, _ = score(device, scene, baseline)
                except (ValueError, KeyError, subprocess.SubprocessError) as e:
                    base_scores = None
                    warnings.warn(f"baseline failed for {device}/{scene}: {e}")
            for condition in sorted(conditions):
                if (device, scene, condition) not in recordings:
                    continue
                try:
                    vals, lag, ear = score(device, scene, condition)
                except (ValueError, KeyError, subprocess.SubprocessError) as e:
                    rows.append(MetricRow(device, scene, condition,
                                          error=str(e)))
                    continue
                deltas = {}
                if base_scores is not None:
                    deltas = {k: vals[k] - base_scores[k] for k in vals
                              if k in base_scores}
                rows.append(MetricRow(device, scene, condition, lag=lag,
                                      ear=ear, metrics=vals, deltas=deltas))

    device_means = {}
    for device in devices:
        for condition in sorted(conditions):
            got = [r for r in rows if r.device == device
                   and r.condition == condition and not r.error]
            if got:
                merged = _mean_dicts([{**r.metrics,
                                       **{f"d_{k}": v for k, v in r.deltas.items()}}
                                      for r in got])
                device_means[(device, condition)] = merged
    condition_means = {}
    for condition in sorted(conditions):
        got = [r for r in rows if r.condition == condition and not r.error]
        if got:
            condition_means[condition] = _mean_dicts(
                [{**r.metrics, **{f"d_{k}": v for k, v in r.deltas.items()}}
                 for r in got])
    return MetricReport(rows=tuple(rows), device_means=device_means,
                        condition_means=condition_means)
