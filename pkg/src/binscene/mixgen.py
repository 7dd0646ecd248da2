"""Corpus construction: chunking, augmentation, rendering, and manifests.

Training examples are rendered per ear (each ear hears the sound field
at its own position) and mixed in the binaural domain against a
two-channel noise corpus. Evaluation scenes are mixed in the SH domain
at the head center and decoded to loudspeaker feeds. Both paths weight
the noise so the binaural SNR comes out at the requested value.

Every record draws from counter-based streams keyed by (master seed,
record id), so a corpus regenerates identically whether built in one
run, resumed after an interrupt, or rendered out of order.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

from . import __version__
from .audioio import read_json, read_wav, write_json, write_wav
from .decoder import (decode_binaural, decode_bilateral, fingerprint,
                      normalize_feeds, pad_ambisonics_order)
from .room import ear_positions, rt60_to_reflectivity, simulate_ambi_rir
from .scene import SceneSpec, record_rng, sample_scene
from .signals import AmbiSignal, BinauralSignal, convolve_channels, total_energy

SPLITS = ("tr", "cv", "tt")

# Training augmentation mix: (phase_invert, lr_swap, stretch?) combos
# with their share of the training set. Four plain combos carry eight
# times the weight of the two stretched ones.
DEFAULT_AUG_MIX = (
    ((False, False, False), 4 / 17),
    ((True, False, False), 4 / 17),
    ((False, True, False), 4 / 17),
    ((True, True, False), 4 / 17),
    ((False, False, True), 1 / 34),
    ((True, True, True), 1 / 34),
)
STRETCH_RANGE = (0.9, 1.1)

# Stream id layout inside one record: the scene sampler owns the plain
# record id (attempt k folds in at bit 40) and mix decisions own the
# id with the top bit set. Record ids must stay below 2**40.
_MIX_STREAM_BIT = 1 << 63
_ATTEMPT_SHIFT = 40


@dataclass(frozen=True)
class AugmentationSpec:
    """Noise transformations: sign flip, channel swap, time stretch.

    stretch is a duration factor in [0.9, 1.1], None for no stretch,
    or "random" to be resolved from a seed at apply time.
    """

    phase_invert: bool = False
    lr_swap: bool = False
    stretch: object = None

    def __post_init__(self):
        s = self.stretch
        if s is None or s == "random":
            return
        s = float(s)
        if not STRETCH_RANGE[0] <= s <= STRETCH_RANGE[1]:
            raise ValueError(f"stretch {s} outside {STRETCH_RANGE}")
        object.__setattr__(self, "stretch", s)

    def to_dict(self):
        return {"phase_invert": self.phase_invert, "lr_swap": self.lr_swap,
                "stretch": self.stretch}

    @classmethod
    def from_dict(cls, d):
        return cls(d["phase_invert"], d["lr_swap"], d.get("stretch"))


@dataclass(frozen=True)
class UtteranceRecord:
    """Provenance of one rendered example."""

    record_id: int
    split: str
    speech_id: str
    noise_id: str
    scene: SceneSpec
    aug: AugmentationSpec
    noise_gain: float
    input_path: str = ""
    target_path: str = ""
    chunk_start: int = 0
    speech_padded: bool = False
    coupling_applied: bool = False

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")
        if not math.isfinite(self.noise_gain):
            raise ValueError("noise_gain must be finite")

    def to_dict(self):
        d = {
            "record_id": self.record_id,
            "split": self.split,
            "speech_id": self.speech_id,
            "noise_id": self.noise_id,
            "scene": self.scene.to_dict(),
            "aug": self.aug.to_dict(),
            "noise_gain": float(self.noise_gain),
            "input_path": self.input_path,
            "target_path": self.target_path,
            "chunk_start": self.chunk_start,
            "speech_padded": self.speech_padded,
            "coupling_applied": self.coupling_applied,
        }
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            record_id=d["record_id"], split=d["split"],
            speech_id=d["speech_id"], noise_id=d["noise_id"],
            scene=SceneSpec.from_dict(d["scene"]),
            aug=AugmentationSpec.from_dict(d["aug"]),
            noise_gain=d["noise_gain"],
            input_path=d.get("input_path", ""),
            target_path=d.get("target_path", ""),
            chunk_start=d.get("chunk_start", 0),
            speech_padded=d.get("speech_padded", False),
            coupling_applied=d.get("coupling_applied", False),
        )


@dataclass(frozen=True)
class DatasetManifest:
    """A rendered corpus: global parameters plus one line per record."""

    version: str
    decoder_fingerprint: str
    fs: int
    master_seed: int
    records: tuple

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.record_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate record ids in manifest")

    def save(self, path):
        import json
        header = {"schema": 1, "version": self.version,
                  "decoder_fingerprint": self.decoder_fingerprint,
                  "fs": self.fs, "master_seed": self.master_seed}
        with open(path, "w") as f:
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in self.records:
                f.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        import json
        with open(path) as f:
            lines = [ln for ln in f.read().splitlines() if ln.strip()]
        if not lines:
            raise ValueError(f"empty manifest {path}")
        header = json.loads(lines[0])
        records = tuple(UtteranceRecord.from_dict(json.loads(ln))
                        for ln in lines[1:])
        return cls(version=header["version"],
                   decoder_fingerprint=header["decoder_fingerprint"],
                   fs=header["fs"], master_seed=header["master_seed"],
                   records=records)


# ---------------------------------------------------------------------------
# chunking and augmentation


def chunk_start(signal, duration_s=4.0, fs=16000, hop_s=0.25):
    """Start sample of the highest-energy window of the given duration.

    Windows sit on a hop grid (default 0.25 s) plus the final
    position; ties go to the earliest start.
    """
    x = np.asarray(signal, dtype=float)
    n = int(round(duration_s * fs))
    if x.shape[0] < n:
        raise ValueError(f"signal ({x.shape[0]} samples) shorter than "
                         f"requested chunk ({n})")
    sq = x * x if x.ndim == 1 else (x * x).sum(axis=1)
    csum = np.concatenate([[0.0], np.cumsum(sq)])
    hop = max(1, int(round(hop_s * fs)))
    starts = list(range(0, x.shape[0] - n + 1, hop))
    if starts[-1] != x.shape[0] - n:
        starts.append(x.shape[0] - n)
    starts = np.asarray(starts)
    energies = csum[starts + n] - csum[starts]
    return int(starts[np.argmax(energies)])


def select_chunk(signal, duration_s=4.0, fs=16000, hop_s=0.25):
    """The highest-energy window itself; see chunk_start for the rule."""
    n = int(round(duration_s * fs))
    start = chunk_start(signal, duration_s, fs, hop_s)
    return np.asarray(signal)[start:start + n]


def resolve_augmentation(spec, seed=0, record_id=0):
    """Replace stretch="random" with a concrete factor drawn uniformly."""
    if spec.stretch != "random":
        return spec
    rng = record_rng(seed, record_id)
    lo, hi = STRETCH_RANGE
    return replace(spec, stretch=float(lo + (hi - lo) * rng.random()))


def augment_noise(noise, spec, seed=None):
    """Apply sign flip, channel swap, and time stretch, in that order.

    Flip and swap are exact (bit-identical when applied twice). The
    stretch resamples along time by a rational approximation of the
    factor, scaling the duration accordingly. A "random" stretch needs
    a seed to resolve the factor.
    """
    y = np.asarray(noise, dtype=float)
    if y.ndim != 2 or y.shape[1] != 2:
        raise ValueError(f"expected (T, 2) noise, got {y.shape}")
    if spec.stretch == "random":
        if seed is None:
            raise ValueError('stretch="random" needs a seed to resolve')
        spec = resolve_augmentation(spec, seed)
    if spec.phase_invert:
        y = -y
    if spec.lr_swap:
        y = y[:, ::-1]
    if spec.stretch is not None and spec.stretch != 1.0:
        frac = Fraction(spec.stretch).limit_denominator(1000)
        y = resample_poly(y, frac.numerator, frac.denominator, axis=0)
    return np.ascontiguousarray(y)


def weight_snr_binaural(speech, noise, snr_db):
    """Noise gain so speech/noise energy ratio lands at snr_db.

    Energies are summed over both ears. Accepts BinauralSignal or
    plain (T, 2) arrays.
    """
    es = total_energy(speech.data if isinstance(speech, BinauralSignal) else speech)
    en = total_energy(noise.data if isinstance(noise, BinauralSignal) else noise)
    if es == 0.0:
        raise ValueError("silent speech has no definable SNR")
    if en == 0.0:
        raise ValueError("silent noise has no definable SNR")
    return math.sqrt((es / en) * 10.0 ** (-snr_db / 10.0))


# ---------------------------------------------------------------------------
# rendering


def _pad_to(data, n):
    if data.shape[0] >= n:
        return data
    out = np.zeros((n,) + data.shape[1:])
    out[:data.shape[0]] = data
    return out


def _fit_length(noise, n):
    # tile cyclically when short, crop when long
    if noise.shape[0] >= n:
        return noise[:n]
    reps = -(-n // noise.shape[0])
    return np.tile(noise, (reps, 1))[:n]


def render_scene_fields(scene, order, fs, mode, fractional_delay=False):
    """Left/right-ear SH fields for a scene, padded to equal length."""
    left, right = ear_positions(scene.room, scene.head)
    src = scene.target_position()
    rl = simulate_ambi_rir(scene.room, src, left, scene.head, order, fs,
                           mode=mode, fractional_delay=fractional_delay)
    rr = simulate_ambi_rir(scene.room, src, right, scene.head, order, fs,
                           mode=mode, fractional_delay=fractional_delay)
    n = max(len(rl), len(rr))
    lf = AmbiSignal(order, fs, _pad_to(rl.data, n))
    rf = AmbiSignal(order, fs, _pad_to(rr.data, n))
    return lf, rf


def render_scene_binaural(scene, speech, dec, mode="full"):
    """Bilateral render of a mono source through a scene's ear fields."""
    speech = np.asarray(speech, dtype=float)
    if speech.ndim != 1:
        raise ValueError("speech must be mono")
    lf, rf = render_scene_fields(scene, dec.order, dec.fs, mode)
    lsig = AmbiSignal(dec.order, dec.fs, convolve_channels(speech, lf.data))
    rsig = AmbiSignal(dec.order, dec.fs, convolve_channels(speech, rf.data))
    return decode_bilateral(lsig, rsig, dec)


def build_training_example(scene, speech, noise, dec, aug, coupling=None,
                           seed=None):
    """Render one (input, target) training pair plus its provenance.

    target: direct-path-only render of the speech. input: full-reverb
    render plus augmented noise, weighted so the binaural SNR equals
    scene.snr_db before any coupling correction. noise=None renders
    the reverberant speech alone. When a coupling filter is given it
    is applied to both signals of the pair.

    Returns (input, target, record); the record carries placeholder
    ids and paths for the caller to fill in.
    """
    reverb = render_scene_binaural(scene, speech, dec, mode="full")
    direct = render_scene_binaural(scene, speech, dec, mode="direct_only")
    target = np.asarray(_pad_to(direct.data, len(reverb)))

    if aug.stretch == "random":
        aug = resolve_augmentation(aug, 0 if seed is None else seed)
    if noise is None:
        gain = 0.0
        mixed = reverb.data.copy()
    else:
        shaped = augment_noise(noise, aug)
        shaped = _fit_length(shaped, len(reverb))
        gain = weight_snr_binaural(reverb.data, shaped, scene.snr_db)
        mixed = reverb.data + gain * shaped

    if coupling is not None:
        mixed = coupling.apply(mixed, axis=0)
        target = coupling.apply(target, axis=0)

    record = UtteranceRecord(
        record_id=scene.record_id, split="tr", speech_id="", noise_id="",
        scene=scene, aug=aug, noise_gain=gain,
        coupling_applied=coupling is not None)
    return (BinauralSignal(dec.fs, mixed), BinauralSignal(dec.fs, target),
            record)


def build_eval_scene(preset, speech, ambi_noise, dec, ls):
    """Render one evaluation bundle: feeds, clean reference, SH mixture.

    The speech field is the full-reverb RIR at the head center
    convolved with the speech; the noise field is weighted so the
    binaural decode of the mixture sits at preset.snr_db. Feeds come
    from the loudspeaker decoder and are normalized to unit total
    energy. The reference is the direct-only bilateral render.
    """
    speech = np.asarray(speech, dtype=float)
    if speech.ndim != 1:
        raise ValueError("speech must be mono")
    rir = simulate_ambi_rir(preset.room, preset.target_position(),
                            np.asarray(preset.head.position), preset.head,
                            dec.order, dec.fs, mode="full")
    sfield = AmbiSignal(dec.order, dec.fs,
                        convolve_channels(speech, rir.data))

    if ambi_noise is None or total_energy(ambi_noise.data) == 0.0:
        mixture = sfield
    else:
        if ambi_noise.fs != dec.fs:
            raise ValueError("noise sample rate does not match decoder")
        noise = pad_ambisonics_order(ambi_noise, dec.order)
        ndata = _fit_length(noise.data, len(sfield))
        sbin = decode_binaural(sfield, dec)
        nbin = decode_binaural(AmbiSignal(dec.order, dec.fs, ndata), dec)
        gain = weight_snr_binaural(sbin, nbin, preset.snr_db)
        mixture = AmbiSignal(dec.order, dec.fs, sfield.data + gain * ndata)

    feeds = normalize_feeds(ls.decode(mixture))
    reference = render_scene_binaural(preset, speech, dec, mode="direct_only")
    return feeds, reference, mixture


# ---------------------------------------------------------------------------
# corpus generation


def speaker_of(path):
    """Speaker id by file naming convention: basename up to the first
    '-' or '_' (e.g. "1034-121119-0001.wav" -> "1034")."""
    stem = os.path.splitext(os.path.basename(path))[0]
    for sep in "-_":
        if sep in stem:
            return stem.split(sep)[0]
    return stem


@dataclass(frozen=True)
class CorpusJob:
    """Everything generate_corpus needs to render a dataset.

    counts, speech_files, and noise_files map split names ("tr", "cv",
    "tt") to a record count and source file lists. Augmentations apply
    to training records only; cv/tt always render unaugmented noise.
    """

    out_dir: str
    fs: int
    counts: dict
    speech_files: dict
    noise_files: dict
    master_seed: int
    decoder: object
    coupling: object = None
    aug_mix: tuple = DEFAULT_AUG_MIX
    chunk_s: float = 4.0
    resume: bool = False
    max_scene_attempts: int = 200
    jobs: int = 1


class CorpusRenderError(RuntimeError):
    """Some records failed; successful ones stay on disk for resume."""

    def __init__(self, failures, total):
        self.failures = failures
        lines = "\n".join(f"  record {rid}: {msg}" for rid, msg in failures)
        super().__init__(
            f"{len(failures)} of {total} records failed:\n{lines}")


def check_split_contamination(speech_files, noise_files):
    """Reject source lists whose speakers or noise files cross splits."""
    speakers = {s: {speaker_of(p) for p in speech_files.get(s, ())}
                for s in SPLITS}
    for i, a in enumerate(SPLITS):
        for b in SPLITS[i + 1:]:
            shared = speakers[a] & speakers[b]
            if shared:
                raise ValueError(
                    f"speaker(s) {sorted(shared)} appear in both "
                    f"'{a}' and '{b}' splits")
            overlap = set(noise_files.get(a, ())) & set(noise_files.get(b, ()))
            if overlap:
                raise ValueError(
                    f"noise file(s) {sorted(overlap)} appear in both "
                    f"'{a}' and '{b}' splits")


def _draw_augmentation(rng, aug_mix):
    u = rng.random()
    acc = 0.0
    for (phase_invert, lr_swap, stretched), weight in aug_mix:
        acc += weight
        if u < acc:
            break
    stretch = None
    if stretched:
        lo, hi = STRETCH_RANGE
        stretch = float(lo + (hi - lo) * rng.random())
    return AugmentationSpec(phase_invert, lr_swap, stretch)


def _sample_feasible_scene(master_seed, record_id, max_attempts):
    """Scene draw with rejection of rooms the simulator cannot honor.

    Very short decay targets need more absorption than walls can
    provide (Sabine alpha > 1); those draws are skipped by folding the
    attempt number into the stream id.
    """
    if record_id >= 1 << _ATTEMPT_SHIFT:
        raise ValueError(f"record_id must stay below 2**{_ATTEMPT_SHIFT}")
    for attempt in range(max_attempts):
        sid = record_id + (attempt << _ATTEMPT_SHIFT)
        try:
            scene = sample_scene(master_seed, sid)
            rt60_to_reflectivity(scene.room)
        except ValueError:
            continue
        return scene
    raise ValueError(
        f"no simulable scene in {max_attempts} attempts for record "
        f"{record_id} (seed {master_seed})")


def _load_speech(path, fs, chunk_s):
    _, audio = read_wav(path, expect_fs=fs)
    if audio.ndim == 2:
        audio = audio[:, 0]
    n = int(round(chunk_s * fs))
    if audio.shape[0] < n:
        return _pad_to(audio, n), 0, True
    start = chunk_start(audio, chunk_s, fs)
    return audio[start:start + n], start, False


def generate_corpus(job):
    """Render a training corpus and return its manifest.

    Records are keyed by (master seed, record id) so interrupted runs
    resume to byte-identical results: a record whose sidecar and audio
    already exist is loaded, not re-rendered. Split order is tr, cv,
    tt with sequential record ids.
    """
    if job.decoder.fs != job.fs:
        raise ValueError(f"decoder fs {job.decoder.fs} != corpus fs {job.fs}")
    check_split_contamination(job.speech_files, job.noise_files)
    total_weight = sum(w for _, w in job.aug_mix)
    if abs(total_weight - 1.0) > 1e-9:
        raise ValueError("augmentation mix weights must sum to 1")

    os.makedirs(job.out_dir, exist_ok=True)
    tasks = []
    record_id = 0
    for split in SPLITS:
        count = job.counts.get(split, 0)
        if count == 0:
            continue
        speech_list = job.speech_files.get(split, ())
        noise_list = job.noise_files.get(split, ())
        if not speech_list or not noise_list:
            raise ValueError(f"split '{split}' requested but has no sources")
        split_dir = os.path.join(job.out_dir, split)
        os.makedirs(split_dir, exist_ok=True)
        for _ in range(count):
            tasks.append((split, record_id, speech_list, noise_list, split_dir))
            record_id += 1

    def run(task):
        split, rid, speech_list, noise_list, split_dir = task
        return _render_record(job, split, rid, speech_list, noise_list,
                              split_dir)

    records, failures = [], []
    if job.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=job.jobs) as pool:
            futures = [(task[1], pool.submit(run, task)) for task in tasks]
        for rid, fut in futures:
            try:
                records.append(fut.result())
            except Exception as e:  # collected into one report below
                failures.append((rid, str(e)))
    else:
        for task in tasks:
            try:
                records.append(run(task))
            except Exception as e:
                failures.append((task[1], str(e)))
    if failures:
        raise CorpusRenderError(failures, len(tasks))

    manifest = DatasetManifest(
        version=__version__, decoder_fingerprint=fingerprint(job.decoder),
        fs=job.fs, master_seed=job.master_seed, records=tuple(records))
    manifest.save(os.path.join(job.out_dir, "manifest.jsonl"))
    return manifest


def _render_record(job, split, record_id, speech_list, noise_list, split_dir):
    stem = f"record_{record_id:06d}"
    sidecar = os.path.join(split_dir, stem + ".json")
    input_rel = os.path.join(split, stem + "_input.wav")
    target_rel = os.path.join(split, stem + "_target.wav")
    input_abs = os.path.join(job.out_dir, input_rel)
    target_abs = os.path.join(job.out_dir, target_rel)
    if job.resume and all(os.path.exists(p)
                          for p in (sidecar, input_abs, target_abs)):
        return UtteranceRecord.from_dict(read_json(sidecar))

    mix_rng = record_rng(job.master_seed, record_id | _MIX_STREAM_BIT)
    speech_path = speech_list[int(mix_rng.integers(len(speech_list)))]
    noise_path = noise_list[int(mix_rng.integers(len(noise_list)))]
    if split == "tr":
        aug = _draw_augmentation(mix_rng, job.aug_mix)
    else:
        aug = AugmentationSpec()

    scene = _sample_feasible_scene(job.master_seed, record_id,
                                   job.max_scene_attempts)
    speech, start, padded = _load_speech(speech_path, job.fs, job.chunk_s)
    _, noise = read_wav(noise_path, expect_fs=job.fs)

    inp, tgt, rec = build_training_example(
        scene, speech, noise, job.decoder, aug, coupling=job.coupling)
    write_wav(input_abs, job.fs, inp.data)
    write_wav(target_abs, job.fs, tgt.data)

    rec = replace(
        rec, record_id=record_id, split=split,
        speech_id=os.path.splitext(os.path.basename(speech_path))[0],
        noise_id=os.path.splitext(os.path.basename(noise_path))[0],
        input_path=input_rel, target_path=target_rel,
        chunk_start=start, speech_padded=padded)
    write_json(sidecar, rec.to_dict())
    return rec
