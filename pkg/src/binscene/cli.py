"""Pipeline orchestration for decoder fitting, synthesis, and scoring.

Four subcommands bind the library into a reproducible pipeline:

  fit-decoder   condition an HRTF set, fit the binaural decoder, save it
  synth         render a training corpus with a manifest
  render-eval   render loudspeaker feeds + references for the eval scenes
  evaluate      score captured recordings against the references

All randomness flows from one master seed in the config (overridable
with --seed). Outputs carry no timestamps, so a rerun with identical
config and inputs is byte-identical.

Exit codes: 0 success, 2 configuration error, 3 data error (missing or
corrupt files, failed records), 4 numeric failure (fit diverged).
"""

from __future__ import annotations

import argparse
import glob as globlib
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .audioio import read_wav, write_json, write_wav
from .config import ConfigError, load_config, require, require_path
from .decoder import (DEFAULT_FC, DEFAULT_FILTER_LEN, DEFAULT_NFFT,
                      DEFAULT_REG, LoudspeakerLayout, fit_bimagls,
                      fit_inphase_decoder, load_decoder, resample_decoder,
                      save_decoder)
from .hrtf import (coupling_compensation_fit, crop_direct, delta_hrtf_set,
                   lfe_extend, load_hrtf_set, load_iir_filter,
                   pure_delay_hrtf_set, rigid_sphere_hrtf_set,
                   save_iir_filter)
from .metrics import evaluate_set, make_external_metric
from .mixgen import CorpusJob, CorpusRenderError, build_eval_scene, generate_corpus
from .scene import eval_scene_presets
from .shmath import sh_matrix, taper_weights
from .signals import AmbiSignal, total_energy

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

log = logging.getLogger("binscene")


class DataError(RuntimeError):
    """Missing, malformed, or incompatible input data."""


class NumericError(RuntimeError):
    """A fit or solve failed to produce finite, stable results."""


# ---------------------------------------------------------------------------
# fit-decoder


_SYNTHETIC_KINDS = {
    "delta": delta_hrtf_set,
    "pure_delay": pure_delay_hrtf_set,
    "rigid_sphere": rigid_sphere_hrtf_set,
}


def _load_hrtf(cfg, sec):
    if "hrtf_path" in sec:
        path = require_path(cfg, sec, "hrtf_path", "decoder")
        try:
            return load_hrtf_set(path)
        except (OSError, KeyError, ValueError) as e:
            raise DataError(f"cannot load HRTF set {path}: {e}") from e
    synth = sec.get("synthetic")
    if not synth:
        raise ConfigError("decoder section needs 'hrtf_path' or 'synthetic'")
    kind = synth.get("kind")
    if kind not in _SYNTHETIC_KINDS:
        raise ConfigError(f"unknown synthetic HRTF kind {kind!r} "
                          f"(known: {sorted(_SYNTHETIC_KINDS)})")
    kwargs = {k: v for k, v in synth.items() if k != "kind"}
    return _SYNTHETIC_KINDS[kind](**kwargs)


def _fit_summary(dec, hset, n_bands_floor=125.0):
    """Mean magnitude error per octave, decoder vs measured set."""
    nfft = 2048
    basis = sh_matrix(dec.order, hset.azimuths(), hset.elevations())
    freqs = np.fft.rfftfreq(nfft, 1.0 / dec.fs)
    lines = []
    recon = {}
    target = {}
    for ear, filters, irs in (("left", dec.left_filters, hset.left_irs),
                              ("right", dec.right_filters, hset.right_irs)):
        recon[ear] = basis @ np.fft.rfft(filters, nfft, axis=1)
        target[ear] = np.fft.rfft(irs, nfft, axis=1)
    f_lo = n_bands_floor
    while f_lo < min(dec.fc, dec.fs / 2):
        f_hi = min(f_lo * 2, dec.fs / 2)
        band = (freqs >= f_lo) & (freqs < f_hi)
        errs = []
        for ear in ("left", "right"):
            t = np.abs(target[ear][:, band])
            r = np.abs(recon[ear][:, band])
            floor = 1e-9 * t.max() if t.max() > 0 else 1e-12
            errs.append(np.abs(20 * np.log10((r + floor) / (t + floor))))
        lines.append((f_lo, f_hi, float(np.mean(np.concatenate(errs)))))
        f_lo = f_hi
    return lines


def cmd_fit_decoder(cfg, args):
    sec = cfg.decoder
    if not sec:
        raise ConfigError("config has no 'decoder' section")
    order = require(sec, "order", "decoder")
    if not isinstance(order, int) or order < 1:
        raise ConfigError("decoder.order must be a positive integer")
    if order > 10:
        log.warning("decoder.order %d is unusually high; fits grow as "
                    "(order+1)^2 channels", order)

    hset = _load_hrtf(cfg, sec)
    if "crop_len" in sec:
        hset = crop_direct(hset, int(sec["crop_len"]))
    if "lfe_hz" in sec:
        hset = lfe_extend(hset, float(sec["lfe_hz"]))

    fc = float(sec.get("fc", DEFAULT_FC))
    if fc >= hset.fs / 2:
        raise ConfigError(f"decoder.fc {fc} must sit below Nyquist "
                          f"({hset.fs / 2})")
    taper = None
    profile = sec.get("taper", "none")
    if profile != "none":
        try:
            taper = taper_weights(order, profile, sec.get("taper_orders"))
        except ValueError as e:
            raise ConfigError(f"decoder.taper: {e}") from e

    nfft = int(sec.get("nfft", DEFAULT_NFFT))
    filter_len = int(sec.get("filter_len", DEFAULT_FILTER_LEN))
    if filter_len > nfft:
        raise ConfigError(f"decoder.filter_len {filter_len} exceeds "
                          f"nfft {nfft}")
    try:
        dec = fit_bimagls(hset, order, fc=fc, taper=taper, nfft=nfft,
                          filter_len=filter_len,
                          reg=float(sec.get("reg", DEFAULT_REG)))
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as e:
        raise NumericError(f"decoder fit failed: {e}") from e
    if not (np.all(np.isfinite(dec.left_filters))
            and np.all(np.isfinite(dec.right_filters))):
        raise NumericError("decoder fit produced non-finite filters")

    stem = cfg.out_path(sec.get("out", os.path.join("decoder", "bimagls")))
    os.makedirs(os.path.dirname(stem), exist_ok=True)
    save_decoder(stem, dec)
    log.info("decoder written to %s_{left,right}.wav (+ %s.json)", stem, stem)
    for f_lo, f_hi, err in _fit_summary(dec, hset):
        log.info("  %5.0f-%5.0f Hz  mean |error| %6.2f dB", f_lo, f_hi, err)

    if "coupling" in sec:
        csec = sec["coupling"]
        with_ha = load_hrtf_set(require_path(cfg, csec, "with_ha_path",
                                             "decoder.coupling"))
        bare = load_hrtf_set(require_path(cfg, csec, "bare_path",
                                          "decoder.coupling"))
        try:
            filt = coupling_compensation_fit(
                with_ha, bare, filter_order=int(csec.get("filter_order", 16)))
        except ValueError as e:
            raise NumericError(f"coupling fit failed: {e}") from e
        save_iir_filter(stem + "_coupling.json", filt)
        log.info("coupling filter written to %s_coupling.json", stem)
    return 0


# ---------------------------------------------------------------------------
# synth


def _expand_files(cfg, patterns, what):
    if isinstance(patterns, str):
        patterns = [patterns]
    paths = []
    for pat in patterns:
        pat = cfg.resolve(pat)
        hits = sorted(globlib.glob(pat)) if globlib.has_magic(pat) else [pat]
        for p in hits:
            if not os.path.exists(p):
                raise DataError(f"{what}: no such file: {p}")
            paths.append(p)
    if not paths:
        raise DataError(f"{what}: no files matched {patterns}")
    return tuple(paths)


def _load_pipeline_decoder(cfg, sec, section_name):
    stem = sec.get("decoder_stem", cfg.decoder.get("out",
                                                   os.path.join("decoder",
                                                                "bimagls")))
    stem = cfg.out_path(stem)
    if not os.path.exists(stem + ".json"):
        raise DataError(f"{section_name}: decoder artifact not found at "
                        f"{stem}.json (run fit-decoder first)")
    try:
        dec = load_decoder(stem)
    except (OSError, KeyError, ValueError) as e:
        raise DataError(f"corrupt decoder artifact {stem}: {e}") from e
    if dec.fs != cfg.fs:
        try:
            dec = resample_decoder(dec, cfg.fs)
        except ValueError as e:
            raise DataError(f"decoder cannot run at fs {cfg.fs}: {e}") from e
        log.info("decoder resampled %d -> %d Hz", dec.fs, cfg.fs)
    return dec, stem


def cmd_synth(cfg, args):
    sec = cfg.synth
    if not sec:
        raise ConfigError("config has no 'synth' section")
    counts = require(sec, "counts", "synth")
    speech_sec = require(sec, "speech", "synth")
    noise_sec = require(sec, "noise", "synth")
    dec, stem = _load_pipeline_decoder(cfg, sec, "synth")

    coupling = None
    coupling_path = sec.get("coupling_path")
    if coupling_path == "auto":
        coupling_path = stem + "_coupling.json"
        if not os.path.exists(coupling_path):
            coupling_path = None
    if coupling_path:
        coupling = load_iir_filter(cfg.out_path(coupling_path)
                                   if not os.path.isabs(coupling_path)
                                   and not os.path.exists(coupling_path)
                                   else coupling_path)

    speech_files = {s: _expand_files(cfg, v, f"synth.speech.{s}")
                    for s, v in speech_sec.items()}
    noise_files = {s: _expand_files(cfg, v, f"synth.noise.{s}")
                   for s, v in noise_sec.items()}
    job = CorpusJob(
        out_dir=cfg.out_path(sec.get("out", "corpus")), fs=cfg.fs,
        counts=counts, speech_files=speech_files, noise_files=noise_files,
        master_seed=cfg.master_seed, decoder=dec, coupling=coupling,
        chunk_s=float(sec.get("chunk_seconds", 4.0)),
        resume=bool(args.resume), jobs=cfg.jobs)
    try:
        manifest = generate_corpus(job)
    except CorpusRenderError as e:
        raise DataError(str(e)) from e
    log.info("%d records -> %s", len(manifest.records),
             os.path.join(job.out_dir, "manifest.jsonl"))
    return 0


# ---------------------------------------------------------------------------
# render-eval


def _load_ambi_wav(path, fs):
    file_fs, data = read_wav(path, expect_fs=fs)
    if data.ndim != 2:
        raise DataError(f"{path}: ambisonic audio must be multichannel")
    order = int(round(np.sqrt(data.shape[1]))) - 1
    if (order + 1) ** 2 != data.shape[1]:
        raise DataError(f"{path}: {data.shape[1]} channels is not a complete "
                        f"SH channel count")
    return AmbiSignal(order, fs, data.astype(float))


def cmd_render_eval(cfg, args):
    sec = cfg.render_eval
    if not sec:
        raise ConfigError("config has no 'render_eval' section")
    layout_path = require_path(cfg, sec, "layout_path", "render_eval")
    try:
        layout = LoudspeakerLayout.from_text(layout_path)
    except ValueError as e:
        raise DataError(f"bad layout file {layout_path}: {e}") from e
    ls_order = int(sec.get("ls_order", 5))
    dec, _ = _load_pipeline_decoder(cfg, sec, "render_eval")
    if ls_order > dec.order:
        raise DataError(f"ls_order {ls_order} exceeds decoder order "
                        f"{dec.order}")
    try:
        ls = fit_inphase_decoder(layout, ls_order,
                                 method=sec.get("ls_method", "pinv"))
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericError(f"loudspeaker decoder fit failed: {e}") from e

    speech_path = require_path(cfg, sec, "speech_path", "render_eval")
    _, speech = read_wav(speech_path, expect_fs=cfg.fs)
    if speech.ndim == 2:
        speech = speech[:, 0]
    noise = _load_ambi_wav(require_path(cfg, sec, "noise_path", "render_eval"),
                           cfg.fs)
    if noise.order > dec.order:
        raise DataError(f"noise order {noise.order} exceeds decoder order "
                        f"{dec.order}")

    environments = sec.get("environments", ["party", "restaurant", "office"])
    angles = sec.get("angles", [0, 30])
    rt60_map = require(sec, "rt60", "render_eval")
    out_dir = cfg.out_path(sec.get("out", "eval"))
    os.makedirs(out_dir, exist_ok=True)
    for env in environments:
        if env not in rt60_map:
            raise ConfigError(f"render_eval.rt60 is missing '{env}'")
        for angle in angles:
            preset = eval_scene_presets(env, angle, float(rt60_map[env]))
            feeds, reference, mixture = build_eval_scene(
                preset, speech, noise, dec, ls)
            tag = f"{env}_{int(angle):02d}"
            write_wav(os.path.join(out_dir, f"{tag}_feeds.wav"), cfg.fs, feeds)
            write_wav(os.path.join(out_dir, f"{tag}_reference.wav"), cfg.fs,
                      reference.data)
            write_wav(os.path.join(out_dir, f"{tag}_mixture.wav"), cfg.fs,
                      mixture.data)
            write_json(os.path.join(out_dir, f"{tag}_scene.json"),
                       {"environment": env, "target_angle_deg": int(angle),
                        **preset.to_dict()})
            log.info("%s: feeds %s energy %.6f", tag, feeds.shape,
                     total_energy(feeds))
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _collect_references(refs_dir):
    refs = {}
    for path in sorted(globlib.glob(os.path.join(refs_dir,
                                                 "*_reference.wav"))):
        scene = os.path.basename(path)[:-len("_reference.wav")]
        refs[scene] = path
    if not refs:
        raise DataError(f"no *_reference.wav files under {refs_dir}")
    return refs


def cmd_evaluate(cfg, args):
    from .signals import BinauralSignal

    sec = cfg.evaluate
    if not sec:
        raise ConfigError("config has no 'evaluate' section")
    refs_dir = require_path(cfg, sec, "references_root", "evaluate")
    rec_root = require_path(cfg, sec, "recordings_root", "evaluate")
    conditions = require(sec, "conditions", "evaluate")
    baseline = sec.get("baseline", "bypass")

    ref_paths = _collect_references(refs_dir)
    references = {}
    for scene, path in ref_paths.items():
        _, data = read_wav(path, expect_fs=cfg.fs)
        references[scene] = BinauralSignal(cfg.fs, data.astype(float))

    recordings = {}
    load_errors = []
    for device in sorted(os.listdir(rec_root)):
        ddir = os.path.join(rec_root, device)
        if not os.path.isdir(ddir):
            continue
        for condition in sorted(os.listdir(ddir)):
            cdir = os.path.join(ddir, condition)
            if not os.path.isdir(cdir):
                continue
            for wav in sorted(globlib.glob(os.path.join(cdir, "*.wav"))):
                scene = os.path.splitext(os.path.basename(wav))[0]
                if scene not in references:
                    log.info("skipping %s: no reference for scene '%s'",
                             wav, scene)
                    continue
                try:
                    _, data = read_wav(wav, expect_fs=cfg.fs)
                    recordings[(device, scene, condition)] = BinauralSignal(
                        cfg.fs, data.astype(float))
                except (OSError, ValueError) as e:
                    load_errors.append({"device": device, "scene": scene,
                                        "condition": condition,
                                        "error": str(e)})
                    log.warning("unreadable recording %s: %s", wav, e)
    if not recordings:
        raise DataError(f"no usable recordings under {rec_root}")

    external = {}
    for name, exe in sorted(sec.get("external_metrics", {}).items()):
        external[name] = make_external_metric(
            cfg.resolve(str(exe)), audiogram=sec.get("audiogram", "flat"))

    report = evaluate_set(
        references, recordings, conditions=conditions, baseline=baseline,
        external_metrics=external,
        max_lag_s=float(sec.get("max_lag_seconds", 0.5)),
        target_rms_dbfs=float(sec.get("rms_dbfs", -26.0)))

    out_dir = cfg.out_path(sec.get("out", "reports"))
    os.makedirs(out_dir, exist_ok=True)
    payload = report.to_dict()
    payload["load_errors"] = load_errors
    if sec.get("anonymize_devices", False):
        devices = sorted({r.device for r in report.rows})
        mapping = {d: f"device{i + 1:02d}" for i, d in enumerate(devices)}
        write_json(os.path.join(out_dir, "device_map.json"), mapping)
        text = _anonymize_text(report.format_text(), mapping)
        payload = _anonymize(payload, mapping)
    else:
        text = report.format_text()
    write_json(os.path.join(out_dir, "report.json"), payload)
    with open(os.path.join(out_dir, "report.txt"), "w") as f:
        f.write(text)
    log.info("report written to %s", out_dir)
    for line in text.splitlines():
        log.info("%s", line)
    return 0


def _anonymize_text(text, mapping):
    # Longest names first so one device name being a prefix of another
    # cannot leave half-scrubbed output.
    for real in sorted(mapping, key=len, reverse=True):
        text = text.replace(real, mapping[real])
    return text


def _anonymize(payload, mapping):
    import json
    quoted = {json.dumps(k)[1:-1]: json.dumps(v)[1:-1]
              for k, v in mapping.items()}
    return json.loads(_anonymize_text(json.dumps(payload), quoted))


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML pipeline config")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config master seed")
    common.add_argument("--jobs", type=int, default=None,
                        help="worker threads for record-level parallelism")
    common.add_argument("--resume", action="store_true",
                        help="skip records whose outputs already exist")
    common.add_argument("--verbose", action="store_true",
                        help="debug-level logging")

    parser = argparse.ArgumentParser(
        prog="binscene",
        description="Ambisonics scene simulation, binaural decoding, corpus "
                    "synthesis, and intrusive evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit-decoder", parents=[common],
                   help="fit and save the binaural decoder").set_defaults(
        func=cmd_fit_decoder)
    sub.add_parser("synth", parents=[common],
                   help="render a training corpus").set_defaults(
        func=cmd_synth)
    sub.add_parser("render-eval", parents=[common],
                   help="render loudspeaker feeds and references").set_defaults(
        func=cmd_render_eval)
    sub.add_parser("evaluate", parents=[common],
                   help="score recordings against references").set_defaults(
        func=cmd_evaluate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, master_seed=args.seed)
        if args.jobs is not None:
            cfg = replace(cfg, jobs=max(1, args.jobs))
        return args.func(cfg, args)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except DataError as e:
        log.error("data error: %s", e)
        return EXIT_DATA
    except NumericError as e:
        log.error("numeric failure: %s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
