"""32-bit float RIFF/WAVE I/O and small JSON sidecar helpers.

All audio arrays in this package are float, shaped (samples,) for mono
or (samples, channels) for multichannel; files are written as
WAVE_FORMAT_IEEE_FLOAT so values round-trip bit-exactly.
"""

import json
from pathlib import Path

import numpy as np
from scipy.io import wavfile

__all__ = ["read_wav", "write_wav", "read_json", "write_json"]


def write_wav(path, fs, data):
    """Write float32 WAV; accepts (T,) or (T, C) float arrays."""
    data = np.asarray(data)
    if data.ndim not in (1, 2):
        raise ValueError("audio must be 1-D or 2-D (samples, channels)")
    if not np.all(np.isfinite(data)):
        raise ValueError("audio contains non-finite samples")
    wavfile.write(str(path), int(fs), data.astype(np.float32, copy=False))


def read_wav(path, expect_fs=None):
    """Read WAV as float32; integer PCM is scaled to [-1, 1).

    Returns (fs, data) with data shaped (T,) or (T, C).
    """
    fs, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float32) - 128.0) / 128.0
    else:
        data = data.astype(np.float32, copy=False)
    if expect_fs is not None and fs != expect_fs:
        raise ValueError(f"{path}: expected fs {expect_fs}, file has {fs}")
    return fs, data


def write_json(path, obj):
    """Deterministic JSON (sorted keys, fixed separators, trailing newline)."""
    text = json.dumps(obj, sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
