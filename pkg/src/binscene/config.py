"""Declarative pipeline configuration, read from YAML.

One file drives all commands. Global keys set the sample rate, master
seed, and output root; each command reads its own section (decoder,
synth, render_eval, evaluate). Sections are validated when the command
that needs them runs, so a config can carry only the sections it uses.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import yaml


class ConfigError(ValueError):
    """Malformed or incomplete configuration."""


_TOP_KEYS = {"master_seed", "fs", "output_root", "jobs",
             "decoder", "synth", "render_eval", "evaluate"}

DEFAULT_FS = 16000

# Orders beyond this are legitimate but slow and rarely what anyone
# wants from a config typo.
ORDER_WARN_THRESHOLD = 10


@dataclass(frozen=True)
class PipelineConfig:
    path: str
    master_seed: int
    fs: int
    output_root: str
    jobs: int = 1
    decoder: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    render_eval: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)

    def resolve(self, relpath):
        """Paths inside the config resolve against the config file."""
        if os.path.isabs(relpath):
            return relpath
        return os.path.normpath(os.path.join(os.path.dirname(self.path), relpath))

    def out_path(self, relpath):
        root = self.resolve(self.output_root)
        return relpath if os.path.isabs(relpath) else os.path.join(root, relpath)


def load_config(path):
    """Parse and structurally validate a YAML pipeline config."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"config is not valid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")

    def _int(key, default, minimum=0):
        value = raw.get(key, default)
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            raise ConfigError(f"'{key}' must be an integer >= {minimum}")
        return value

    for section in ("decoder", "synth", "render_eval", "evaluate"):
        if section in raw and not isinstance(raw[section], dict):
            raise ConfigError(f"'{section}' must be a mapping")

    return PipelineConfig(
        path=os.path.abspath(path),
        master_seed=_int("master_seed", 0),
        fs=_int("fs", DEFAULT_FS, minimum=1),
        output_root=str(raw.get("output_root", "out")),
        jobs=_int("jobs", 1, minimum=1),
        decoder=raw.get("decoder", {}),
        synth=raw.get("synth", {}),
        render_eval=raw.get("render_eval", {}),
        evaluate=raw.get("evaluate", {}),
    )


def require(section, key, section_name):
    if key not in section:
        raise ConfigError(f"'{section_name}' section is missing '{key}'")
    return section[key]


def require_path(config, section, key, section_name):
    """A config path that must exist on disk at validation time."""
    p = config.resolve(str(require(section, key, section_name)))
    if not os.path.exists(p):
        raise ConfigError(f"'{section_name}.{key}': path does not exist: {p}")
    return p
