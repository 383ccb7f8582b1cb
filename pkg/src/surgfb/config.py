"""Plain-text configuration files: INI-style sections of key=value pairs.

Recognized sections: [synthetic] (SyntheticSpec fields), [encoder]
(EncoderConfig fields), and [stage.<name>] (TrainConfig fields for one of the
four stages).
"""

from __future__ import annotations

import configparser
from dataclasses import fields, replace
from pathlib import Path

from .corpus import SyntheticSpec
from .pipeline import RunProfile
from .video_encoder import EncoderConfig


def _coerce(current, raw: str):
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(x.strip() for x in raw.split(","))
    return raw


def _apply(obj, section: configparser.SectionProxy, what: str):
    known = {f.name for f in fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key not in known:
            raise ValueError(f"unknown {what} option {key!r}")
        updates[key] = _coerce(getattr(obj, key), raw)
    return replace(obj, **updates)


def apply_config_file(profile: RunProfile, path: str | Path) -> RunProfile:
    """Overlay a config file onto a profile; unknown keys are errors."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    synth = profile.synth
    encoder = profile.encoder
    stages = dict(profile.stages)
    for section in parser.sections():
        if section == "synthetic":
            synth = _apply(synth, parser[section], "synthetic-spec")
        elif section == "encoder":
            encoder = _apply(encoder, parser[section], "encoder")
        elif section.startswith("stage."):
            name = section.split(".", 1)[1]
            if name not in stages:
                raise ValueError(f"unknown stage section {section!r}")
            stages[name] = _apply(stages[name], parser[section], f"stage {name}")
        else:
            raise ValueError(f"unknown config section {section!r}")
    return replace(profile, synth=synth, encoder=encoder, stages=stages)


def parse_synthetic_spec(path: str | Path) -> SyntheticSpec:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"spec file not found: {path}")
    spec = SyntheticSpec()
    if parser.has_section("synthetic"):
        spec = _apply(spec, parser["synthetic"], "synthetic-spec")
    return spec
