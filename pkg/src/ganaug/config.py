"""Flat ``key = value`` run configuration shared by every command.

Keys are namespaced by stage: ``gan.*`` (DCGAN training), ``clf.*``
(classifier training) and ``ssim.*`` (quality report).  Unknown keys are
rejected.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .classifier import ClfTrainConfig
from .dcgan import GanTrainConfig
from .errors import InvalidConfig
from .metrics import SsimConfig

SECTIONS = {"gan": GanTrainConfig, "clf": ClfTrainConfig, "ssim": SsimConfig}


def _defaults() -> dict[str, object]:
    out = {}
    for section, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            out[f"{section}.{f.name}"] = f.default
    return out


DEFAULTS = _defaults()


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise InvalidConfig(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


class RunConfig:
    """Resolved key/value settings: defaults < config file < command-line overrides."""

    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise InvalidConfig(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, value) if isinstance(value, str) else value

    def update_text(self, text: str, source: str = "<config>") -> None:
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfig(f"{source}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            self.set(key, value)

    def load(self, path) -> None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise InvalidConfig(f"cannot read config {path}: {e}") from None
        self.update_text(text, str(path))

    def section(self, name: str):
        cls = SECTIONS[name]
        kwargs = {f.name: self.values[f"{name}.{f.name}"] for f in dataclasses.fields(cls)}
        return cls(**kwargs)

    def gan(self) -> GanTrainConfig:
        return self.section("gan").validate()

    def clf(self) -> ClfTrainConfig:
        return self.section("clf").validate()

    def ssim(self) -> SsimConfig:
        cfg = self.section("ssim")
        if cfg.pairing not in ("max", "mean") or cfg.channel_policy not in ("luma", "per_channel"):
            raise InvalidConfig("ssim.pairing must be max|mean, ssim.channel_policy luma|per_channel")
        return cfg

    def to_text(self, sections=None) -> str:
        lines = []
        for key in sorted(self.values):
            if sections and key.split(".", 1)[0] not in sections:
                continue
            value = self.values[key]
            if isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def write(self, path, sections=None) -> None:
        Path(path).write_text(self.to_text(sections))


def describe_keys(sections=None) -> str:
    out = []
    for key in sorted(DEFAULTS):
        if sections and key.split(".", 1)[0] not in sections:
            continue
        out.append(f"  {key} = {DEFAULTS[key]}")
    return "\n".join(out)
