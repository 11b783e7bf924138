"""Run configuration: ``section.key=value`` text files plus command-line overrides.

Every key is checked against the dataclass fields of its section; unknown
sections or keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .chansynth import SystemConfig
from .downstream import BEAM_PROBE, LOS_PROBE, ProbeConfig
from .model import ModelConfig
from .objectives import LossConfig
from .patchpipe import PatchConfig
from .trainer import TrainConfig


class ConfigValidationError(ValueError):
    pass


@dataclass(frozen=True)
class PatchShape:
    patch_rows: int = 1
    patch_cols: int = 16


@dataclass(frozen=True)
class ModelShape:
    d_e: int = 64
    L_enc: int = 12
    L_dec: int = 4
    M_enc: int = 16
    M_dec: int = 8
    d_c: int = 64


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    patch: PatchShape = field(default_factory=PatchShape)
    model: ModelShape = field(default_factory=ModelShape)
    train: TrainConfig = field(default_factory=TrainConfig)
    contra: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    beam_probe: ProbeConfig = BEAM_PROBE
    los_probe: ProbeConfig = LOS_PROBE

    def patch_config(self) -> PatchConfig:
        return PatchConfig(self.system.n_antennas, self.system.n_subcarriers,
                           self.patch.patch_rows, self.patch.patch_cols)

    def model_config(self, contrastive: bool = False) -> ModelConfig:
        return ModelConfig(patch=self.patch_config(), contrastive=contrastive,
                           **dataclasses.asdict(self.model))

    def items(self) -> dict[str, str]:
        out = {}
        for sec in dataclasses.fields(self):
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                out[f"{sec.name}.{f.name}"] = _fmt(getattr(obj, f.name))
        return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


# desk-scale settings used by the tests and demos
PROFILES: dict[str, dict[str, str]] = {
    "paper": {},
    "desk": {
        "system.n_antennas": "16", "system.n_subcarriers": "32",
        "model.d_e": "32", "model.L_enc": "4", "model.L_dec": "2",
        "model.M_enc": "8", "model.M_dec": "4", "model.d_c": "32",
        "train.epochs": "20", "train.batch_size": "32", "train.lr_max": "0.001",
        "train.lr_min": "1e-05", "train.dtype": "float32",
        "contra.epochs": "20", "contra.batch_size": "32", "contra.lr_max": "0.001",
        "contra.lr_min": "1e-05", "contra.dtype": "float32",
    },
}


def _convert(raw: str, kind, key: str):
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigValidationError(f"bad value {raw!r} for {key}") from None


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigValidationError(f"{source}:{n}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def build(overrides: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Apply ``section.key -> text`` overrides on top of ``base``."""
    base = base or RunConfig()
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    pending: dict[str, dict] = {}
    for key, raw in overrides.items():
        sec, _, name = key.partition(".")
        if sec not in sections or not name:
            raise ConfigValidationError(f"unknown config key {key!r}")
        obj = getattr(base, sec)
        ftypes = {f.name: f.type for f in dataclasses.fields(obj)}
        if name not in ftypes:
            raise ConfigValidationError(f"unknown config key {key!r}")
        pending.setdefault(sec, {})[name] = _convert(raw, ftypes[name], key)
    updated = {}
    for sec, kw in pending.items():
        try:
            updated[sec] = dataclasses.replace(getattr(base, sec), **kw)
        except (ValueError, TypeError) as exc:
            raise ConfigValidationError(f"{sec}: {exc}") from None
    cfg = dataclasses.replace(base, **updated)
    try:
        cfg.model_config()
    except ValueError as exc:
        raise ConfigValidationError(str(exc)) from None
    return cfg


def load(path: str | Path | None = None, sets: Iterable[str] = (),
         profile: str = "paper") -> RunConfig:
    if profile not in PROFILES:
        raise ConfigValidationError(f"unknown profile {profile!r}")
    merged = dict(PROFILES[profile])
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigValidationError(f"cannot read config {path}: {exc.strerror}") from None
        merged.update(parse_lines(text.splitlines(), str(path)))
    merged.update(parse_lines(sets, "--set"))
    return build(merged)
