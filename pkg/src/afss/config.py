"""Experiment configuration (TOML), with strict key checking and defaults for everything."""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .synthesis import GriffinLimVocoder, IdentityVC, KnnVC, SubprocessVC, SubprocessVocoder
from .training import TrainConfig
from .transforms import ALL_KINDS, IntensityPreset, RawBoostConfig, TransformKind, preset_table

CONFIG_ENV = "AFSS_CONFIG"


class ConfigError(ValueError):
    pass


def _default_presets() -> dict[str, dict[str, list[float]]]:
    table = {}
    for level, preset in preset_table().items():
        table[str(level)] = {
            TransformKind.PITCH_SHIFT.value: list(preset.pitch_shift_semitones),
            TransformKind.TIME_STRETCH.value: list(preset.time_stretch_rate),
            TransformKind.TANH_DISTORTION.value: list(preset.tanh_distortion_amount),
        }
    return table


@dataclass
class TransformsSection:
    level: int = 1
    kinds: list[str] = field(default_factory=lambda: [k.value for k in ALL_KINDS])
    presets: dict[str, dict[str, list[float]]] = field(default_factory=_default_presets)
    rawboost: RawBoostConfig = field(default_factory=RawBoostConfig)

    def preset(self, level: int | None = None) -> IntensityPreset:
        level = self.level if level is None else level
        try:
            row = self.presets[str(level)]
            return IntensityPreset(
                level=level,
                pitch_shift_semitones=tuple(row[TransformKind.PITCH_SHIFT.value]),
                time_stretch_rate=tuple(row[TransformKind.TIME_STRETCH.value]),
                tanh_distortion_amount=tuple(row[TransformKind.TANH_DISTORTION.value]),
                rawboost=self.rawboost,
            )
        except KeyError as exc:
            raise ConfigError(f"transforms.presets: missing entry {exc} for level {level}") from exc


@dataclass
class BackendSpec:
    type: str
    name: str = ""
    command: list[str] = field(default_factory=list)
    k: int = 4
    n_iters: int = 32

    def build(self):
        name = {"name": self.name} if self.name else {}
        if self.type == "knn":
            return KnnVC(k=self.k, n_iters=self.n_iters, **name)
        if self.type == "identity":
            return IdentityVC(**name)
        if self.type == "griffin_lim":
            return GriffinLimVocoder(n_iters=self.n_iters, **name)
        if self.type == "subprocess_vc":
            return SubprocessVC(list(self.command), **name)
        if self.type == "subprocess_vocoder":
            return SubprocessVocoder(list(self.command), **name)
        raise ConfigError(f"unknown backend type {self.type!r}")


@dataclass
class SynthesisSection:
    mode: str = "afss"
    branch_ratio: float = 0.5
    workers: int = 1
    vc: BackendSpec = field(default_factory=lambda: BackendSpec("knn", "knn_vc"))
    vocoders: list[BackendSpec] = field(default_factory=lambda: [BackendSpec("griffin_lim", "griffin_lim")])


@dataclass
class DetectorSection:
    front_end: str = "toy"
    hidden: int = 64
    n_mels: int = 80
    freeze_front_end: bool = False

    def front_end_config(self) -> dict:
        if self.front_end != "toy":
            raise ConfigError(f"unsupported front_end {self.front_end!r} (available: toy)")
        return {"kind": "toy", "hidden": self.hidden, "n_mels": self.n_mels}


@dataclass
class PathsSection:
    run_dir: str = "runs/default"
    real_manifest: str = ""
    dev_manifest: str = ""


@dataclass
class ExperimentConfig:
    seed: int = 0
    transforms: TransformsSection = field(default_factory=TransformsSection)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    training: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsSection = field(default_factory=PathsSection)

    def validate(self) -> "ExperimentConfig":
        if self.synthesis.mode not in ("afss", "cross_vc"):
            raise ConfigError(f"synthesis.mode must be afss or cross_vc, got {self.synthesis.mode!r}")
        if not 0.0 <= self.synthesis.branch_ratio <= 1.0:
            raise ConfigError("synthesis.branch_ratio must be in [0, 1]")
        if not self.synthesis.vocoders:
            raise ConfigError("synthesis.vocoders must list at least one backend")
        try:
            [TransformKind(k) for k in self.transforms.kinds]
        except ValueError as exc:
            raise ConfigError(f"transforms.kinds: {exc}") from exc
        self.transforms.preset()
        self.detector.front_end_config()
        return self


# ---------------------------------------------------------------------------
# dict <-> dataclass

def _build(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table")
        hints = typing.get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp)}
        unknown = sorted(set(value) - names)
        if unknown:
            raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
        kwargs = {k: _build(hints[k], v, f"{where}.{k}" if where else k) for k, v in value.items()}
        try:
            return tp(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where or 'config'}: {exc}") from exc
    if origin is list:
        (item,) = typing.get_args(tp)
        return [_build(item, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if origin is tuple:
        return tuple(value)
    if origin is dict:
        return value
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if tp in (int, float) and isinstance(value, bool):
        raise ConfigError(f"{where}: expected {tp.__name__}, got {value!r}")
    if tp in (int, float, str, bool) and not isinstance(value, tp):
        raise ConfigError(f"{where}: expected {tp.__name__}, got {value!r}")
    return value


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def to_dict(config: ExperimentConfig) -> dict:
    return _plain(asdict(config))


def dumps(config: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(config))


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return from_dict(data)


def load_config(path=None) -> ExperimentConfig:
    """Read ``path``, else ``$AFSS_CONFIG``, else return the defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return ExperimentConfig().validate()
    return loads(Path(path).read_text(encoding="utf-8"))
