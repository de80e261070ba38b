"""Run configuration: a JSON document with a fixed key schema.

Every section and key has a default; a config file only needs the keys it
changes.  Unknown keys and wrongly-typed values are rejected before any work
starts.

Schema (defaults in brackets)::

    seed                      master seed [0]
    workers                   worker threads for sweeps and data generation [1]
    schedule.T                diffusion steps [1000]
    schedule.beta_min/max     linear beta range [1e-4, 0.02]
    sampler.steps             DDIM steps [30]
    sampler.clip_x0           clamp range for the clean estimate, or null [[0, 1]]
    guidance.s_v              video guidance when not sweeping [1.5]
    guidance.s_v_grid         sweep values [[1.2, 1.5, 1.8]]
    guidance.resolutions      sweep resolutions [[[32, 32], [48, 48]]]
    guidance.s_t              text guidance [10.0]
    long_video.frames_per_batch, n_ref, mc   [16, 4, false]
    datagen.catalog           catalog JSON path, or null for the built-in one
    datagen.seeds_per_triplet [2]
    datagen.thresholds        text_in / text_out / direction / frame [0.2 each, frame 0.5]
    datagen.frames, resolution, ptp_steps (null: drawn config)
    datagen.backbone_steps, backbone_lr, backbone_batch
    train.steps, lr, batch_size, p_v, p_t
    paths.dataset, paths.params, paths.output   optional defaults for command paths
"""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleCfg:
    T: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 2e-2


@dataclass(frozen=True)
class SamplerCfg:
    steps: int = 30
    clip_x0: list[float] | None = field(default_factory=lambda: [0.0, 1.0])


@dataclass(frozen=True)
class GuidanceCfg:
    s_v: float = 1.5
    s_v_grid: list[float] = field(default_factory=lambda: [1.2, 1.5, 1.8])
    resolutions: list[list[int]] = field(default_factory=lambda: [[32, 32], [48, 48]])
    s_t: float = 10.0


@dataclass(frozen=True)
class LongVideoCfg:
    frames_per_batch: int = 16
    n_ref: int = 4
    mc: bool = False


@dataclass(frozen=True)
class DatagenCfg:
    catalog: str | None = None
    seeds_per_triplet: int = 2
    thresholds: dict[str, float] = field(
        default_factory=lambda: {"text_in": 0.2, "text_out": 0.2, "direction": 0.2, "frame": 0.5})
    frames: int = 16
    resolution: int = 16
    ptp_steps: int | None = None
    backbone_steps: int = 6000
    backbone_lr: float = 4e-3
    backbone_batch: int = 4


@dataclass(frozen=True)
class TrainCfg:
    steps: int = 2000
    lr: float = 4e-3
    batch_size: int = 2
    p_v: float = 0.05
    p_t: float = 0.05


@dataclass(frozen=True)
class PathsCfg:
    dataset: str | None = None
    params: str | None = None
    output: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    schedule: ScheduleCfg = field(default_factory=ScheduleCfg)
    sampler: SamplerCfg = field(default_factory=SamplerCfg)
    guidance: GuidanceCfg = field(default_factory=GuidanceCfg)
    long_video: LongVideoCfg = field(default_factory=LongVideoCfg)
    datagen: DatagenCfg = field(default_factory=DatagenCfg)
    train: TrainCfg = field(default_factory=TrainCfg)
    paths: PathsCfg = field(default_factory=PathsCfg)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def clip(self):
        c = self.sampler.clip_x0
        return None if c is None else (float(c[0]), float(c[1]))


def _check_scalar(value, tp, where):
    if tp is bool:
        ok = isinstance(value, bool)
    elif tp is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif tp is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif tp is str:
        ok = isinstance(value, str)
    else:
        raise ConfigError(f"{where}: unsupported schema type {tp}")
    if not ok:
        raise ConfigError(f"{where}: expected {tp.__name__}, got {type(value).__name__}")
    return value


def _coerce(value, tp, where):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or origin is types.UnionType:
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{where}: must not be null")
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, where)
    if value is None:
        raise ConfigError(f"{where}: must not be null")
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return [_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return {str(k): _coerce(v, args[1], f"{where}.{k}") for k, v in value.items()}
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    return _check_scalar(value, tp, where)


def _build(cls, data, where=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key {(where + '.' if where else '') + unknown[0]!r}")
    kw = {k: _coerce(v, hints[k], f"{where}.{k}" if where else k) for k, v in data.items()}
    return cls(**kw)


def _validate(cfg: RunConfig) -> RunConfig:
    s = cfg.schedule
    if s.T < 2 or not 0 < s.beta_min <= s.beta_max < 1:
        raise ConfigError("schedule: need T >= 2 and 0 < beta_min <= beta_max < 1")
    if not 1 <= cfg.sampler.steps <= s.T:
        raise ConfigError("sampler.steps must lie in [1, T]")
    if cfg.sampler.clip_x0 is not None and (len(cfg.sampler.clip_x0) != 2
                                            or cfg.sampler.clip_x0[0] >= cfg.sampler.clip_x0[1]):
        raise ConfigError("sampler.clip_x0 must be [low, high] with low < high")
    g = cfg.guidance
    if not g.s_v_grid or not g.resolutions:
        raise ConfigError("guidance grid needs at least one s_v and one resolution")
    if min([g.s_v, g.s_t, *g.s_v_grid]) < 1:
        raise ConfigError("guidance scales must be >= 1")
    for r in g.resolutions:
        if len(r) != 2 or min(r) < 2 or r[0] % 2 or r[1] % 2:
            raise ConfigError(f"guidance.resolutions entry {r} must be an even [h, w]")
    lv = cfg.long_video
    if not 1 <= lv.n_ref < lv.frames_per_batch:
        raise ConfigError("long_video: need 1 <= n_ref < frames_per_batch")
    d = cfg.datagen
    unknown = sorted(set(d.thresholds) - {"text_in", "text_out", "direction", "frame"})
    if unknown:
        raise ConfigError(f"unknown config key 'datagen.thresholds.{unknown[0]}'")
    if d.seeds_per_triplet < 1 or d.frames < 1 or d.resolution < 2 or d.resolution % 2:
        raise ConfigError("datagen: seeds_per_triplet/frames must be positive and resolution even")
    if d.backbone_steps < 0 or cfg.train.steps < 0:
        raise ConfigError("step counts must be non-negative")
    if d.backbone_batch < 1 or cfg.train.batch_size < 1 or cfg.workers < 1:
        raise ConfigError("batch sizes and workers must be positive")
    for name in ("p_v", "p_t"):
        if not 0 <= getattr(cfg.train, name) <= 1:
            raise ConfigError(f"train.{name} must be a probability")
    return cfg


def from_dict(data: dict) -> RunConfig:
    return _validate(_build(RunConfig, data))


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Read a JSON config (or defaults) and apply ``key.sub=value`` overrides."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return from_dict(data)
