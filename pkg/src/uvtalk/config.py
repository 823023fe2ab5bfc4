"""Run configuration: nested YAML with dataclass sections, flag overrides, and content hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .synthdata import CorpusConfig

CONFIG_VERSION = 1


class ConfigVersionError(ConfigurationError):
    pass


@dataclass
class CodecConfig:
    resolution: int = 64
    channels: tuple[int, ...] = (8, 16, 32, 64)  # one entry per downsampling stage
    latent_dim: int = 8
    codebook_size: int = 128
    attention: bool = True
    beta: float = 0.25
    eta_per: float = 1.0
    eta_adv: float = 0.2
    eta_code: float = 1.0
    discriminator_warmup_steps: int = 40_000
    learning_rate: float = 1e-3
    lr_decay: str = "cosine"  # cosine | none
    batch_size: int = 8
    steps: int = 20_000
    seed: int = 0
    log_every: int = 100

    @property
    def downsample_stages(self) -> int:
        return len(self.channels)

    @property
    def latent_hw(self) -> int:
        return self.resolution // 2 ** self.downsample_stages


@dataclass
class LDMConfig:
    window: int = 16  # T_w
    context: int = 4  # T_p
    diffusion_steps: int = 50  # N
    schedule: str = "cosine"
    model_dim: int = 128
    layers: int = 2
    heads: int = 4
    ff_mult: int = 4
    audio_dim: int = 80
    learning_rate: float = 5e-4
    batch_size: int = 32
    steps: int = 20_000
    truncate_prob: float = 0.25
    first_window_prob: float = 0.15
    style: str = "pivot"  # pivot | one-hot
    seed: int = 0
    log_every: int = 200


@dataclass
class SamplingConfig:
    seed: int = 0
    mode: str = "ddpm"  # ddpm | ddim
    ddim_steps: int = 10


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    device: str = "cpu"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    ldm: LDMConfig = field(default_factory=LDMConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_hash(obj) -> str:
    if is_dataclass(obj):
        obj = asdict(obj)
    blob = json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, data: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in (data or {}).items():
        if key not in known:
            raise ConfigurationError(f"unknown config key '{where}{key}'")
        sub = _SECTIONS.get((cls, key))
        if sub is not None:
            value = _build(sub, value, f"{where}{key}.")
        elif isinstance(getattr(cls(), key), tuple):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


_SECTIONS = {
    (RunConfig, "corpus"): CorpusConfig,
    (RunConfig, "codec"): CodecConfig,
    (RunConfig, "ldm"): LDMConfig,
    (RunConfig, "sampling"): SamplingConfig,
}


def _coerce(text: str):
    return yaml.safe_load(text)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings (values parsed as YAML scalars)."""
    data = json.loads(json.dumps(data))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override '{item}' is not key=value")
        key, value = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _coerce(value)
    return data


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    data = RunConfig().to_dict()
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        version = loaded.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigVersionError(f"config version {version} != supported {CONFIG_VERSION}")
        data = _merge(data, loaded)
    data = apply_overrides(data, overrides or [])
    if data.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigVersionError(f"config version {data['version']} != supported {CONFIG_VERSION}")
    cfg = _build(RunConfig, data, "")
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    """Reject values the pipeline cannot honour before any work starts."""
    checks = [
        (cfg.device == "cpu", f"device {cfg.device!r} is not supported (only 'cpu')"),
        (cfg.ldm.style in ("pivot", "one-hot"), f"ldm.style must be pivot or one-hot, got {cfg.ldm.style!r}"),
        (cfg.ldm.schedule in ("cosine", "linear"), f"ldm.schedule must be cosine or linear, got {cfg.ldm.schedule!r}"),
        (cfg.ldm.window >= cfg.ldm.context >= 1, "ldm.window must be >= ldm.context >= 1"),
        (cfg.ldm.diffusion_steps >= 1, "ldm.diffusion_steps must be >= 1"),
        (cfg.sampling.mode in ("ddpm", "ddim"), f"sampling.mode must be ddpm or ddim, got {cfg.sampling.mode!r}"),
        (cfg.codec.latent_hw >= 1 and cfg.codec.resolution % 2 ** cfg.codec.downsample_stages == 0,
         "codec.resolution must be divisible by 2**len(codec.channels)"),
        (cfg.codec.lr_decay in ("cosine", "none"), "codec.lr_decay must be cosine or none"),
        (cfg.codec.steps >= 1 and cfg.ldm.steps >= 1, "step counts must be positive"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigurationError(msg)
    cfg.corpus.validate()


def _merge(base: dict, new: dict) -> dict:
    out = dict(base)
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def dump_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = cfg.to_dict()
    body["config_hash"] = cfg.hash()
    path.write_text(yaml.safe_dump(body, sort_keys=True))
    return path
