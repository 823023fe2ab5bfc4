"""Codec objective, training loop, checkpoints and the numpy-facing encode / decode API."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..config import CodecConfig, config_hash
from ..errors import CheckpointMismatchError, ContractError, DataError, NumericalFailure
from .model import CodecModel, PatchDiscriminator, RandomFeaturePerceptual, build_codec
from .quantize import Codebook, LatentGrid

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "uvtalk-codec"
STREAMS = ("motion", "wrinkle")


class MapNormalizer:
    """Maps to roughly [-1, 1]: motion divides by a dataset scale (mm), wrinkle is shifted affinely."""

    def __init__(self, stream: str, scale: float = 1.0):
        if stream not in STREAMS:
            raise ValueError(f"unknown stream {stream!r}")
        if stream == "motion" and not scale > 0:
            raise ValueError("motion normalization scale must be positive")
        self.stream = stream
        self.scale = float(scale) if stream == "motion" else 1.0

    def forward(self, maps: np.ndarray) -> np.ndarray:
        if self.stream == "motion":
            return maps / self.scale
        return 2.0 * maps - 1.0

    def inverse(self, x: np.ndarray) -> np.ndarray:
        if self.stream == "motion":
            return x * self.scale
        return 0.5 * (x + 1.0)

    def unit(self, x: np.ndarray) -> np.ndarray:
        """Normalised values mapped into [0, 1] for PSNR-style comparisons."""
        return 0.5 * (np.asarray(x) + 1.0)


@dataclass
class LossBreakdown:
    rec: torch.Tensor
    per: torch.Tensor
    adv: torch.Tensor
    code: torch.Tensor
    total: torch.Tensor

    def floats(self) -> dict:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}


def codec_loss(batch: torch.Tensor, model: CodecModel, step: int, config: CodecConfig,
               perceptual=None, discriminator=None) -> LossBreakdown:
    """Generator-side objective ``rec + eta_per*per + eta_adv*adv + eta_code*code``.

    ``adv`` is the hinge generator term and is held at zero before
    ``config.discriminator_warmup_steps``.
    """
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    recon, _, code, _ = model(batch)
    rec = (recon - batch).abs().mean()
    zero = recon.new_zeros(())
    per = perceptual(recon, batch).mean() if perceptual is not None else zero
    if discriminator is not None and step >= config.discriminator_warmup_steps:
        adv = -discriminator(recon).mean()
    else:
        adv = zero
    total = rec + config.eta_per * per + config.eta_adv * adv + config.eta_code * code
    return LossBreakdown(rec, per, adv, code, total)


def discriminator_loss(discriminator, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    return F.relu(1.0 - discriminator(real)).mean() + F.relu(1.0 + discriminator(fake.detach())).mean()


class Codec:
    """A trained (or freshly initialised) codec for one stream with numpy in/out.

    Maps are ``(..., R, R, 3)`` in stream units (mm for motion, (0, 1) for wrinkle).
    """

    def __init__(self, stream: str, config: CodecConfig, normalizer: MapNormalizer,
                 model: CodecModel | None = None, coverage: np.ndarray | None = None):
        self.stream = stream
        self.config = config
        self.normalizer = normalizer
        self.model = model if model is not None else build_codec(config)
        self.coverage = None if coverage is None else np.asarray(coverage, dtype=bool)
        self.step = 0
        self.loss_log: list[dict] = []
        self.model.eval()

    @property
    def codebook(self) -> Codebook:
        return Codebook(self.model.quantizer.embedding.weight.detach().double().numpy())

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        hw = self.config.latent_hw
        return hw, hw, self.config.latent_dim

    @property
    def latent_size(self) -> int:
        h, w, d = self.latent_shape
        return h * w * d

    def _to_tensor(self, maps: np.ndarray) -> torch.Tensor:
        maps = np.asarray(maps, dtype=np.float64)
        R = self.config.resolution
        if maps.shape[-3:] != (R, R, 3):
            raise ValueError(f"expected maps of shape (..., {R}, {R}, 3), got {maps.shape}")
        x = self.normalizer.forward(maps).reshape(-1, R, R, 3)
        return torch.from_numpy(x.astype(np.float32)).permute(0, 3, 1, 2).contiguous()

    def _from_tensor(self, x: torch.Tensor, lead: tuple) -> np.ndarray:
        out = x.permute(0, 2, 3, 1).double().numpy()
        out = self.normalizer.inverse(out)
        if self.stream == "motion" and self.coverage is not None:
            out = out * self.coverage[None, :, :, None]
        if self.stream == "wrinkle":
            out = np.clip(out, 1e-4, 1.0 - 1e-4)
        return out.reshape(lead + out.shape[1:])

    @torch.no_grad()
    def encode(self, maps: np.ndarray, batch: int = 256) -> np.ndarray:
        """Continuous latents ``(..., h, w, d)``."""
        lead = np.shape(maps)[:-3]
        x = self._to_tensor(maps)
        self.model.eval()
        z = torch.cat([self.model.encoder(x[s : s + batch]) for s in range(0, x.shape[0], batch)])
        return z.permute(0, 2, 3, 1).double().numpy().reshape(lead + self.latent_shape)

    @torch.no_grad()
    def quantize(self, latents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest codebook entries for ``(..., h, w, d)`` latents -> ``(values, indices)``."""
        latents = np.asarray(latents, dtype=np.float64)
        lead = latents.shape[:-3]
        z = torch.from_numpy(latents.reshape((-1,) + self.latent_shape).astype(np.float32)).permute(0, 3, 1, 2)
        idx = self.model.quantizer.indices(z)
        values = self.model.quantizer.embedding.weight.detach().double().numpy()[idx.numpy()]
        return values.reshape(lead + self.latent_shape), idx.numpy().reshape(lead + self.latent_shape[:2])

    @torch.no_grad()
    def decode(self, quantized: np.ndarray | LatentGrid, batch: int = 256) -> np.ndarray:
        """Maps from quantized latents ``(..., h, w, d)``."""
        if isinstance(quantized, LatentGrid):
            if not quantized.quantized:
                raise ContractError("decode requires a quantized latent grid")
            quantized = quantized.values
        quantized = np.asarray(quantized, dtype=np.float64)
        lead = quantized.shape[:-3]
        z = torch.from_numpy(quantized.reshape((-1,) + self.latent_shape).astype(np.float32))
        z = z.permute(0, 3, 1, 2).contiguous()
        self.model.eval()
        out = torch.cat([self.model.generator(z[s : s + batch]) for s in range(0, z.shape[0], batch)])
        return self._from_tensor(out, lead)

    def encode_grid(self, one_map: np.ndarray) -> LatentGrid:
        return LatentGrid(self.encode(one_map))

    def reconstruct(self, maps: np.ndarray) -> np.ndarray:
        q, _ = self.quantize(self.encode(maps))
        return self.decode(q)

    def decode_latents(self, latents: np.ndarray) -> np.ndarray:
        """Quantize then decode continuous latents (used after adding pivots to offsets)."""
        q, _ = self.quantize(latents)
        return self.decode(q)

    # ------------------------------------------------------------------ persistence

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(config_hash(self.config).encode())
        h.update(self.stream.encode())
        h.update(np.float64(self.normalizer.scale).tobytes())
        for name, t in sorted(self.model.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().tobytes())
        return h.hexdigest()[:16]

    def save(self, path, discriminator: PatchDiscriminator | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cb = self.model.quantizer.embedding.weight.detach().numpy().astype("<f4")
        torch.save({
            "format": CHECKPOINT_FORMAT,
            "stream": self.stream,
            "config": asdict(self.config),
            "config_hash": config_hash(self.config),
            "step": self.step,
            "codebook_f32": cb.tobytes(),
            "codebook_shape": list(cb.shape),
            "normalization_scale": self.normalizer.scale,
            "coverage": None if self.coverage is None else self.coverage.tolist(),
            "model": self.model.state_dict(),
            "discriminator": None if discriminator is None else discriminator.state_dict(),
            "loss_log": self.loss_log,
            "content_hash": self.content_hash(),
        }, path)
        return path

    @classmethod
    def load(cls, path) -> "Codec":
        try:
            blob = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as exc:  # noqa: BLE001 - surface as a data error with the path
            raise DataError(f"{path}: unreadable codec checkpoint ({exc})") from exc
        if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path}: not a codec checkpoint")
        cfg_dict = dict(blob["config"])
        cfg_dict["channels"] = tuple(cfg_dict["channels"])
        cfg = CodecConfig(**cfg_dict)
        if config_hash(cfg) != blob["config_hash"]:
            raise CheckpointMismatchError(f"{path}: config hash does not match embedded config")
        codec = cls(blob["stream"], cfg, MapNormalizer(blob["stream"], blob["normalization_scale"]),
                    coverage=None if blob["coverage"] is None else np.asarray(blob["coverage"], dtype=bool))
        codec.model.load_state_dict(blob["model"])
        codec.step = int(blob["step"])
        codec.loss_log = list(blob.get("loss_log", []))
        stored = np.frombuffer(blob["codebook_f32"], dtype="<f4").reshape(blob["codebook_shape"])
        if not np.array_equal(stored, codec.model.quantizer.embedding.weight.detach().numpy()):
            raise CheckpointMismatchError(f"{path}: raw codebook does not match model weights")
        if codec.content_hash() != blob["content_hash"]:
            raise CheckpointMismatchError(f"{path}: content hash mismatch")
        return codec


def codebook_utilization(codec: Codec, maps: np.ndarray) -> float:
    _, idx = codec.quantize(codec.encode(maps))
    return np.unique(idx).size / codec.config.codebook_size


def train_codec(maps: np.ndarray, stream: str, config: CodecConfig, normalization_scale: float = 1.0,
                coverage: np.ndarray | None = None, progress=None) -> Codec:
    """Train one stream's codec on ``maps (N, R, R, 3)`` (stream units).

    Single-threaded and deterministic for a fixed ``config.seed``. Raises
    :class:`NumericalFailure` on a non-finite loss.
    """
    maps = np.asarray(maps)
    if maps.ndim != 4 or maps.shape[1:] != (config.resolution, config.resolution, 3):
        raise ValueError(f"maps must be (N, {config.resolution}, {config.resolution}, 3), got {maps.shape}")
    torch.manual_seed(config.seed)
    normalizer = MapNormalizer(stream, normalization_scale)
    codec = Codec(stream, config, normalizer, coverage=coverage)
    model = codec.model
    data = codec._to_tensor(maps)
    perceptual = RandomFeaturePerceptual(seed=config.seed) if config.eta_per > 0 else None
    disc = PatchDiscriminator() if config.eta_adv > 0 else None
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=(0.5, 0.9))
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=(0.5, 0.9)) if disc else None
    gen = torch.Generator().manual_seed(config.seed)
    _init_codebook_from_data(model, data, gen)
    order = torch.randperm(data.shape[0], generator=gen)
    cursor = 0
    model.train()
    for step in range(config.steps):
        lr = _lr(config, step)
        for group in opt.param_groups:
            group["lr"] = lr
        if cursor + config.batch_size > order.numel():
            order = torch.randperm(data.shape[0], generator=gen)
            cursor = 0
        batch = data[order[cursor : cursor + config.batch_size]]
        cursor += config.batch_size
        losses = codec_loss(batch, model, step, config, perceptual, disc)
        if not torch.isfinite(losses.total):
            raise NumericalFailure(f"{stream} codec loss became non-finite at step {step}: {losses.floats()}")
        opt.zero_grad(set_to_none=True)
        losses.total.backward()
        opt.step()
        if disc is not None and step >= config.discriminator_warmup_steps:
            with torch.no_grad():
                fake = model(batch)[0]
            d_loss = discriminator_loss(disc, batch, fake)
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()
        codec.loss_log.append({"step": step, **{k: round(v, 7) for k, v in losses.floats().items()}})
        if progress is not None and (step % config.log_every == 0 or step == config.steps - 1):
            progress(step, losses.floats())
    codec.step = config.steps
    model.eval()
    codec._discriminator = disc
    return codec


def _lr(config: CodecConfig, step: int) -> float:
    if config.lr_decay == "none":
        return config.learning_rate
    frac = step / max(1, config.steps)
    return config.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * frac)))


@torch.no_grad()
def _init_codebook_from_data(model: CodecModel, data: torch.Tensor, gen: torch.Generator, n_maps: int = 256) -> None:
    # k-means++ (D^2) seeding from encoder outputs; entries are never re-seeded afterwards.
    q = model.quantizer
    pick = torch.randperm(data.shape[0], generator=gen)[: max(1, min(data.shape[0], n_maps))]
    z = model.encoder(data[pick]).permute(0, 2, 3, 1).reshape(-1, q.dim).double()
    first = int(torch.randint(0, z.shape[0], (1,), generator=gen))
    chosen = [first]
    d2 = (z - z[first]).pow(2).sum(1)
    for _ in range(1, q.size):
        total = d2.sum()
        if total <= 0:
            nxt = int(torch.randint(0, z.shape[0], (1,), generator=gen))
        else:
            nxt = int(torch.multinomial(d2 / total, 1, generator=gen))
        chosen.append(nxt)
        d2 = torch.minimum(d2, (z - z[nxt]).pow(2).sum(1))
    entries = z[chosen]
    jitter = torch.randn(q.size, q.dim, generator=gen, dtype=torch.float64) * (z.std() * 1e-3 + 1e-8)
    q.embedding.weight.copy_((entries + jitter).float())
