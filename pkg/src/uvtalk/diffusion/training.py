"""Window sampling, the clean-sample diffusion loss, LDM training and checkpoints."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..config import LDMConfig, config_hash
from ..errors import CheckpointMismatchError, ConfigurationError, DataError, NumericalFailure
from .denoiser import WindowDenoiser
from .schedule import NoiseSchedule, make_schedule, q_sample

CHECKPOINT_FORMAT = "uvtalk-ldm"


@dataclass
class TrainingSequence:
    """One sequence in model space: ``x`` is ``(T, D_tok)`` (already scaled), ``audio`` ``(T, d_a)``."""

    x: np.ndarray
    audio: np.ndarray
    identity: int = 0

    def __post_init__(self):
        if self.x.shape[0] != self.audio.shape[0]:
            raise ValueError("latent and audio frame counts differ")


@dataclass
class LatentDiffusion:
    """Denoiser plus everything needed to sample: schedule, window sizes, offset scaling, codec references."""

    config: LDMConfig
    model: WindowDenoiser
    schedule: NoiseSchedule
    offset_scale: np.ndarray  # (D_tok,)
    motion_codec_hash: str
    wrinkle_codec_hash: str
    motion_latent_size: int
    identities: list[str] = field(default_factory=list)
    center: np.ndarray | None = None  # (D_tok,) subtracted before scaling; zero in pivot mode
    step: int = 0
    loss_log: list[dict] = field(default_factory=list)

    @property
    def token_dim(self) -> int:
        return self.model.token_dim

    def __post_init__(self):
        if self.center is None:
            self.center = np.zeros_like(self.offset_scale)

    def to_model_space(self, offsets: np.ndarray) -> np.ndarray:
        return (offsets - self.center) / self.offset_scale

    def from_model_space(self, x: np.ndarray) -> np.ndarray:
        return x * self.offset_scale + self.center

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.config),
            "config_hash": config_hash(self.config),
            "schedule": self.schedule.to_dict(),
            "window": self.config.window,
            "context": self.config.context,
            "token_dim": self.token_dim,
            "motion_latent_size": self.motion_latent_size,
            "offset_scale": self.offset_scale.tolist(),
            "center": self.center.tolist(),
            "motion_codec_hash": self.motion_codec_hash,
            "wrinkle_codec_hash": self.wrinkle_codec_hash,
            "identities": self.identities,
            "step": self.step,
            "model": self.model.state_dict(),
            "loss_log": self.loss_log,
        }, path)
        return path

    @classmethod
    def load(cls, path) -> "LatentDiffusion":
        try:
            blob = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as exc:  # noqa: BLE001
            raise DataError(f"{path}: unreadable LDM checkpoint ({exc})") from exc
        if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path}: not an LDM checkpoint")
        cfg = LDMConfig(**blob["config"])
        if config_hash(cfg) != blob["config_hash"]:
            raise CheckpointMismatchError(f"{path}: config hash does not match embedded config")
        model = build_denoiser(cfg, blob["token_dim"], len(blob["identities"]))
        model.load_state_dict(blob["model"])
        model.eval()
        return cls(cfg, model, NoiseSchedule.from_dict(blob["schedule"]),
                   np.asarray(blob["offset_scale"], dtype=np.float64), blob["motion_codec_hash"],
                   blob["wrinkle_codec_hash"], int(blob["motion_latent_size"]), list(blob["identities"]),
                   np.asarray(blob["center"], dtype=np.float64), int(blob["step"]), list(blob.get("loss_log", [])))

    def check_codecs(self, motion_hash: str, wrinkle_hash: str) -> None:
        if motion_hash != self.motion_codec_hash or wrinkle_hash != self.wrinkle_codec_hash:
            raise CheckpointMismatchError(
                "codec checkpoints do not match the LDM: expected motion "
                f"{self.motion_codec_hash} / wrinkle {self.wrinkle_codec_hash}, "
                f"got {motion_hash} / {wrinkle_hash}"
            )


def build_denoiser(cfg: LDMConfig, token_dim: int, n_identities: int = 0) -> WindowDenoiser:
    if cfg.window < cfg.context:
        raise ConfigurationError("window (T_w) must be at least the context length (T_p)")
    return WindowDenoiser(token_dim, cfg.audio_dim, cfg.window, cfg.context, cfg.model_dim, cfg.layers,
                          cfg.heads, cfg.ff_mult, n_identities if cfg.style == "one-hot" else 0)


def window_mse(pred: torch.Tensor, target: torch.Tensor, frame_weight: torch.Tensor | None = None) -> torch.Tensor:
    """Mean squared error over frames (optionally weighted 0/1 per frame) and token dims."""
    sq = (pred - target).pow(2)
    if frame_weight is None:
        return sq.mean()
    w = frame_weight[..., None].to(sq.dtype).expand_as(sq)
    return (sq * w).sum() / w.sum().clamp_min(1.0)


def sample_windows(sequences: list[TrainingSequence], cfg: LDMConfig, batch_size: int,
                   rng: np.random.Generator) -> dict:
    """Random training windows. First windows (start 0) get zero placeholders in the context slots."""
    Tp, Tw = cfg.context, cfg.window
    L = Tw
    if rng.uniform() < cfg.truncate_prob:
        L = int(rng.integers(1, Tw + 1))
    lengths = np.array([s.x.shape[0] for s in sequences], dtype=np.float64)
    D = sequences[0].x.shape[1]
    A = sequences[0].audio.shape[1]
    x0 = np.zeros((batch_size, Tp + L, D), dtype=np.float32)
    audio = np.zeros((batch_size, Tp + L, A), dtype=np.float32)
    first = np.zeros(batch_size, dtype=bool)
    ident = np.zeros(batch_size, dtype=np.int64)
    for b in range(batch_size):
        seq = sequences[int(rng.choice(len(sequences), p=lengths / lengths.sum()))]
        T = seq.x.shape[0]
        ident[b] = seq.identity
        if T < Tp + L or rng.uniform() < cfg.first_window_prob:
            first[b] = True
            n = min(L, T)
            x0[b, Tp : Tp + n] = seq.x[:n]
            audio[b, Tp : Tp + n] = seq.audio[:n]
            if n < L:  # sequence shorter than the window: repeat the last frame
                x0[b, Tp + n :] = seq.x[n - 1]
                audio[b, Tp + n :] = seq.audio[n - 1]
        else:
            s = int(rng.integers(Tp, T - L + 1))
            x0[b] = seq.x[s - Tp : s + L]
            audio[b] = seq.audio[s - Tp : s + L]
    return {"x0": torch.from_numpy(x0), "audio": torch.from_numpy(audio),
            "first": torch.from_numpy(first), "identity": torch.from_numpy(ident)}


def ldm_loss(batch: dict, schedule: NoiseSchedule, denoiser, generator: torch.Generator,
             context: int | None = None) -> torch.Tensor:
    """Draw ``n`` uniformly in ``[1, N]``, noise the current frames only, and regress all clean frames.

    Context frames of first windows have no ground truth (they are the start
    features) and are left out of the average.
    """
    x0 = batch["x0"]
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    Tp = denoiser.context if context is None else context
    B = x0.shape[0]
    n = torch.randint(1, schedule.N + 1, (B,), generator=generator)
    cur = x0[:, Tp:]
    noise = torch.randn(cur.shape, generator=generator, dtype=cur.dtype)
    x_n = q_sample(cur, n, noise, schedule)
    first = batch.get("first")
    if first is None:
        first = torch.zeros(B, dtype=torch.bool)
    pred = denoiser(x_n, x0[:, :Tp], batch["audio"], n, first, batch.get("identity"))
    weight = torch.ones(B, x0.shape[1])
    weight[first, :Tp] = 0.0
    return window_mse(pred, x0, weight)


def train_ldm(sequences: list[TrainingSequence], cfg: LDMConfig, offset_scale: np.ndarray,
              motion_codec_hash: str, wrinkle_codec_hash: str, motion_latent_size: int,
              identities: list[str] | None = None, center: np.ndarray | None = None,
              progress=None) -> LatentDiffusion:
    if not sequences:
        raise ValueError("no training sequences")
    torch.manual_seed(cfg.seed)
    D = sequences[0].x.shape[1]
    if sequences[0].audio.shape[1] != cfg.audio_dim:
        raise ConfigurationError(f"audio features have dim {sequences[0].audio.shape[1]}, config says {cfg.audio_dim}")
    schedule = make_schedule(cfg.diffusion_steps, cfg.schedule)
    model = build_denoiser(cfg, D, len(identities or []))
    ldm = LatentDiffusion(cfg, model, schedule, np.asarray(offset_scale, dtype=np.float64), motion_codec_hash,
                          wrinkle_codec_hash, motion_latent_size, list(identities or []),
                          None if center is None else np.asarray(center, dtype=np.float64))
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=0.0)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model.train()
    for step in range(cfg.steps):
        frac = step / max(1, cfg.steps)
        lr = cfg.learning_rate * min(1.0, (step + 1) / 200) * (0.05 + 0.95 * 0.5 * (1 + math.cos(math.pi * frac)))
        for g in opt.param_groups:
            g["lr"] = lr
        batch = sample_windows(sequences, cfg, cfg.batch_size, rng)
        loss = ldm_loss(batch, schedule, model, gen)
        if not torch.isfinite(loss):
            raise NumericalFailure(f"LDM loss became non-finite at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        value = float(loss.detach())
        ldm.loss_log.append({"step": step, "loss": round(value, 7)})
        if progress is not None and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            progress(step, value)
    model.eval()
    ldm.step = cfg.steps
    return ldm
