"""Ancestral window sampling and full-sequence generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import ConfigurationError
from ..geometry import MeshTopology, sample_plan
from .schedule import NoiseSchedule
from .training import LatentDiffusion


def window_plan(T: int, window: int) -> list[tuple[int, int]]:
    """``(start, length)`` of each generation window; the last one may be shorter."""
    if T < 1:
        raise ValueError("T must be >= 1")
    count = 1 if T <= window else math.ceil((T - window) / window) + 1
    return [(k * window, min(window, T - k * window)) for k in range(count)]


@torch.no_grad()
def denoise_window(ldm: LatentDiffusion, audio: torch.Tensor, length: int, context: torch.Tensor | None,
                   generator: torch.Generator, identity: int | None = None, mode: str = "ddpm",
                   ddim_steps: int = 10) -> torch.Tensor:
    """Run the reverse process for one window; returns clean ``(T_p + length, D)`` in model space."""
    sched: NoiseSchedule = ldm.schedule
    model = ldm.model
    D = ldm.token_dim
    ab = torch.as_tensor(sched.alphas_bar, dtype=torch.float32)
    x = torch.randn((1, length, D), generator=generator)
    prev = None if context is None else context[None]
    first = torch.tensor([context is None])
    ident = None if identity is None else torch.tensor([identity])
    audio = audio[None]

    def predict(x_n, n):
        return model(x_n, prev, audio, torch.tensor([n]), first, ident)

    if mode == "ddpm":
        pred = None
        for n in range(sched.N, 0, -1):
            pred = predict(x, n)
            x0_hat = pred[:, model.context :]
            if n == 1:
                x = x0_hat
                break
            a_n, a_prev = ab[n], ab[n - 1]
            beta = 1.0 - a_n / a_prev
            c1 = a_prev.sqrt() * beta / (1.0 - a_n)
            c2 = (1.0 - beta).sqrt() * (1.0 - a_prev) / (1.0 - a_n)
            var = beta * (1.0 - a_prev) / (1.0 - a_n)
            x = c1 * x0_hat + c2 * x + var.sqrt() * torch.randn(x.shape, generator=generator)
        out = pred.clone()
        out[:, model.context :] = x
        return out[0]
    if mode == "ddim":
        steps = np.unique(np.linspace(sched.N, 1, max(1, ddim_steps)).round().astype(int))[::-1]
        pred = None
        for i, n in enumerate(steps):
            pred = predict(x, int(n))
            x0_hat = pred[:, model.context :]
            n_next = int(steps[i + 1]) if i + 1 < len(steps) else 0
            eps = (x - ab[n].sqrt() * x0_hat) / (1.0 - ab[n]).sqrt()
            x = ab[n_next].sqrt() * x0_hat + (1.0 - ab[n_next]).sqrt() * eps
        out = pred.clone()
        out[:, model.context :] = x
        return out[0]
    raise ValueError(f"unknown sampling mode {mode!r}")


@dataclass
class SampledOffsets:
    offsets: np.ndarray  # (T, D_tok) in latent units
    windows: list[tuple[int, int]]
    contexts: list[np.ndarray | None] = field(default_factory=list)  # model-space context fed to each window
    clean: list[np.ndarray] = field(default_factory=list)  # model-space clean current frames per window


def sample_offsets(ldm: LatentDiffusion, audio_features: np.ndarray, seed: int, identity: int | None = None,
                   mode: str = "ddpm", ddim_steps: int = 10) -> SampledOffsets:
    """Autoregressive generation of latent offsets for ``T`` aligned audio frames."""
    audio_features = np.asarray(audio_features, dtype=np.float32)
    T = audio_features.shape[0]
    Tw, Tp = ldm.config.window, ldm.config.context
    if audio_features.ndim != 2 or audio_features.shape[1] != ldm.config.audio_dim:
        raise ValueError(f"audio features must be (T, {ldm.config.audio_dim})")
    gen = torch.Generator().manual_seed(int(seed))
    plan = window_plan(T, Tw)
    out = np.zeros((T, ldm.token_dim), dtype=np.float64)
    result = SampledOffsets(out, plan)
    context = None
    audio_t = torch.from_numpy(audio_features)
    for start, length in plan:
        a = torch.zeros((Tp + length, audio_t.shape[1]))
        lo = max(0, start - Tp)
        a[Tp - (start - lo) :] = audio_t[lo : start + length]
        if context is None:
            a[:Tp] = 0.0
        clean = denoise_window(ldm, a, length, context, gen, identity, mode, ddim_steps)
        current = clean[Tp:]
        result.contexts.append(None if context is None else context.numpy().copy())
        result.clean.append(current.numpy().copy())
        out[start : start + length] = current.double().numpy()
        if length >= Tp:
            context = current[-Tp:].clone()
    result.offsets = ldm.from_model_space(out)
    return result


@dataclass
class GeneratedSequence:
    motion: np.ndarray  # (T, n, 3) mm
    wrinkle: np.ndarray  # (T, R, R, 3) in (0, 1)
    motion_latents: np.ndarray  # (T, h, w, d) continuous, pivot added
    wrinkle_latents: np.ndarray
    windows: list[tuple[int, int]]
    uncovered_vertices: int = 0


def sample_sequence(audio_features: np.ndarray, motion_pivot, wrinkle_pivot, ldm: LatentDiffusion,
                    motion_codec, wrinkle_codec, topology: MeshTopology, seed: int, identity: int | None = None,
                    mode: str = "ddpm", ddim_steps: int = 10) -> GeneratedSequence:
    """Audio features ``(T, d_a)`` -> vertex offsets and wrinkle maps.

    Offsets predicted by the LDM are added to the style pivots, quantized
    through each codebook and decoded; motion maps are read back per vertex.
    With ``ldm.config.style == "one-hot"`` the pivots must be ``None`` and
    ``identity`` selects the trained identity embedding instead.
    """
    ldm.check_codecs(motion_codec.content_hash(), wrinkle_codec.content_hash())
    m_size, w_size = motion_codec.latent_size, wrinkle_codec.latent_size
    if m_size + w_size != ldm.token_dim or m_size != ldm.motion_latent_size:
        raise ConfigurationError("codec latent sizes do not match the LDM token layout")
    if ldm.config.style == "pivot":
        for piv, size, stream in ((motion_pivot, m_size, "motion"), (wrinkle_pivot, w_size, "wrinkle")):
            vec = getattr(piv, "vector", piv)
            if vec is None or np.asarray(vec).size != size:
                raise ConfigurationError(f"{stream} pivot dimension does not match codec latent size {size}")
        p_m = np.asarray(getattr(motion_pivot, "vector", motion_pivot), dtype=np.float64)
        p_w = np.asarray(getattr(wrinkle_pivot, "vector", wrinkle_pivot), dtype=np.float64)
    else:
        if identity is None:
            raise ConfigurationError("one-hot style generation needs an identity index")
        p_m, p_w = np.zeros(m_size), np.zeros(w_size)
    sampled = sample_offsets(ldm, audio_features, seed, identity if ldm.config.style == "one-hot" else None,
                             mode, ddim_steps)
    T = sampled.offsets.shape[0]
    z_m = (sampled.offsets[:, :m_size] + p_m).reshape((T,) + motion_codec.latent_shape)
    z_w = (sampled.offsets[:, m_size:] + p_w).reshape((T,) + wrinkle_codec.latent_shape)
    motion_maps = motion_codec.decode_latents(z_m)
    wrinkle_maps = wrinkle_codec.decode_latents(z_w)
    coverage = motion_codec.coverage if motion_codec.coverage is not None else np.ones(motion_maps.shape[1:3], bool)
    plan = sample_plan(topology, coverage)
    motion = plan.apply(motion_maps)
    return GeneratedSequence(motion, wrinkle_maps, z_m, z_w, sampled.windows, int(plan.uncovered.sum()))
