"""Transformer denoiser over per-frame latent tokens with frame-aligned audio cross-attention."""

from __future__ import annotations

import math

import torch
from torch import nn


def alignment_mask(length: int, device=None) -> torch.Tensor:
    """Additive cross-attention mask: 0 on the frame diagonal, -inf elsewhere."""
    mask = torch.full((length, length), float("-inf"), device=device)
    mask.fill_diagonal_(0.0)
    return mask


def timestep_embedding(n: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = n.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class WindowDenoiser(nn.Module):
    """Predicts clean latents for ``T_p`` context frames plus ``<= T_w`` current frames.

    One token per frame. Context tokens carry clean latents from the previous
    window (or the learnable start features for the first window); current
    tokens carry noisy latents. Each frame token cross-attends only to the audio
    feature of the same frame.
    """

    def __init__(self, token_dim: int, audio_dim: int, window: int, context: int, model_dim: int = 128,
                 layers: int = 2, heads: int = 4, ff_mult: int = 4, n_identities: int = 0):
        super().__init__()
        if model_dim % heads:
            raise ValueError("model_dim must be divisible by heads")
        self.token_dim, self.audio_dim = token_dim, audio_dim
        self.window, self.context = window, context
        self.model_dim = model_dim
        self.in_proj = nn.Linear(token_dim, model_dim)
        self.audio_proj = nn.Linear(audio_dim, model_dim)
        self.segment = nn.Embedding(2, model_dim)
        self.position = nn.Parameter(torch.randn(context + window, model_dim) * 0.02)
        self.time_mlp = nn.Sequential(nn.Linear(model_dim, model_dim), nn.SiLU(), nn.Linear(model_dim, model_dim))
        self.start_features = nn.Parameter(torch.randn(context, token_dim) * 0.02)
        self.identity = nn.Embedding(n_identities, model_dim) if n_identities > 0 else None
        layer = nn.TransformerDecoderLayer(model_dim, heads, ff_mult * model_dim, dropout=0.0,
                                           activation="gelu", batch_first=True, norm_first=True)
        self.decoder = nn.TransformerDecoder(layer, layers)
        self.norm = nn.LayerNorm(model_dim)
        self.out_proj = nn.Linear(model_dim, token_dim)

    def forward(self, x_noisy: torch.Tensor, x_prev: torch.Tensor | None, audio: torch.Tensor, n: torch.Tensor,
                first: torch.Tensor | None = None, identity: torch.Tensor | None = None) -> torch.Tensor:
        """
        x_noisy: (B, L, D) noisy current frames, L <= window
        x_prev:  (B, T_p, D) clean context, or None for all-first windows
        audio:   (B, T_p + L, d_a) aligned features (context positions first)
        n:       (B,) diffusion steps
        first:   (B,) bool, rows whose context is replaced by the start features
        returns  (B, T_p + L, D) predicted clean frames
        """
        B, L, D = x_noisy.shape
        Tp = self.context
        if L > self.window or D != self.token_dim:
            raise ValueError(f"bad current-window shape {tuple(x_noisy.shape)}")
        if audio.shape[:2] != (B, Tp + L):
            raise ValueError(f"audio has {audio.shape[1]} frames, sample has {Tp + L}")
        start = self.start_features.unsqueeze(0).expand(B, Tp, D)
        if x_prev is None:
            x_prev = start
        elif first is not None:
            x_prev = torch.where(first[:, None, None], start, x_prev)
        tokens = self.in_proj(torch.cat([x_prev, x_noisy], dim=1))
        seg = torch.cat([torch.zeros(Tp, dtype=torch.long), torch.ones(L, dtype=torch.long)])
        tokens = tokens + self.segment(seg)[None] + self.position[None, : Tp + L]
        cond = self.time_mlp(timestep_embedding(n, self.model_dim))
        if self.identity is not None and identity is not None:
            cond = cond + self.identity(identity)
        tokens = tokens + cond[:, None, :]
        memory = self.audio_proj(audio) + self.position[None, : Tp + L]
        h = self.decoder(tokens, memory, memory_mask=alignment_mask(Tp + L, tokens.device))
        return self.out_proj(self.norm(h))
