"""Convolutional encoder / generator, patch discriminator and a frozen random-feature perceptual distance."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class ResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        groups = 4 if ch % 4 == 0 else 1
        self.body = nn.Sequential(
            nn.GroupNorm(groups, ch), nn.SiLU(), nn.Conv2d(ch, ch, 3, padding=1),
            nn.GroupNorm(groups, ch), nn.SiLU(), nn.Conv2d(ch, ch, 3, padding=1),
        )

    def forward(self, x):
        return x + self.body(x)


class SpatialAttention(nn.Module):
    """Single-head self-attention over the lowest-resolution grid."""

    def __init__(self, ch: int):
        super().__init__()
        groups = 4 if ch % 4 == 0 else 1
        self.norm = nn.GroupNorm(groups, ch)
        self.qkv = nn.Conv2d(ch, 3 * ch, 1)
        self.proj = nn.Conv2d(ch, ch, 1)

    def forward(self, x):
        B, C, H, W = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(B, 3, C, H * W).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k / C ** 0.5, dim=-1)  # (B, HW, HW)
        out = (v @ attn.transpose(1, 2)).reshape(B, C, H, W)
        return x + self.proj(out)


class Encoder(nn.Module):
    def __init__(self, in_ch: int, channels, latent_dim: int, attention: bool = True):
        super().__init__()
        layers = [nn.Conv2d(in_ch, channels[0], 3, padding=1)]
        c = channels[0]
        for co in channels:
            layers += [nn.Conv2d(c, co, 4, stride=2, padding=1), nn.SiLU()]
            c = co
        layers.append(ResBlock(c))
        if attention:
            layers.append(SpatialAttention(c))
        layers += [nn.GroupNorm(4 if c % 4 == 0 else 1, c), nn.SiLU(), nn.Conv2d(c, latent_dim, 1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Generator(nn.Module):
    def __init__(self, out_ch: int, channels, latent_dim: int, attention: bool = True):
        super().__init__()
        c = channels[-1]
        layers = [nn.Conv2d(latent_dim, c, 3, padding=1), ResBlock(c)]
        if attention:
            layers.append(SpatialAttention(c))
        for co in reversed(channels):
            layers += [nn.ConvTranspose2d(c, co, 4, stride=2, padding=1), nn.SiLU()]
            c = co
        layers.append(nn.Conv2d(c, out_ch, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


class PatchDiscriminator(nn.Module):
    def __init__(self, in_ch: int = 3, ch: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(ch, 2 * ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * ch, 2 * ch, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * ch, 1, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x)


class RandomFeaturePerceptual(nn.Module):
    """Multi-scale feature distance through a frozen, seeded random conv stack.

    Stands in for a pretrained VGG/LPIPS backbone: channel-normalised features
    are compared with squared error at each scale and averaged.
    """

    backend = "random-conv"

    def __init__(self, in_ch: int = 3, widths=(16, 32, 32), seed: int = 0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        convs = []
        c = in_ch
        for wdt in widths:
            conv = nn.Conv2d(c, wdt, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) * (2.0 / (9 * c)) ** 0.5)
                conv.bias.zero_()
            convs.append(conv)
            c = wdt
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x):
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x / (x.pow(2).sum(1, keepdim=True).sqrt() + 1e-6))
        return feats

    def forward(self, x, y):
        """Per-sample distance, shape ``(B,)``."""
        fx, fy = self.features(x), self.features(y)
        return sum((a - b).pow(2).sum(1).mean(dim=(1, 2)) for a, b in zip(fx, fy)) / len(fx)


class CodecModel(nn.Module):
    """Encoder, quantizer and generator for one stream (motion or wrinkle)."""

    def __init__(self, encoder: nn.Module, quantizer: nn.Module, generator: nn.Module):
        super().__init__()
        self.encoder = encoder
        self.quantizer = quantizer
        self.generator = generator

    def forward(self, x):
        z = self.encoder(x)
        z_q, code_loss, idx = self.quantizer(z)
        return self.generator(z_q), z, code_loss, idx


def build_codec(cfg, in_ch: int = 3) -> CodecModel:
    from ..errors import ConfigurationError
    from .quantize import VectorQuantizer

    if cfg.resolution % 2 ** cfg.downsample_stages:
        raise ConfigurationError(
            f"resolution {cfg.resolution} is not divisible by 2^{cfg.downsample_stages}"
        )
    return CodecModel(
        Encoder(in_ch, cfg.channels, cfg.latent_dim, cfg.attention),
        VectorQuantizer(cfg.codebook_size, cfg.latent_dim, cfg.beta),
        Generator(in_ch, cfg.channels, cfg.latent_dim, cfg.attention),
    )
