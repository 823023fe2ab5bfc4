"""Glue between the corpus on disk and the trainable pieces.

Codec datasets from the manifest, per-identity pivots, LDM training sequences
and single-sequence generation. Shared by the CLI and the acceptance suite.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .audio import AudioClip, LogMelBackend, align_features, extract_features
from .codec import Codec, train_codec
from .config import CodecConfig, LDMConfig
from .diffusion import GeneratedSequence, LatentDiffusion, TrainingSequence, sample_sequence, train_ldm
from .errors import ConfigurationError, DataError
from .geometry import MeshTopology, raster_plan
from .style import StylePivot, compute_pivot, to_offsets
from .synthdata import DatasetManifest

log = logging.getLogger(__name__)


def motion_maps(manifest: DatasetManifest, seq: dict, resolution: int, topology: MeshTopology | None = None):
    """Rasterized motion maps ``(T, R, R, 3)`` of one sequence."""
    topology = topology or manifest.topology()
    return raster_plan(topology, resolution).apply(manifest.load_motion(seq).astype(np.float64))


def stream_maps(manifest: DatasetManifest, seq: dict, stream: str, resolution: int,
                topology: MeshTopology | None = None) -> np.ndarray:
    if stream == "motion":
        return motion_maps(manifest, seq, resolution, topology)
    if stream == "wrinkle":
        w = manifest.load_wrinkle(seq).astype(np.float64)
        if w.shape[1:3] != (resolution, resolution):
            raise ConfigurationError(f"wrinkle maps are {w.shape[1]}x{w.shape[2]}, codec expects {resolution}")
        return w
    raise ValueError(f"unknown stream {stream!r}")


def coverage_mask(manifest: DatasetManifest, resolution: int) -> np.ndarray:
    return raster_plan(manifest.topology(), resolution).coverage.copy()


def train_stream_codec(manifest: DatasetManifest, stream: str, cfg: CodecConfig, split: str = "train",
                       progress=None) -> Codec:
    seqs = manifest.split(split)
    if not seqs:
        raise DataError(f"no sequences in split {split!r}")
    topo = manifest.topology()
    maps = np.concatenate([stream_maps(manifest, s, stream, cfg.resolution, topo) for s in seqs])
    scale = manifest.motion_scale if stream == "motion" else 1.0
    coverage = coverage_mask(manifest, cfg.resolution) if stream == "motion" else None
    return train_codec(maps, stream, cfg, scale, coverage, progress)


def encode_sequence(manifest: DatasetManifest, seq: dict, codec: Codec,
                    topology: MeshTopology | None = None) -> np.ndarray:
    """Continuous latents of one sequence, flattened to ``(T, h*w*d)``."""
    z = codec.encode(stream_maps(manifest, seq, codec.stream, codec.config.resolution, topology))
    return z.reshape(z.shape[0], -1)


def identity_pivots(manifest: DatasetManifest, codec: Codec, splits=("train",),
                    select=None) -> dict[str, StylePivot]:
    """One pivot per identity over all frames of its sequences in ``splits``.

    ``select(seqs) -> seqs`` optionally restricts which of an identity's sequences are used.
    """
    topo = manifest.topology()
    by_id: dict[str, list[dict]] = {}
    for s in manifest.sequences:
        if s["split"] in splits:
            by_id.setdefault(s["identity"], []).append(s)
    out = {}
    h = codec.content_hash()
    for label in sorted(by_id):
        seqs = select(by_id[label]) if select else by_id[label]
        z = np.concatenate([encode_sequence(manifest, s, codec, topo) for s in seqs])
        out[label] = compute_pivot(z, codec.stream, label, h)
    return out


def sequence_audio_features(manifest: DatasetManifest, seq: dict, backend=None, frames: int | None = None):
    clip = AudioClip.from_wav(manifest.path(seq["audio"]))
    return align_features(extract_features(clip, backend or LogMelBackend()), frames or int(seq["frames"]))


def frames_for_audio(seconds: float, fps: float) -> int:
    return max(1, math.ceil(seconds * fps - 1e-9))


@dataclass
class LDMData:
    sequences: list[TrainingSequence]
    offset_scale: np.ndarray
    center: np.ndarray
    identities: list[str]


def prepare_ldm_data(manifest: DatasetManifest, motion_codec: Codec, wrinkle_codec: Codec, style: str = "pivot",
                     split: str = "train", backend=None) -> LDMData:
    """Concatenated ``[motion | wrinkle]`` latent tokens per frame, in model space.

    Pivot mode subtracts each identity's pivots; one-hot mode keeps absolute
    latents, centred by the global mean, and tags sequences with an identity index.
    Each token dimension is then divided by its standard deviation over the split.
    """
    if style not in ("pivot", "one-hot"):
        raise ConfigurationError(f"unknown style mode {style!r}")
    topo = manifest.topology()
    seqs = manifest.split(split)
    if not seqs:
        raise DataError(f"no sequences in split {split!r}")
    identities = sorted({s["identity"] for s in seqs})
    raw = []
    for s in seqs:
        zm = encode_sequence(manifest, s, motion_codec, topo)
        zw = encode_sequence(manifest, s, wrinkle_codec, topo)
        raw.append((s, zm, zw, sequence_audio_features(manifest, s, backend, zm.shape[0])))
    if style == "pivot":
        pm, pw = {}, {}
        for label in identities:
            pm[label] = compute_pivot(np.concatenate([r[1] for r in raw if r[0]["identity"] == label]))
            pw[label] = compute_pivot(np.concatenate([r[2] for r in raw if r[0]["identity"] == label]))
        tokens = [np.concatenate([to_offsets(zm, pm[s["identity"]]), to_offsets(zw, pw[s["identity"]])], axis=1)
                  for s, zm, zw, _ in raw]
        center = np.zeros(tokens[0].shape[1])
    else:
        tokens = [np.concatenate([zm, zw], axis=1) for _, zm, zw, _ in raw]
        center = np.concatenate(tokens).mean(axis=0)
    scale = np.concatenate(tokens).std(axis=0)
    scale = np.where(scale > 1e-6, scale, 1.0)
    out = [TrainingSequence(((t - center) / scale).astype(np.float32), a.astype(np.float32),
                            identities.index(s["identity"]) if style == "one-hot" else 0)
           for t, (s, _, _, a) in zip(tokens, raw)]
    return LDMData(out, scale, center, identities)


def train_corpus_ldm(manifest: DatasetManifest, motion_codec: Codec, wrinkle_codec: Codec, cfg: LDMConfig,
                     backend=None, progress=None) -> LatentDiffusion:
    data = prepare_ldm_data(manifest, motion_codec, wrinkle_codec, cfg.style, backend=backend)
    return train_ldm(data.sequences, cfg, data.offset_scale, motion_codec.content_hash(),
                     wrinkle_codec.content_hash(), motion_codec.latent_size,
                     data.identities if cfg.style == "one-hot" else None, data.center, progress)


def generate_for_clip(clip: AudioClip, fps: float, ldm: LatentDiffusion, motion_codec: Codec, wrinkle_codec: Codec,
                      topology: MeshTopology, motion_pivot=None, wrinkle_pivot=None, identity: str | None = None,
                      seed: int = 0, mode: str = "ddpm", ddim_steps: int = 10, backend=None,
                      frames: int | None = None) -> GeneratedSequence:
    """Audio clip -> motion and wrinkle sequences with ``ceil(seconds * fps)`` frames."""
    T = frames or frames_for_audio(clip.duration, fps)
    feats = align_features(extract_features(clip, backend or LogMelBackend()), T)
    index = None
    if ldm.config.style == "one-hot":
        if identity is None or identity not in ldm.identities:
            raise ConfigurationError(f"one-hot generation needs --identity among {ldm.identities}")
        index = ldm.identities.index(identity)
    return sample_sequence(feats, motion_pivot, wrinkle_pivot, ldm, motion_codec, wrinkle_codec, topology, seed,
                           index, mode, ddim_steps)
