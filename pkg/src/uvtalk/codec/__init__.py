from .model import CodecModel, PatchDiscriminator, RandomFeaturePerceptual, build_codec
from .quantize import Codebook, LatentGrid, VectorQuantizer, nearest_indices, quantize, straight_through
from .train import (
    Codec, LossBreakdown, MapNormalizer, codebook_utilization, codec_loss, discriminator_loss, train_codec,
)

__all__ = [
    "Codebook", "Codec", "CodecModel", "LatentGrid", "LossBreakdown", "MapNormalizer",
    "PatchDiscriminator", "RandomFeaturePerceptual", "VectorQuantizer", "build_codec", "codebook_utilization",
    "codec_loss", "discriminator_loss", "nearest_indices", "quantize", "straight_through", "train_codec",
]
