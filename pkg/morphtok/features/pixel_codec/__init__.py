"""
Pixel codec: toy VQ autoencoder mapping images to low-level pixel tokens
"""

from .codec_config import CodecConfig
from .quantizer import Codebook, Quantized, quantize, nearest_ids, straight_through, vq_losses, code_usage
from .codec import PixelCodec, images_to_tensor, tensor_to_images
from .trainer import train_codec, roundtrip_l1

__all__ = [
    "CodecConfig",
    "Codebook",
    "Quantized",
    "quantize",
    "nearest_ids",
    "straight_through",
    "vq_losses",
    "code_usage",
    "PixelCodec",
    "images_to_tensor",
    "tensor_to_images",
    "train_codec",
    "roundtrip_l1",
]
