"""
Pixel Codec Module
Toy VQ autoencoder: image <-> (H/p)^2 discrete pixel tokens
"""

from __future__ import annotations

from typing import Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from ...utils.errors import MorphError
from .codec_config import CodecConfig
from .quantizer import Codebook, Quantized, quantize


def images_to_tensor(images: np.ndarray) -> torch.Tensor:
    """(N, H, W, 3) or (H, W, 3) uint8 -> (N, 3, H, W) float in [0, 1]"""
    array = np.asarray(images)
    if array.ndim == 3:
        array = array[None]
    if array.ndim != 4 or array.shape[-1] != 3:
        raise MorphError("SHAPE_MISMATCH", f"expected (N, H, W, 3) images, got {array.shape}")
    return torch.from_numpy(array.astype(np.float32) / 255.0).permute(0, 3, 1, 2).contiguous()


def tensor_to_images(x: torch.Tensor) -> np.ndarray:
    """(N, 3, H, W) float in [0, 1] -> (N, H, W, 3) uint8"""
    array = x.detach().clamp(0.0, 1.0).permute(0, 2, 3, 1).cpu().numpy()
    return np.round(array * 255.0).astype(np.uint8)


class PixelCodec(nn.Module):
    """Patchwise conv encoder, codebook, mirror decoder"""

    def __init__(self, config: CodecConfig):
        super().__init__()
        if config.image_size % config.patch_size != 0:
            raise MorphError("SHAPE_MISMATCH", "image size must be divisible by the patch size")
        self.config = config
        p, h, d = config.patch_size, config.hidden, config.embed_dim
        self.grid = config.image_size // p

        self.encoder = nn.Sequential(
            nn.Conv2d(3, h, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(h, h, p, stride=p),
            nn.ReLU(),
            nn.Conv2d(h, d, 1),
        )
        self.codebook = Codebook(config.codebook_size, d)
        self.decoder = nn.Sequential(
            nn.Conv2d(d, h, 1),
            nn.ReLU(),
            nn.ConvTranspose2d(h, h, p, stride=p),
            nn.ReLU(),
            nn.Conv2d(h, 3, 3, padding=1),
            nn.Sigmoid(),
        )

    @property
    def num_tokens(self) -> int:
        return self.grid * self.grid

    def _check_images(self, x: torch.Tensor):
        size = self.config.image_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, size, size):
            raise MorphError("SHAPE_MISMATCH", f"expected (N, 3, {size}, {size}), got {tuple(x.shape)}")

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """(N, 3, H, W) -> (N, L_x, d) pre-quantization features, row-major patches"""
        self._check_images(x)
        z = self.encoder(x)
        return z.flatten(2).transpose(1, 2)

    def decode_codes(self, codes: torch.Tensor) -> torch.Tensor:
        """(N, L_x, d) -> (N, 3, H, W)"""
        if codes.dim() != 3 or codes.shape[1] != self.num_tokens:
            raise MorphError("SHAPE_MISMATCH", f"expected {self.num_tokens} codes per image, got {tuple(codes.shape)}")
        n, _, d = codes.shape
        grid = codes.transpose(1, 2).reshape(n, d, self.grid, self.grid)
        return self.decoder(grid)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, Quantized, torch.Tensor]:
        """Training pass: (reconstruction, quantization result, pre-quantization features)"""
        z = self.features(x)
        quantized = quantize(z, self.codebook)
        return self.decode_codes(quantized.embedding), quantized, z

    # Token-level interface

    @torch.no_grad()
    def encode_batch(self, images: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
        """Images -> (N, L_x) pixel-token ids"""
        x = images if isinstance(images, torch.Tensor) else images_to_tensor(images)
        return quantize(self.features(x), self.codebook).ids

    @torch.no_grad()
    def decode_batch(self, ids: torch.Tensor) -> np.ndarray:
        """(N, L_x) ids -> (N, H, W, 3) uint8 images"""
        if ids.dim() != 2 or ids.shape[1] != self.num_tokens:
            raise MorphError("SHAPE_MISMATCH", f"expected (N, {self.num_tokens}) ids, got {tuple(ids.shape)}")
        if int(ids.min()) < 0 or int(ids.max()) >= self.codebook.size:
            raise MorphError("ID_OUT_OF_RANGE", "pixel token id outside the codebook")
        return tensor_to_images(self.decode_codes(self.codebook.lookup(ids)))

    def encode_image(self, image: np.ndarray) -> torch.Tensor:
        """One H x W x 3 image -> (L_x,) ids"""
        return self.encode_batch(np.asarray(image)[None])[0]

    def decode_tokens(self, tokens: torch.Tensor) -> np.ndarray:
        """(L_x,) ids -> one H x W x 3 image"""
        return self.decode_batch(tokens.reshape(1, -1))[0]
