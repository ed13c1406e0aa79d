"""
Codec Trainer Module
VQ reconstruction + codebook/commitment objective with per-step loss log
"""

from __future__ import annotations

from typing import Any, Dict, List, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from ...utils.io_utils import seed_everything
from .codec import PixelCodec, images_to_tensor
from .codec_config import CodecConfig
from .quantizer import code_usage, vq_losses


def _restart_dead_codes(codec: PixelCodec, usage: torch.Tensor, features: torch.Tensor, generator: torch.Generator):
    """Re-seed unused codebook rows from random current encoder features"""
    dead = (usage == 0).nonzero(as_tuple=True)[0]
    if dead.numel() == 0:
        return 0
    pool = features.reshape(-1, features.shape[-1])
    picks = torch.randint(0, pool.shape[0], (dead.numel(),), generator=generator)
    with torch.no_grad():
        codec.codebook.weight[dead] = pool[picks]
    return int(dead.numel())


def train_codec(images: np.ndarray, config: CodecConfig, progress: bool = True) -> Tuple[PixelCodec, List[Dict[str, Any]]]:
    """
    Train a pixel codec on (N, H, W, 3) uint8 images

    Returns:
        (codec in eval mode, per-step training log)
    """
    seed_everything(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    data = images_to_tensor(images)
    codec = PixelCodec(config)
    optimizer = torch.optim.AdamW(codec.parameters(), lr=config.lr, weight_decay=0.0)

    steps_per_epoch = max(1, data.shape[0] // config.batch)
    usage = torch.zeros(config.codebook_size, dtype=torch.long)
    log: List[Dict[str, Any]] = []

    print(f"🚀 Training pixel codec: {config.get_description()}")
    codec.train()
    for step in tqdm(range(config.steps), desc="    codec", unit="step", ncols=70, disable=not progress):
        index = torch.randint(0, data.shape[0], (config.batch,), generator=generator)
        x = data[index]
        recon, quantized, z = codec(x)
        recon_loss = F.mse_loss(recon, x)
        codebook_loss, commitment_loss = vq_losses(z, quantized.codes)
        loss = recon_loss + codebook_loss + config.beta * commitment_loss

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        usage += code_usage(quantized.ids, config.codebook_size)
        record = {
            "step": step,
            "loss": float(loss.item()),
            "recon": float(recon_loss.item()),
            "codebook": float(codebook_loss.item()),
            "commitment": float(commitment_loss.item()),
        }

        if (step + 1) % steps_per_epoch == 0:
            used = float((usage > 0).float().mean().item())
            record["codebook_used"] = used
            if used < config.usage_warn:
                print(f"⚠️ Codebook collapse warning: only {used:.0%} of entries used this epoch")
                record["collapse_warning"] = True
            if config.restart_dead_codes and step + 1 < config.steps:
                record["restarted"] = _restart_dead_codes(codec, usage, z.detach(), generator)
            usage.zero_()
        log.append(record)

    codec.eval()
    print(f"✅ Codec trained, final loss {log[-1]['loss']:.4f}" if log else "✅ Codec built (0 steps)")
    return codec, log


@torch.no_grad()
def roundtrip_l1(codec: PixelCodec, images: np.ndarray) -> float:
    """Mean absolute pixel error in [0, 1] of decode(encode(images))"""
    ids = codec.encode_batch(images)
    recon = codec.decode_batch(ids)
    return float(np.abs(recon.astype(np.float32) - np.asarray(images, dtype=np.float32)).mean() / 255.0)


