"""
Retrieval Probe Module
Frozen encoder features aligned to a bag-of-words caption tower with a learned
linear projection, scored by image->text and text->image Recall@K
"""

from __future__ import annotations

from typing import Dict, List, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ...core.pipeline import MorphPipeline
from ...utils.errors import MorphError
from ..synth_data.dataset import Sample
from ..synth_data.grammar import WORDS, encode_text
from .eval_config import EvalConfig


class RetrievalProbe(nn.Module):
    """Caption tower (mean word embedding) and image projection into one space"""

    def __init__(self, feature_dim: int, dim: int, vocab_size: int = len(WORDS)):
        super().__init__()
        self.text = nn.EmbeddingBag(vocab_size, dim, mode="mean")
        self.image = nn.Linear(feature_dim, dim)

    def embed_text(self, captions: Sequence[List[int]]) -> torch.Tensor:
        flat = torch.tensor([i for ids in captions for i in ids], dtype=torch.long)
        offsets = torch.tensor(np.cumsum([0] + [len(ids) for ids in captions[:-1]]), dtype=torch.long)
        return F.normalize(self.text(flat, offsets), dim=-1)

    def embed_images(self, features: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.image(features), dim=-1)


@torch.no_grad()
def image_features(pipeline: MorphPipeline, images: np.ndarray, batch: int = 256) -> torch.Tensor:
    """Mean-pooled pre-MLLM embeddings (codec embeddings for the encoder-free variant)"""
    chunks = []
    for start in range(0, len(images), batch):
        chunk = images[start:start + batch]
        if pipeline.encoder is not None:
            embeddings = pipeline.encoder.encode_batch(chunk, allow_untrained=True).embeddings
        else:
            embeddings = pipeline.codec.codebook.lookup(pipeline.pixel_ids(chunk))
        chunks.append(embeddings.mean(dim=1))
    return torch.cat(chunks, dim=0)


def info_nce(image: torch.Tensor, text: torch.Tensor, temperature: float) -> torch.Tensor:
    """Symmetric contrastive loss over matched rows"""
    logits = image @ text.t() / temperature
    labels = torch.arange(logits.shape[0])
    return 0.5 * (F.cross_entropy(logits, labels) + F.cross_entropy(logits.t(), labels))


def recall_at_k(similarity: torch.Tensor, ks: Sequence[int]) -> Dict[str, float]:
    """
    similarity[i, j] scores image i against caption j; the match of i is j = i.
    Ties count against the match.
    """
    if similarity.dim() != 2 or similarity.shape[0] != similarity.shape[1]:
        raise MorphError("SHAPE_MISMATCH", f"expected a square similarity matrix, got {tuple(similarity.shape)}")
    diagonal = similarity.diagonal()
    # every other entry scoring >= the match ranks ahead of it
    i2t_rank = (similarity >= diagonal[:, None]).sum(dim=1) - 1
    t2i_rank = (similarity >= diagonal[None, :]).sum(dim=0) - 1
    scores: Dict[str, float] = {}
    for k in ks:
        scores[f"i2t@{k}"] = float((i2t_rank < k).float().mean())
        scores[f"t2i@{k}"] = float((t2i_rank < k).float().mean())
    scores["mean"] = float(np.mean(list(scores.values())))
    return scores


def train_probe(features: torch.Tensor, captions: Sequence[List[int]], config: EvalConfig) -> RetrievalProbe:
    torch.manual_seed(config.seed)
    probe = RetrievalProbe(features.shape[-1], config.retrieval_dim)
    optimizer = torch.optim.AdamW(probe.parameters(), lr=config.retrieval_lr)
    generator = torch.Generator().manual_seed(config.seed)
    size = min(config.batch, features.shape[0])
    for _ in range(config.retrieval_steps):
        idx = torch.randperm(features.shape[0], generator=generator)[:size]
        loss = info_nce(probe.embed_images(features[idx]), probe.embed_text([captions[int(i)] for i in idx]),
                        config.retrieval_temperature)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return probe.eval()


def retrieval_probe(pipeline: MorphPipeline, train: Sequence[Sample], test: Sequence[Sample],
                    config: EvalConfig) -> Dict[str, float]:
    """R@K in both directions on a held-out gallery; the encoder stays frozen"""
    if not train or not test:
        raise MorphError("SHAPE_MISMATCH", "retrieval probe needs train and test pairs")
    train = list(train)[: config.retrieval_train]
    gallery = list(test)[: config.retrieval_gallery]
    features = image_features(pipeline, np.stack([s.image for s in train]))
    probe = train_probe(features, [encode_text(s.caption) for s in train], config)
    with torch.no_grad():
        image = probe.embed_images(image_features(pipeline, np.stack([s.image for s in gallery])))
        text = probe.embed_text([encode_text(s.caption) for s in gallery])
        scores = recall_at_k(image @ text.t(), config.recall_ks)
    print(f"✅ Retrieval on {len(gallery)} pairs: " + ", ".join(f"{k}={v:.3f}" for k, v in scores.items()))
    return scores
