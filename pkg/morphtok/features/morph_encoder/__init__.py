"""
Morph Encoder Package
Deconfounded slot-attention Q-former producing discrete pre-MLLM morph tokens
"""

from .attention import (
    AttentionParams,
    ConfounderDict,
    ConfounderDictionary,
    SlotAttention,
    SlotAttentionOutput,
    check_prior,
    deconfound_queries,
    intervention_term,
    nwgm_forward,
    slot_attention,
)
from .encoder import EMP_CODE, EncoderOutput, MorphEncoder, MorphSequence, PatchEmbedder, QFormerBlock
from .encoder_config import EncoderConfig

__all__ = [
    "AttentionParams",
    "ConfounderDict",
    "ConfounderDictionary",
    "SlotAttention",
    "SlotAttentionOutput",
    "check_prior",
    "deconfound_queries",
    "intervention_term",
    "nwgm_forward",
    "slot_attention",
    "EMP_CODE",
    "EncoderOutput",
    "MorphEncoder",
    "MorphSequence",
    "PatchEmbedder",
    "QFormerBlock",
    "EncoderConfig",
]
