"""
Pipeline Module
Bundles codec, encoder, MLLM core and visual decoder for one variant,
and saves / loads them as one checkpoint container
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch
import torch.nn as nn

from ..features.mllm.lora import apply_lora
from ..features.mllm.mllm_config import MLLMConfig
from ..features.mllm.model import MorphLLM
from ..features.mllm.vocab import Modality, Vocabulary
from ..features.morph_encoder.encoder import EncoderOutput, MorphEncoder, MorphSequence
from ..features.morph_encoder.encoder_config import EncoderConfig
from ..features.pixel_codec.codec import PixelCodec, images_to_tensor
from ..features.pixel_codec.codec_config import CodecConfig
from ..features.pixel_codec.quantizer import code_usage
from ..features.synth_data.grammar import END_OF_TEXT, WORD_TO_ID, WORDS
from ..features.visual_decoder.decoder import VisualDecoder
from ..features.visual_decoder.decoder_config import DecoderConfig
from ..utils.checkpoint_store import CheckpointStore
from ..utils.config_store import stable_hash
from ..utils.errors import MorphError
from ..utils.io_utils import version_string

VARIANTS = ("morph", "detail-detail", "abstr-abstr-vq", "wo-decoder", "wo-deconfound", "continuous")
ABLATIONS = VARIANTS[1:]
CHECKPOINT_FORMAT = "morphtok-checkpoint"
_ENCODE_CHUNK = 256


@dataclass
class PipelineConfig:
    """Component configs plus the variant they are wired for"""

    variant: str = "morph"
    codec: CodecConfig = field(default_factory=CodecConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mllm: MLLMConfig = field(default_factory=MLLMConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise MorphError("UNKNOWN_ABLATION", f"unknown variant '{self.variant}' (expected one of {VARIANTS})")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant,
            "codec": self.codec.to_dict(),
            "encoder": self.encoder.to_dict(),
            "mllm": self.mllm.to_dict(),
            "decoder": self.decoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        return cls(
            variant=data.get("variant", "morph"),
            codec=CodecConfig.from_dict(data.get("codec", {})),
            encoder=EncoderConfig.from_dict(data.get("encoder", {})),
            mllm=MLLMConfig.from_dict(data.get("mllm", {})),
            decoder=DecoderConfig.from_dict(data.get("decoder", {})),
        )

    @classmethod
    def get_preset(cls, preset_name: str, variant: str = "morph") -> "PipelineConfig":
        """
        Presets:
        - 'toy': desk-scale defaults [DEFAULT]
        - 'small': 32x32 images with narrow networks, used by the test suite
        """
        if preset_name == "small":
            return cls(variant=variant,
                       codec=CodecConfig.get_preset("micro"),
                       encoder=EncoderConfig.get_preset("small"),
                       mllm=MLLMConfig.get_preset("small"),
                       decoder=DecoderConfig.get_preset("small"))
        return cls(variant=variant)

    def with_variant(self, variant: str) -> "PipelineConfig":
        return replace(self, variant=variant)


@dataclass
class VisualBatch:
    """Input-side visual tokens for a batch of images"""

    tokens: List[Union[MorphSequence, torch.Tensor]]
    embeds: Optional[torch.Tensor] = None          # (N, n, code_dim) morph input embeddings
    encoder_output: Optional[EncoderOutput] = None


class MorphPipeline:
    """All trainable parts of one variant around a frozen pixel codec"""

    def __init__(self, codec: PixelCodec, config: PipelineConfig):
        self.config = config
        self.variant = config.variant
        self.codec = codec.eval()
        for param in self.codec.parameters():
            param.requires_grad_(False)
        self.stage = 0
        self.step = 0
        self.metadata: Dict[str, Any] = {}
        # One entry per completed stage: {stage, train, dataset}
        self.history: List[Dict[str, Any]] = []

        encoder_config = replace(
            config.encoder,
            image_size=codec.config.image_size,
            dict_dim=codec.config.embed_dim,
            deconfound=config.encoder.deconfound and self.variant != "wo-deconfound",
            quantize=self.variant != "continuous",
        )
        self.encoder: Optional[MorphEncoder] = None if self.variant == "detail-detail" else MorphEncoder(encoder_config)

        morph_size = 0 if self.encoder is None else encoder_config.K_m
        pixel_size = codec.config.codebook_size if self.variant in ("detail-detail", "wo-decoder") else 0
        self.vocab = Vocabulary(len(WORDS), morph_size, pixel_size, end_of_text=WORD_TO_ID[END_OF_TEXT])
        self.code_dim = encoder_config.d if self.encoder is not None else codec.config.embed_dim
        self.llm = MorphLLM(config.mllm, self.vocab, self.code_dim)
        if config.mllm.lora.on:
            self.enable_lora()

        self.decoder: Optional[VisualDecoder] = None
        if self.uses_decoder:
            self.decoder = VisualDecoder(config.decoder, self.code_dim, self.n_g,
                                         codec.config.codebook_size, codec.num_tokens)

    # Variant wiring

    @property
    def uses_decoder(self) -> bool:
        return self.variant not in ("detail-detail", "wo-decoder")

    @property
    def input_modality(self) -> Modality:
        return Modality.PIXEL if self.variant == "detail-detail" else Modality.MORPH

    @property
    def output_modality(self) -> Modality:
        return Modality.PIXEL if self.variant in ("detail-detail", "wo-decoder") else Modality.MORPH

    @property
    def tie_visual(self) -> bool:
        return self.variant == "abstr-abstr-vq"

    @property
    def continuous(self) -> bool:
        return self.variant == "continuous"

    @property
    def n_g(self) -> int:
        return self.encoder.n_g if self.encoder is not None else self.codec.num_tokens

    @property
    def image_tokens(self) -> int:
        """Visual tokens per input image on the MLLM side"""
        return self.n_g if self.input_modality == Modality.MORPH else self.codec.num_tokens

    def modules(self) -> Dict[str, nn.Module]:
        parts: Dict[str, nn.Module] = {"codec": self.codec}
        if self.encoder is not None:
            parts["encoder"] = self.encoder
        parts["llm"] = self.llm
        if self.decoder is not None:
            parts["decoder"] = self.decoder
        return parts

    def train(self):
        for name, module in self.modules().items():
            module.train(name != "codec")
        return self

    def eval(self):
        for module in self.modules().values():
            module.eval()
        return self

    def enable_lora(self):
        """Freeze the MLLM core and add adapters; the visual head stays trainable if configured"""
        lora = self.config.mllm.lora
        apply_lora(self.llm, lora)
        if lora.train_visual_head:
            for module in (self.llm.morph_head, self.llm.morph_adapter, self.llm.hidden_to_code):
                if module is not None:
                    for param in module.parameters():
                        param.requires_grad_(True)

    def trainable_parameters(self, stage: int) -> List[nn.Parameter]:
        """Stage 1 trains encoder + MLLM; stages 2 and 3 add the decoder"""
        parts: List[nn.Module] = [self.llm]
        if self.encoder is not None:
            parts.insert(0, self.encoder)
        if stage >= 2 and self.decoder is not None:
            parts.append(self.decoder)
        return [p for part in parts for p in part.parameters() if p.requires_grad]

    # Tokenization

    def visual_inputs(self, images: np.ndarray, grad: bool = True) -> VisualBatch:
        """Input-side visual tokens; encoder outputs keep their graph when grad is set"""
        if self.encoder is None:
            ids = self.pixel_ids(images)
            return VisualBatch(tokens=list(ids))
        x = images_to_tensor(images)
        with torch.set_grad_enabled(grad):
            output = self.encoder(x)
        morph = output.morph
        tokens = [morph[i] for i in range(x.shape[0])]
        return VisualBatch(tokens=tokens, embeds=morph.embeddings, encoder_output=output)

    @torch.no_grad()
    def pixel_ids(self, images: np.ndarray) -> torch.Tensor:
        """(N, L_x) codec ids, computed in chunks"""
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        chunks = [self.codec.encode_batch(images[i:i + _ENCODE_CHUNK]) for i in range(0, len(images), _ENCODE_CHUNK)]
        return torch.cat(chunks, dim=0)

    def morph_lookup(self, codes: torch.Tensor) -> torch.Tensor:
        if self.encoder is None:
            raise MorphError("UNKNOWN_ABLATION", "detail-detail has no morph codebook")
        return self.encoder.lookup(codes)

    @torch.no_grad()
    def init_dictionary(self, images: np.ndarray):
        """Confounder dictionary from the codec codebook, prior from code usage on images"""
        if self.encoder is None or self.encoder.dictionary is None:
            return
        usage = code_usage(self.pixel_ids(images), self.codec.config.codebook_size)
        self.encoder.dictionary.init_from_codebook(self.codec.codebook.weight, usage, self.encoder.config.prior_mode)
        used = int((usage > 0).sum())
        print(f"✅ Confounder dictionary initialized from {used}/{self.codec.config.codebook_size} used codes")

    # Checkpoints

    def config_hash(self) -> str:
        return stable_hash(self.config.to_dict())

    def state_tensors(self) -> Dict[str, torch.Tensor]:
        tensors: Dict[str, torch.Tensor] = {}
        for name, module in self.modules().items():
            for key, value in module.state_dict().items():
                tensors[f"{name}.{key}"] = value
        return tensors

    def save(self, path: Union[str, Path], extra: Optional[Dict[str, Any]] = None, quiet: bool = False):
        numpy_state = np.random.get_state()
        metadata: Dict[str, Any] = {
            "format": CHECKPOINT_FORMAT,
            "version": version_string(),
            "variant": self.variant,
            "stage": self.stage,
            "step": self.step,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash(),
            "history": self.history,
            "lora": self.config.mllm.lora.to_dict(),
            "rng": {
                "torch": torch.get_rng_state().tolist(),
                "numpy": [numpy_state[0], numpy_state[1].tolist(), int(numpy_state[2]),
                          int(numpy_state[3]), float(numpy_state[4])],
            },
        }
        if extra:
            metadata.update(extra)
        CheckpointStore(path).save(self.state_tensors(), metadata, quiet=quiet)

    @classmethod
    def load(cls, path: Union[str, Path], restore_rng: bool = True) -> "MorphPipeline":
        store = CheckpointStore(path)
        tensors, metadata = store.load()
        if metadata.get("format") != CHECKPOINT_FORMAT:
            raise MorphError("MISSING_CHECKPOINT", f"{path} is not a pipeline checkpoint")
        config = PipelineConfig.from_dict(metadata["config"])
        pipeline = cls(PixelCodec(config.codec), config)
        for name, module in pipeline.modules().items():
            prefix = f"{name}."
            state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
            module.load_state_dict(state, strict=True)
        if pipeline.encoder is not None and pipeline.encoder.dictionary is not None:
            pipeline.encoder.dictionary.renormalize_prior()
        for param in pipeline.codec.parameters():
            param.requires_grad_(False)
        pipeline.stage = int(metadata.get("stage", 0))
        pipeline.step = int(metadata.get("step", 0))
        pipeline.metadata = metadata
        pipeline.history = list(metadata.get("history", []))
        if restore_rng and "rng" in metadata:
            torch.set_rng_state(torch.tensor(metadata["rng"]["torch"], dtype=torch.uint8))
            name, keys, pos, has_gauss, cached = metadata["rng"]["numpy"]
            np.random.set_state((name, np.array(keys, dtype=np.uint32), pos, has_gauss, cached))
        return pipeline.eval()


def save_codec(codec: PixelCodec, path: Union[str, Path], extra: Optional[Dict[str, Any]] = None):
    """Stand-alone codec checkpoint written by train-codec"""
    metadata: Dict[str, Any] = {"format": "morphtok-codec", "version": version_string(),
                                "codec": codec.config.to_dict()}
    if extra:
        metadata.update(extra)
    CheckpointStore(path).save(dict(codec.state_dict()), metadata)


def load_codec(path: Union[str, Path]) -> PixelCodec:
    tensors, metadata = CheckpointStore(path).load()
    if metadata.get("format") == CHECKPOINT_FORMAT:
        config = CodecConfig.from_dict(metadata["config"]["codec"])
        tensors = {k[len("codec."):]: v for k, v in tensors.items() if k.startswith("codec.")}
    elif metadata.get("format") == "morphtok-codec":
        config = CodecConfig.from_dict(metadata["codec"])
    else:
        raise MorphError("MISSING_CHECKPOINT", f"{path} holds no pixel codec")
    codec = PixelCodec(config)
    codec.load_state_dict(tensors, strict=True)
    return codec.eval()


def require_stage(pipeline: Optional[MorphPipeline], stage: int, from_scratch: bool = False):
    """Stage gating: stage N needs a stage N-1 checkpoint unless from_scratch"""
    if stage == 1 or from_scratch:
        return
    if pipeline is None or pipeline.stage < stage - 1:
        have = "none" if pipeline is None else f"stage {pipeline.stage}"
        raise MorphError("MISSING_CHECKPOINT",
                         f"stage {stage} needs a stage-{stage - 1} checkpoint (have {have}); pass --from-scratch to override")
