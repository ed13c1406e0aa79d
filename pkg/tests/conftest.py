"""
Shared fixtures: micro configs, a tiny seeded dataset and untrained small pipelines
"""

import numpy as np
import pytest
import torch

from morphtok.core.pipeline import MorphPipeline, PipelineConfig
from morphtok.features.pixel_codec.codec import PixelCodec
from morphtok.features.pixel_codec.codec_config import CodecConfig
from morphtok.features.synth_data.dataset import gen_dataset
from morphtok.features.training.train_config import TrainConfig
from morphtok.utils.io_utils import seed_everything


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="Run the acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="acceptance run, pass --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def _seeded():
    seed_everything(0)


@pytest.fixture(scope="session")
def train_set():
    return gen_dataset(12, seed=0, split="train", with_edits=True)


@pytest.fixture(scope="session")
def test_samples():
    return gen_dataset(4, seed=0, split="test", with_edits=True).samples


@pytest.fixture
def codec():
    torch.manual_seed(0)
    return PixelCodec(CodecConfig.get_preset("micro")).eval()


@pytest.fixture
def make_pipeline(codec):
    """Factory for untrained small pipelines of any variant"""

    def _make(variant: str = "morph", **mllm) -> MorphPipeline:
        config = PipelineConfig.get_preset("small", variant)
        for key, value in mllm.items():
            setattr(config.mllm, key, value)
        torch.manual_seed(0)
        return MorphPipeline(codec, config)

    return _make


@pytest.fixture
def micro_stage():
    """TrainConfig for a few steps of any stage"""

    def _stage(stage: int, **overrides) -> TrainConfig:
        values = TrainConfig.get_preset("micro").to_dict()
        values.update({"stage": stage, "steps": 2})
        values.update(overrides)
        return TrainConfig.from_dict(values)

    return _stage


@pytest.fixture
def rng():
    return np.random.default_rng(0)
