import math

import pytest
import torch

from morphtok.features.morph_encoder.encoder import EMP_CODE, MorphSequence
from morphtok.features.visual_decoder.decoder import VisualDecoder
from morphtok.features.visual_decoder.decoder_config import DecoderConfig
from morphtok.utils.errors import MorphError
from morphtok.utils.grad_check import check_gradients

N_G, CODE_DIM, PIXELS, L_X = 3, 8, 12, 6


@pytest.fixture
def decoder():
    torch.manual_seed(0)
    return VisualDecoder(DecoderConfig.get_preset("micro"), CODE_DIM, N_G, PIXELS, L_X).eval()


def _morph(batch: int = 2, seed: int = 0) -> MorphSequence:
    generator = torch.Generator().manual_seed(seed)
    ids = torch.randint(0, 5, (batch, N_G), generator=generator)
    return MorphSequence(ids, torch.randn(batch, N_G, CODE_DIM, generator=generator))


def _targets(batch: int = 2, seed: int = 1) -> torch.Tensor:
    return torch.randint(0, PIXELS, (batch, L_X), generator=torch.Generator().manual_seed(seed))


def test_zero_head_gives_log_k_loss(decoder):
    with torch.no_grad():
        decoder.head.weight.zero_()
        decoder.head.bias.zero_()
    loss = decoder.decode_loss(_morph(), _targets())
    assert math.isclose(float(loss), math.log(PIXELS), rel_tol=1e-6)


def test_logits_cover_exactly_l_x_positions(decoder):
    logits = decoder.logits(_morph(), _targets())
    assert logits.shape == (2, L_X, PIXELS)


def test_targets_only_see_earlier_targets(decoder):
    morph, targets = _morph(), _targets()
    changed = targets.clone()
    changed[:, 3:] = (changed[:, 3:] + 1) % PIXELS
    a, b = decoder.logits(morph, targets), decoder.logits(morph, changed)
    # position i predicts target i from targets before it
    assert torch.allclose(a[:, :4], b[:, :4], atol=1e-6)
    assert not torch.allclose(a[:, 4:], b[:, 4:])


def test_every_position_sees_the_condition(decoder):
    targets = _targets()
    a = decoder.logits(_morph(seed=0), targets)
    b = decoder.logits(_morph(seed=5), targets)
    assert not torch.allclose(a[:, 0], b[:, 0])
    assert not torch.allclose(a[:, -1], b[:, -1])


def test_empty_slots_use_the_learned_vector(decoder):
    morph = _morph(batch=1)
    morph.ids[0, 1] = EMP_CODE
    prefix = decoder.condition(morph)
    assert torch.allclose(prefix[0, 1], decoder.emp)
    assert torch.allclose(prefix[0, 0], decoder.adapter(morph.embeddings[0, 0]))


def test_condition_and_target_shapes_are_checked(decoder):
    short = MorphSequence(None, torch.randn(1, N_G - 1, CODE_DIM))
    with pytest.raises(MorphError) as err:
        decoder.condition(short)
    assert err.value.code == "SHAPE_MISMATCH"
    with pytest.raises(MorphError) as err:
        decoder.decode_loss(_morph(), torch.zeros(2, L_X - 1, dtype=torch.long))
    assert err.value.code == "SHAPE_MISMATCH"
    with pytest.raises(MorphError) as err:
        decoder.decode_loss(_morph(), torch.full((2, L_X), PIXELS))
    assert err.value.code == "ID_OUT_OF_RANGE"


def test_generate_pixels_is_deterministic_and_seeded(decoder):
    morph = _morph()
    greedy = decoder.generate_pixels(morph)
    assert greedy.shape == (2, L_X)
    assert int(greedy.min()) >= 0 and int(greedy.max()) < PIXELS
    assert torch.equal(greedy, decoder.generate_pixels(morph))
    assert torch.equal(decoder.generate_pixels(morph, mode="sample", seed=4),
                       decoder.generate_pixels(morph, mode="sample", seed=4))
    with pytest.raises(MorphError) as err:
        decoder.generate_pixels(morph, mode="beam")
    assert err.value.code == "UNKNOWN_MODE"


def test_greedy_generation_agrees_with_teacher_forcing(decoder):
    morph = _morph(batch=1)
    generated = decoder.generate_pixels(morph)
    logits = decoder.logits(morph, generated)
    assert torch.equal(logits.argmax(dim=-1), generated)


def test_decoder_gradients_match_finite_differences():
    torch.manual_seed(0)
    decoder = VisualDecoder(DecoderConfig.get_preset("micro"), CODE_DIM, 2, 5, 4).double()
    embeds = torch.randn(1, 2, CODE_DIM, dtype=torch.float64, requires_grad=True)
    morph = MorphSequence(torch.tensor([[0, 1]]), embeds)
    targets = torch.tensor([[1, 4, 0, 2]])

    def loss():
        return decoder.decode_loss(morph, targets)

    assert check_gradients(loss, [embeds, decoder.adapter.weight, decoder.box]) < 1e-4
