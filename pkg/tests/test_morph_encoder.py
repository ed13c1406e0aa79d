import math

import numpy as np
import pytest
import torch

from morphtok.core.blocks import MultiHeadAttention
from morphtok.features.morph_encoder.attention import (
    AttentionParams,
    ConfounderDict,
    ConfounderDictionary,
    check_prior,
    deconfound_queries,
    intervention_term,
    nwgm_forward,
    slot_attention,
)
from morphtok.features.morph_encoder.encoder import EMP_CODE, MorphEncoder
from morphtok.features.morph_encoder.encoder_config import EncoderConfig
from morphtok.features.synth_data.render import render
from morphtok.features.synth_data.scene import Scene
from morphtok.utils.errors import MorphError
from morphtok.utils.grad_check import analytic_grads, check_gradients, numerical_grad, rel_error


def _params(d: int, dtype=torch.float64, grad: bool = False) -> AttentionParams:
    generator = torch.Generator().manual_seed(1)
    w = [(torch.randn(d, d, generator=generator, dtype=dtype) / math.sqrt(d)).requires_grad_(grad) for _ in range(3)]
    return AttentionParams(w[0], w[1], w[2], math.sqrt(d))


def _dictionary(n: int, dict_dim: int, d: int, dtype=torch.float64) -> ConfounderDict:
    generator = torch.Generator().manual_seed(2)
    prior = torch.rand(n, generator=generator, dtype=torch.float64)
    return ConfounderDict(
        entries=torch.randn(n, dict_dim, generator=generator, dtype=dtype),
        prior=prior / prior.sum(),
        w_q=torch.randn(d, d, generator=generator, dtype=dtype) / math.sqrt(d),
        w_k=torch.randn(dict_dim, d, generator=generator, dtype=dtype) / math.sqrt(dict_dim),
        w_v=torch.randn(dict_dim, d, generator=generator, dtype=dtype) / math.sqrt(dict_dim),
        scale=math.sqrt(d),
    )


def test_slot_attention_normalizes_over_queries():
    params = _params(8)
    Q = torch.randn(1000, 4, 8, dtype=torch.float64) * 3.0
    V = torch.randn(1000, 16, 8, dtype=torch.float64) * 3.0
    out = slot_attention(Q, V, params)
    assert out.attn.shape == (1000, 4, 16)
    assert (out.attn.sum(dim=-2) - 1.0).abs().max() < 1e-6
    assert out.slots.shape == (1000, 4, 8)


def test_slot_attention_rejects_non_finite_inputs():
    params = _params(4)
    Q = torch.zeros(2, 4, dtype=torch.float64)
    V = torch.full((3, 4), float("inf"), dtype=torch.float64)
    with pytest.raises(MorphError) as err:
        slot_attention(Q, V, params)
    assert err.value.code == "NON_FINITE_INPUT"


def test_invalid_scale_and_prior():
    with pytest.raises(MorphError) as err:
        AttentionParams(torch.eye(2), torch.eye(2), torch.eye(2), 0.0)
    assert err.value.code == "INVALID_SCALE"
    for prior in ([0.5, 0.6], [1.2, -0.2], [float("nan"), 1.0]):
        with pytest.raises(MorphError) as err:
            check_prior(torch.tensor(prior, dtype=torch.float64))
        assert err.value.code == "INVALID_PRIOR"
    check_prior(torch.full((8,), 1.0 / 8, dtype=torch.float64))


def test_intervention_term_matches_dense_recomputation():
    n_g, K_d, d = 4, 8, 8
    dictionary = _dictionary(K_d, d, d)
    G = torch.randn(n_g, d, dtype=torch.float64)
    got = intervention_term(G, dictionary).numpy()

    entries = dictionary.entries.numpy()
    prior = dictionary.prior.numpy()
    wq, wk, wv = (t.numpy() for t in (dictionary.w_q, dictionary.w_k, dictionary.w_v))
    expected = np.zeros((n_g, d))
    for i in range(n_g):
        query = G[i].numpy() @ wq
        scores = np.array([query @ (entries[k] @ wk) / dictionary.scale for k in range(K_d)])
        weights = np.exp(scores - scores.max())
        weights /= weights.sum()
        for k in range(K_d):
            expected[i] += weights[k] * prior[k] * (entries[k] @ wv)
    assert np.allclose(got, expected, atol=1e-6)


def test_deconfound_queries_add_the_intervention_term():
    dictionary = _dictionary(8, 8, 8)
    params = _params(8)
    G = torch.randn(4, 8, dtype=torch.float64)
    assert torch.allclose(deconfound_queries(G, dictionary, params),
                          G @ params.w_q + intervention_term(G, dictionary))


def test_zero_value_dictionary_reduces_to_plain_slot_attention():
    dictionary = _dictionary(8, 8, 8)
    dictionary.w_v = torch.zeros_like(dictionary.w_v)
    params = _params(8)
    G = torch.randn(4, 8, dtype=torch.float64)
    V = torch.randn(16, 8, dtype=torch.float64)
    plain = slot_attention(G @ params.w_q, V, params)
    deconfounded = nwgm_forward(G, dictionary, V, params)
    assert torch.allclose(plain.slots, deconfounded.slots)


def test_slot_attention_gradients_match_finite_differences():
    params = _params(8, grad=True)
    Q = torch.randn(4, 8, dtype=torch.float64, requires_grad=True)
    V = torch.randn(4, 8, dtype=torch.float64, requires_grad=True)
    weights = torch.randn(4, 8, dtype=torch.float64)

    def loss():
        return (slot_attention(Q, V, params).slots * weights).sum()

    assert check_gradients(loss, [Q, V, params.w_k, params.w_v]) < 1e-4


def test_deconfounded_gradients_match_finite_differences():
    params = _params(8, grad=True)
    dictionary = _dictionary(4, 8, 8)
    dictionary.entries.requires_grad_(True)
    G = torch.randn(2, 8, dtype=torch.float64, requires_grad=True)
    V = torch.randn(4, 8, dtype=torch.float64)
    weights = torch.randn(2, 8, dtype=torch.float64)

    def loss():
        return (nwgm_forward(G, dictionary, V, params).slots * weights).sum()

    assert check_gradients(loss, [G, dictionary.entries, params.w_q]) < 1e-4


def test_causal_self_attention_ignores_later_slots():
    torch.manual_seed(0)
    attn = MultiHeadAttention(8, 2, causal=True)
    x = torch.randn(1, 5, 8)
    perturbed = x.clone()
    perturbed[:, 3:] += torch.randn(1, 2, 8)
    assert torch.allclose(attn(x)[:, :3], attn(perturbed)[:, :3], atol=1e-6)
    assert not torch.allclose(attn(x)[:, 3:], attn(perturbed)[:, 3:])


def test_dictionary_init_from_codebook_usage():
    dictionary = ConfounderDictionary(size=3, dict_dim=2, model_dim=4)
    weight = torch.arange(10.0).reshape(5, 2)
    usage = torch.tensor([0, 5, 1, 4, 0])
    dictionary.init_from_codebook(weight, usage)
    assert torch.equal(dictionary.entries.data, weight[[1, 3, 2]])
    assert torch.allclose(dictionary.prior, torch.tensor([0.5, 0.4, 0.1], dtype=torch.float64))
    check_prior(dictionary.prior)

    dictionary.init_from_codebook(weight, None)
    assert torch.allclose(dictionary.prior, torch.full((3,), 1.0 / 3, dtype=torch.float64))

    with pytest.raises(MorphError) as err:
        dictionary.init_from_codebook(torch.zeros(2, 2), None)
    assert err.value.code == "SHAPE_MISMATCH"


def test_encoder_emits_n_g_valid_morph_tokens():
    config = EncoderConfig.get_preset("micro")
    torch.manual_seed(0)
    encoder = MorphEncoder(config)
    out = encoder(torch.rand(3, 3, 8, 8))
    assert out.morph.ids.shape == (3, config.n_g)
    assert out.morph.embeddings.shape == (3, config.n_g, config.d)
    assert int(out.morph.ids.min()) >= 0 and int(out.morph.ids.max()) < config.K_m
    assert torch.allclose(out.morph.embeddings, encoder.codebook.lookup(out.morph.ids), atol=1e-6)
    assert len(out.attn) == config.N_q
    assert float(encoder.quantizer_loss(out)) >= 0.0


def test_encoder_gradients_pass_straight_through_quantization():
    torch.manual_seed(0)
    encoder = MorphEncoder(EncoderConfig.get_preset("micro")).double()
    x = torch.rand(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
    weights = torch.randn(1, 2, 8, dtype=torch.float64)
    tensors = [x, encoder.group_tokens, encoder.embedder.proj.weight, encoder.blocks[0].slot_attn.w_k]

    def straight():
        return (encoder(x).morph.embeddings * weights).sum()

    # a linear read-out has the same gradient at z as at the selected code
    def relaxed():
        return (encoder(x).z * weights).sum()

    for tensor, grad in zip(tensors, analytic_grads(straight, tensors)):
        assert bool(grad.any())
        assert rel_error(grad, numerical_grad(relaxed, tensor)) < 1e-4

    def commitment():
        return encoder.quantizer_loss(encoder(x))

    assert check_gradients(commitment, tensors) < 1e-4


def test_continuous_encoder_has_no_ids_and_no_quantizer_loss():
    config = EncoderConfig.get_preset("micro")
    config.quantize = False
    encoder = MorphEncoder(config)
    out = encoder(torch.rand(2, 3, 8, 8))
    assert out.morph.ids is None and out.codes is None
    assert float(encoder.quantizer_loss(out)) == 0.0


def test_encode_requires_a_trained_encoder_and_is_deterministic():
    config = EncoderConfig.get_preset("small")
    torch.manual_seed(0)
    encoder = MorphEncoder(config)
    image = render(Scene.of(("square", "green", (1, 2))))
    with pytest.raises(MorphError) as err:
        encoder.encode(image)
    assert err.value.code == "UNTRAINED_CHECKPOINT"

    encoder.mark_trained()
    first = encoder.encode(image)
    second = encoder.encode(render(Scene.of(("square", "green", (1, 2)))))
    assert first.length == config.n_g
    assert torch.equal(first.ids, second.ids)


def test_lookup_zeroes_empty_slots():
    encoder = MorphEncoder(EncoderConfig.get_preset("micro"))
    ids = torch.tensor([2, EMP_CODE])
    rows = encoder.lookup(ids)
    assert torch.equal(rows[0], encoder.codebook.lookup(torch.tensor(2)))
    assert not bool(rows[1].any())
    sequence = encoder.sequence(ids)
    assert sequence.emp_mask.tolist() == [False, True]
    with pytest.raises(MorphError) as err:
        encoder.sequence(torch.tensor([encoder.config.K_m]))
    assert err.value.code == "ID_OUT_OF_RANGE"
