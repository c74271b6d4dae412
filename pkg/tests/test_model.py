import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from intercross.exceptions import InvalidConfig, NonFiniteInput, UnknownToken
from intercross.model import (
    PARAMETER_GROUPS, Batch, ModelConfig, MultiReferenceTacotron, StyleTokenLayer, check_finite,
    pad_frames, pad_tokens,
)


def tiny_config(N=2, **kw):
    base = dict(N=N, D=6, vocab_size=5, instance_counts=[3] * N, d_ref=8, K=3, n_heads=2, d_style=4,
                d_text=6, r=2, d_prenet=4, d_attention_rnn=6, d_attention=4, d_decoder_rnn=6, ref_channels=2)
    base.update(kw)
    return ModelConfig(**base)


def tiny_batch(cfg, B=2, T=(5, 3), L=(3, 2), seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    frames = [torch.randn(t, cfg.D, generator=g, dtype=dtype).numpy() for t in T]
    target, tl = pad_frames(frames, dtype)
    texts = [torch.randint(cfg.vocab_size, (n,), generator=g).tolist() for n in L]
    text, lens = pad_tokens(texts)
    refs = [pad_frames(frames[::-1] if n % 2 else frames, dtype) for n in range(cfg.N)]
    labels = torch.randint(3, (B, cfg.N), generator=g)
    return Batch(text, lens, refs, target, tl, labels)


@pytest.mark.parametrize("kw", [dict(d_style=6, n_heads=4), dict(r=0), dict(instance_counts=[2]), dict(N=0)])
def test_config_invariants(kw):
    with pytest.raises(InvalidConfig):
        tiny_config(**kw)


def test_config_round_trip():
    cfg = tiny_config()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_token_rows_unit_norm():
    torch.manual_seed(0)
    layer = StyleTokenLayer(8, 10, 64, 4)
    np.testing.assert_allclose(layer.tokens.detach().norm(dim=1).numpy(), 1.0, atol=1e-6)


def test_parameter_groups_partition():
    model = MultiReferenceTacotron(tiny_config())
    groups = model.parameter_groups()
    assert tuple(groups) == PARAMETER_GROUPS
    names = [n for g in groups.values() for n, _ in g]
    assert sorted(names) == sorted(n for n, _ in model.named_parameters())


def test_single_token_attention():
    layer = StyleTokenLayer(5, 1, 4, 2)
    ref = torch.randn(3, 5)
    style, weights = layer(ref)
    assert torch.all(weights == 1)
    expected = layer.token_values().detach().expand(3, -1)
    torch.testing.assert_close(style, expected)


def test_uniform_attention_gives_mean_token():
    layer = StyleTokenLayer(5, 4, 6, 3)
    with torch.no_grad():
        layer.query.weight.zero_()
    style, weights = layer(torch.randn(2, 5))
    torch.testing.assert_close(weights, torch.full_like(weights, 0.25))
    mean = layer.token_values().detach().mean(0)
    torch.testing.assert_close(style, mean.expand(2, -1))


def test_hand_computed_attention():
    layer = StyleTokenLayer(2, 2, 2, 1)
    with torch.no_grad():
        layer.tokens.copy_(torch.tensor([[1.0, 0.0], [0.0, 1.0]]))
        layer.query.weight.copy_(torch.eye(2))
        layer.key.weight.copy_(torch.eye(2))
        layer.value.weight.copy_(torch.tensor([[2.0, 0.0], [0.0, 3.0]]))
    style, weights = layer(torch.tensor([[1.0, 0.0]]))
    # scores (1, 0) / sqrt(2)
    w0 = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + 1)
    torch.testing.assert_close(weights[0, 0], torch.tensor([w0, 1 - w0]))
    torch.testing.assert_close(style[0], torch.tensor([2 * w0, 3 * (1 - w0)]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(1, 6), heads=st.sampled_from([1, 2, 4]))
def test_attention_weights_are_distributions(seed, K, heads):
    torch.manual_seed(seed)
    layer = StyleTokenLayer(7, K, 4 * heads, heads)
    _, w = layer(torch.randn(5, 7) * 10)
    assert torch.all(w >= 0)
    torch.testing.assert_close(w.sum(-1), torch.ones(5, heads), atol=1e-6, rtol=0)


def test_zero_frames_pin_the_gru_response():
    torch.manual_seed(1)
    model = MultiReferenceTacotron(tiny_config(N=1)).eval()
    enc = model.reference_encoders[0]
    with torch.no_grad():
        for conv in enc.convs:
            conv.bias.zero_()
        frames, lengths = pad_frames([np.zeros((8, 6), np.float32)])
        out = enc(frames, lengths)
        # 8 frames -> 4 -> 2 -> 1 after three stride-2 convs
        flat = torch.zeros(1, 1, enc.gru.input_size)
        _, h = enc.gru(flat)
    torch.testing.assert_close(out, h[0])


def test_reference_encoder_sees_length():
    torch.manual_seed(2)
    model = MultiReferenceTacotron(tiny_config(N=1)).eval()
    x = np.random.default_rng(0).normal(size=(7, 6)).astype(np.float32)
    longer = np.concatenate([x, x[-1:]])
    with torch.no_grad():
        a = model.reference_embedding(0, *pad_frames([x]))
        b = model.reference_embedding(0, *pad_frames([longer]))
        a2 = model.reference_embedding(0, *pad_frames([x]))
    assert not torch.equal(a, b)
    assert torch.equal(a, a2)


def test_padding_does_not_change_rows():
    torch.manual_seed(3)
    model = MultiReferenceTacotron(tiny_config(N=1)).eval()
    rng = np.random.default_rng(1)
    short = rng.normal(size=(5, 6)).astype(np.float32)
    long = rng.normal(size=(23, 6)).astype(np.float32)
    with torch.no_grad():
        alone = model.reference_embedding(0, *pad_frames([short]))
        batched = model.reference_embedding(0, *pad_frames([short, long]))
    torch.testing.assert_close(alone[0], batched[0], atol=1e-6, rtol=1e-5)


def test_style_depends_only_on_ref_embedding():
    torch.manual_seed(4)
    model = MultiReferenceTacotron(tiny_config(N=1)).eval()
    h = torch.randn(1, 8)
    a, _ = model.style_embedding(0, h)
    b, _ = model.style_embedding(0, h.clone())
    assert torch.equal(a, b)


def test_text_encoder_order_sensitive():
    torch.manual_seed(5)
    model = MultiReferenceTacotron(tiny_config()).eval()
    a = model.text_encoder(*pad_tokens([[0, 1, 2]]))
    b = model.text_encoder(*pad_tokens([[2, 1, 0]]))
    one = model.text_encoder(*pad_tokens([[4]]))
    assert not torch.allclose(a, b)
    assert one.shape == (1, 1, 6)


def test_teacher_forced_length():
    cfg = tiny_config(r=5)
    torch.manual_seed(6)
    model = MultiReferenceTacotron(cfg).eval()
    out = model(tiny_batch(cfg, T=(12, 7)))
    assert out["pred"].shape == (2, 15, cfg.D)
    assert out["stop_logits"].shape == (2, 15)
    assert [h.shape for h in out["ref_embs"]] == [(2, 8)] * 2
    assert [s.shape for s in out["style_embs"]] == [(2, 4)] * 2
    assert [c.shape for c in out["class_logits"]] == [(2, 3)] * 2


def test_eval_forward_is_deterministic():
    cfg = tiny_config()
    torch.manual_seed(7)
    model = MultiReferenceTacotron(cfg).eval()
    batch = tiny_batch(cfg)
    with torch.no_grad():
        a = model(batch)["pred"]
        b = model(batch)["pred"]
    assert torch.equal(a, b)


def test_free_running_respects_max_steps():
    cfg = tiny_config()
    torch.manual_seed(8)
    model = MultiReferenceTacotron(cfg).eval()
    with torch.no_grad():
        model.decoder.stop_proj.weight.zero_()
        model.decoder.stop_proj.bias.fill_(-50.0)
    text, lens = pad_tokens([[1, 2]])
    styles = [torch.zeros(1, 4)] * 2
    frames, stops, lengths, exceeded, _ = model.synthesize(text, lens, styles, max_steps=3)
    assert frames.shape[1] == 6 and bool(exceeded[0]) and int(lengths[0]) == 6
    with torch.no_grad():
        model.decoder.stop_proj.bias.fill_(50.0)
    frames, _, lengths, exceeded, _ = model.synthesize(text, lens, styles, max_steps=3)
    assert int(lengths[0]) == 1 and not bool(exceeded[0])


def test_style_embeddings_condition_decoder():
    cfg = tiny_config()
    torch.manual_seed(9)
    model = MultiReferenceTacotron(cfg).eval()
    text, lens = pad_tokens([[1, 2, 3]])
    s1, s2 = torch.randn(1, 4), torch.randn(1, 4)
    a = model.synthesize(text, lens, [s1, s2], 4)[0]
    b = model.synthesize(text, lens, [s2, s1], 4)[0]
    assert not torch.equal(a, b)


def test_input_checks():
    with pytest.raises(UnknownToken):
        pad_tokens([[1, 9]], vocab_size=5)
    with pytest.raises(UnknownToken):
        pad_tokens([[]])
    with pytest.raises(NonFiniteInput):
        check_finite(torch.tensor([[0.0, float("nan")]]))
