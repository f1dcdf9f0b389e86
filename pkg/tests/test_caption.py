import numpy as np
import pytest

from adapt import tensor as T
from adapt.caption import (MASK_VARIANTS, CaptionHead, build_attention_mask, decode_order, generate,
                           generate_ids, mlm_loss)
from adapt.nn import Module
from adapt.tensor import Tensor
from adapt.tokenizer import MASK_ID, PAD_ID, SEP_ID, build_vocab, encode, pad_and_segment
from adapt.train import AdamW
from adapt.video import ConfigError

NV, L = 4, 15


def mask(variant, valid=None):
    return build_attention_mask(variant, NV, L, valid)


# -- static mask rules -------------------------------------------------------------
def test_default_mask_blocks():
    m = mask("default")
    causal = np.tril(np.ones((L, L), dtype=bool))
    assert m.block("video", "video").all()
    assert not m.block("video", "narration").any() and not m.block("video", "reasoning").any()
    assert m.block("narration", "video").all() and m.block("reasoning", "video").all()
    assert not m.block("narration", "reasoning").any()
    assert m.block("reasoning", "narration").all()
    assert (m.block("narration", "narration") == causal).all()
    assert (m.block("reasoning", "reasoning") == causal).all()


def test_no_cross_and_swapped():
    m = mask("no_cross")
    assert not m.block("narration", "reasoning").any() and not m.block("reasoning", "narration").any()
    assert (m.block("narration", "narration") == np.tril(np.ones((L, L), dtype=bool))).all()
    s = mask("swapped_cross")
    d = mask("default")
    assert s.block("narration", "reasoning").all() and not s.block("reasoning", "narration").any()
    assert (s.block("narration", "reasoning") == d.block("reasoning", "narration").T).all()


def test_pad_columns_denied_everywhere():
    seq = pad_and_segment([5, 6], [7])
    m = mask("default", seq.valid)
    cols = NV + np.flatnonzero(~seq.valid)
    assert not m.allowed[:, cols].any()
    real_nar = NV + np.flatnonzero(seq.valid[:L])
    assert m.allowed[NV + L:, real_nar][seq.valid[L:]].all()


def test_unknown_variant_rejected():
    with pytest.raises(ConfigError):
        build_attention_mask("bogus", NV)


def test_decode_order():
    assert decode_order("default") == (0, 1)
    assert decode_order("swapped_cross") == (1, 0)
    assert decode_order("narration_only") == (0,)


# -- behavioural tests on a real head -------------------------------------------------
@pytest.fixture(scope="module")
def head():
    r = np.random.default_rng(1)
    return CaptionHead(20, 16, r, depth=2, heads=2, n_video=NV)


@pytest.fixture(scope="module")
def inputs():
    r = np.random.default_rng(2)
    video = Tensor(r.normal(size=(1, NV, 16)))
    ids = np.concatenate([[1], r.integers(5, 20, 13), [2], [1], r.integers(5, 20, 13), [2]])[None]
    seg = np.repeat([0, 1], L)[None]
    return video, ids, seg, np.ones_like(ids, dtype=bool)


def logits(head, inputs, ids=None, seg=None, variant="default"):
    video, ids0, seg0, valid = inputs
    with T.no_grad():
        return head(video, ids0 if ids is None else ids, seg0 if seg is None else seg, valid, variant).data[0]


def perturbed(ids, pos):
    out = ids.copy()
    out[0, pos] = 5 if out[0, pos] != 5 else 6
    return out


def test_narration_is_causal(head, inputs):
    base = logits(head, inputs)
    k = 6
    changed = logits(head, inputs, perturbed(inputs[1], k))
    np.testing.assert_allclose(changed[:k], base[:k], atol=1e-12)
    assert not np.allclose(changed[k:L], base[k:L])


def test_narration_is_isolated_from_reasoning(head, inputs):
    base = logits(head, inputs)
    changed = logits(head, inputs, perturbed(inputs[1], L + 4))
    np.testing.assert_allclose(changed[:L], base[:L], atol=1e-12)
    assert not np.allclose(changed[L:], base[L:])


def test_reasoning_sees_narration_by_default(head, inputs):
    base = logits(head, inputs)
    changed = logits(head, inputs, perturbed(inputs[1], L - 2))
    assert not np.allclose(changed[L:], base[L:])


def test_swapped_variant_mirrors(head, inputs):
    base = logits(head, inputs, variant="swapped_cross")
    changed = logits(head, inputs, perturbed(inputs[1], 3), variant="swapped_cross")
    np.testing.assert_allclose(changed[L:], base[L:], atol=1e-12)  # reasoning ignores narration
    changed = logits(head, inputs, perturbed(inputs[1], L + 3), variant="swapped_cross")
    assert not np.allclose(changed[:L], base[:L])  # narration reads reasoning


def test_no_cross_isolates_both(head, inputs):
    base = logits(head, inputs, variant="no_cross")
    changed = logits(head, inputs, perturbed(inputs[1], 3), variant="no_cross")
    np.testing.assert_allclose(changed[L:], base[L:], atol=1e-12)


def test_segment_embedding_changes_output(head, inputs):
    base = logits(head, inputs)
    seg = inputs[2].copy()
    seg[0, L:] = 0
    assert not np.allclose(logits(head, inputs, seg=seg)[L:], base[L:])


def test_video_tokens_reach_text(head, inputs):
    video, ids, seg, valid = inputs
    with T.no_grad():
        a = head(video, ids, seg, valid).data
        b = head(Tensor(np.random.default_rng(9).normal(size=video.shape)), ids, seg, valid).data
    assert not np.allclose(a, b)


# -- losses -------------------------------------------------------------------------------
def test_all_masked_untrained_loss_near_ln_v():
    r = np.random.default_rng(0)
    V = 50
    h = CaptionHead(V, 16, r, depth=1, heads=2, n_video=NV)
    ids = np.full((4, 2 * L), MASK_ID)
    targets = r.integers(5, V, size=ids.shape)
    out = h(Tensor(r.normal(size=(4, NV, 16))), ids, np.repeat([0, 1], L)[None].repeat(4, 0),
            np.ones_like(ids, dtype=bool))
    assert abs(mlm_loss(out, targets).item() - np.log(V)) < 0.1 * np.log(V)


def test_no_masked_positions_gives_zero(head, inputs):
    video, ids, seg, valid = inputs
    with pytest.warns(UserWarning):
        assert mlm_loss(head(video, ids, seg, valid), np.full(ids.shape, -100)).item() == 0.0


# -- generation ---------------------------------------------------------------------------
class _Pair(Module):
    def __init__(self, head, video):
        self.head, self.video = head, video


@pytest.fixture(scope="module")
def overfit_pair():
    """Caption head trained on one (video, caption) pair with full teacher-forced masking."""
    r = np.random.default_rng(0)
    vocab = build_vocab(["the car stops", "because the light is red"] * 2)
    head = CaptionHead(len(vocab), 16, r, depth=1, heads=2, n_video=NV)
    video = Tensor(r.normal(size=(1, NV, 16)))
    seq = pad_and_segment(encode("the car stops", vocab), encode("because the light is red", vocab))
    ids, seg, valid = seq.ids[None], seq.segment_ids[None], seq.valid[None]
    opt = AdamW(head.parameters(), weight_decay=0.0)
    losses = []
    for step in range(500):
        # mask one position per sentence, cycling through all of them
        masked = ids.copy()
        targets = np.full(ids.shape, -100)
        for base in (0, L):
            n_real = int(valid[0, base:base + L].sum())
            pos = base + 1 + step % (n_real - 1)
            targets[0, pos] = ids[0, pos]
            masked[0, pos] = MASK_ID
        head.zero_grad()
        loss = mlm_loss(head(video, masked, seg, valid), targets)
        T.backward(loss)
        opt.step(3e-3)
        losses.append(loss.item())
    return head, video, vocab, losses


def test_overfit_single_example(overfit_pair):
    head, video, vocab, losses = overfit_pair
    assert np.mean(losses[-20:]) < 0.05
    assert generate(head, video, vocab) == [("the car stops", "because the light is red")]


def test_untrained_generation_terminates_and_is_deterministic(head):
    video = Tensor(np.random.default_rng(3).normal(size=(2, NV, 16)))
    a = generate_ids(head, video)
    b = generate_ids(head, video)
    assert a.shape == (2, 2 * L) and (a == b).all()
    assert not np.isin(a[:, 1:L], [MASK_ID]).any()


def test_narration_only_gives_empty_reasoning(head):
    vocab = build_vocab(["abcdefghijklmnop"] * 2)
    video = Tensor(np.random.default_rng(3).normal(size=(1, NV, 16)))
    (_, reasoning), = generate(head, video, vocab, "narration_only")
    assert reasoning == ""


@pytest.mark.parametrize("variant", MASK_VARIANTS)
def test_generated_blocks_are_well_formed(head, variant):
    video = Tensor(np.random.default_rng(4).normal(size=(1, NV, 16)))
    ids = generate_ids(head, video, variant)[0]
    for s in decode_order(variant):
        block = ids[s * L:(s + 1) * L]
        assert block[0] == 1
        seps = np.flatnonzero(block == SEP_ID)
        if seps.size:
            assert (block[seps[0] + 1:] == PAD_ID).all()
