import json

import numpy as np
import pytest

from adapt import tensor as T
from adapt.data import read_dataset
from adapt.model import TrainConfig
from adapt.tensor import Tensor
from adapt.tokenizer import CLS_ID, MASK_ID, PAD_ID, SEP_ID
from adapt.train import AdamW, Batch, NonFiniteLossError, Trainer, lr_at, mask_tokens, prepare
from adapt.video import ConfigError

TINY = dict(frames=4, height=32, width=32, base_channels=2, d_text=16, heads=2, video_depth=1,
            text_depth=1, motion_depth=1, batch_size=4, epochs=2)


def tiny_config(**kw):
    return TrainConfig(**{**TINY, **kw})


def setup(root, **kw):
    cfg = tiny_config(**kw)
    eps = read_dataset(root)
    trainer = Trainer.from_episodes(cfg, eps)
    return trainer, prepare(eps, root, cfg, trainer.vocab)


def masked_batch(trainer, examples, seed=0):
    batch = Batch.collate(examples, trainer.normalizer)
    rngs = [np.random.default_rng([seed, i]) for i in range(len(examples))]
    return trainer.mask_batch(batch, rngs)


# -- masking -------------------------------------------------------------------------
def test_masking_statistics():
    rng = np.random.default_rng(0)
    ids = rng.integers(5, 100, size=(500, 30))
    ids[:, 0] = CLS_ID
    ids[:, -5:] = PAD_ID
    valid = ids != PAD_ID
    out, targets = mask_tokens(ids, rng, 100, valid, mask_sep=False)
    real = valid & (ids != CLS_ID)
    sel = targets != T.IGNORE_ID
    assert real.sum() >= 10_000
    assert abs(sel.sum() / real.sum() - 0.5) < 0.02
    n = sel.sum()
    masked = (out[sel] == MASK_ID).sum() / n
    kept = (out[sel] == ids[sel]).sum() / n
    randomized = 1 - masked - kept
    assert abs(masked - 0.8) < 0.03
    # a random replacement can collide with the original id (p = 1/95)
    assert abs(kept - 0.1) < 0.02 and abs(randomized - 0.1) < 0.02
    assert not sel[ids == CLS_ID].any() and not sel[~valid].any()


def test_sep_selection_follows_flag():
    ids = np.array([[CLS_ID, 7, SEP_ID] * 2000])
    _, t_on = mask_tokens(ids, np.random.default_rng(1), 20)
    _, t_off = mask_tokens(ids, np.random.default_rng(1), 20, mask_sep=False)
    assert (t_on[ids == SEP_ID] != T.IGNORE_ID).any()
    assert (t_off[ids == SEP_ID] == T.IGNORE_ID).all()


def test_masking_deterministic():
    ids = np.arange(5, 35)
    a = mask_tokens(ids, np.random.default_rng(4), 40)
    b = mask_tokens(ids, np.random.default_rng(4), 40)
    assert all((x == y).all() for x, y in zip(a, b))


# -- schedule and optimizer ------------------------------------------------------------
def test_lr_examples():
    assert lr_at(100, 1000, 1e-4) == pytest.approx(1e-4)
    assert lr_at(50, 1000, 1e-4) == pytest.approx(5e-5)
    assert lr_at(1000, 1000, 1e-4) == 0.0
    assert lr_at(550, 1000, 1e-4) == pytest.approx(5e-5)


def test_adamw_decays_matrices_only():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    w.grad, b.grad = np.zeros((2, 2)), np.zeros(2)
    AdamW([w, b], weight_decay=0.5).step(0.1)
    np.testing.assert_allclose(w.data, 0.95)
    np.testing.assert_allclose(b.data, 1.0)


# -- losses ------------------------------------------------------------------------------
def test_joint_loss_is_sum(tiny_dataset):
    trainer, ex = setup(tiny_dataset)
    losses, _ = trainer.losses(masked_batch(trainer, ex[:4]))
    assert abs(losses["L"].item() - (losses["L_DCG"].item() + losses["L_CSP"].item())) < 1e-12


def test_single_mode_has_no_csp(tiny_dataset):
    trainer, ex = setup(tiny_dataset, mode="single")
    assert trainer.model.csp is None
    losses, acts = trainer.losses(masked_batch(trainer, ex[:4]))
    assert "L_CSP" not in losses and "csp_predictions" not in acts


def test_csp_gradient_reaches_encoder(tiny_dataset):
    trainer, ex = setup(tiny_dataset)
    batch = Batch.collate(ex[:4], trainer.normalizer)  # no masked targets: L_DCG is 0
    trainer.model.zero_grad()
    with pytest.warns(UserWarning):
        losses, _ = trainer.losses(batch)
    T.backward(losses["L"])
    assert np.abs(trainer.model.encoder.patch.weight.grad).sum() > 0
    assert trainer.model.caption.out.weight.grad is None or not trainer.model.caption.out.weight.grad.any()


def test_single_plus_reads_signals(tiny_dataset):
    trainer, ex = setup(tiny_dataset, mode="single_plus")
    batch = masked_batch(trainer, ex[:2])
    a = trainer.losses(batch)[0]["L_DCG"].item()
    batch.signals = batch.signals + 1.0
    assert trainer.losses(batch)[0]["L_DCG"].item() != a


def test_loss_decreases_on_fixed_batch(tiny_dataset):
    trainer, ex = setup(tiny_dataset)
    batch = masked_batch(trainer, ex[:4])
    first = trainer.train_step(batch, 1e-3)["L"]
    for _ in range(99):
        last = trainer.train_step(batch, 1e-3)["L"]
    assert last < 0.5 * first


def test_nan_loss_aborts_naming_tensor(tiny_dataset):
    trainer, ex = setup(tiny_dataset)
    trainer.model.encoder.pos.data[0, 0] = np.nan
    with pytest.raises(NonFiniteLossError, match="encoder.pos"):
        trainer.train_step(masked_batch(trainer, ex[:2]), 1e-3)


def test_nan_pixels_rejected_before_training(tiny_dataset, tmp_path):
    from adapt.data import read_clip, write_clip, write_dataset
    eps = read_dataset(tiny_dataset)[:1]
    frames = read_clip(tiny_dataset / eps[0].clip)
    frames[0, 0, 0, 0] = np.nan
    write_clip(tmp_path / eps[0].clip, frames)
    write_dataset(tmp_path, eps)
    cfg = tiny_config()
    trainer = Trainer.from_episodes(cfg, eps)
    with pytest.raises(ValueError, match="non-finite"):
        prepare(eps, tmp_path, cfg, trainer.vocab)


def test_fit_records_history_and_schedule(tiny_dataset):
    trainer, ex = setup(tiny_dataset)
    history = trainer.fit(ex)
    assert [h["epoch"] for h in history] == [1, 2]
    assert trainer.step_count == 2 * 3


# -- config ------------------------------------------------------------------------------
def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"epochs": 3, "learning_rate": 1e-3}))
    with pytest.raises(ConfigError, match="learning_rate"):
        TrainConfig.from_json(path)


@pytest.mark.parametrize("bad", [dict(mode="x"), dict(frames=3), dict(channels=["yaw"]), dict(height=40),
                                 dict(mask_variant="x"), dict(warmup=0.0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        tiny_config(**bad)


def test_narration_only_mode_implies_variant():
    cfg = tiny_config(mode="narration_only")
    assert cfg.variant == "narration_only" and cfg.has_csp


# -- checkpoints ---------------------------------------------------------------------------
def test_checkpoint_round_trip_is_bit_identical(tiny_dataset, tmp_path):
    trainer, ex = setup(tiny_dataset)
    trainer.fit(ex)
    trainer.save(tmp_path / "ck")
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert {"schema_version", "config", "vocab", "normalization", "step", "seed", "optimizer",
            "parameters"} <= set(manifest)
    loaded = Trainer.load(tmp_path / "ck")
    batch = masked_batch(trainer, ex[:2])
    with T.no_grad():
        a = trainer.losses(batch)[1]
        b = loaded.losses(batch)[1]
    for k in a:
        assert np.array_equal(a[k].data, b[k].data), k
    assert trainer.predict(ex[:2]) [0] == loaded.predict(ex[:2])[0]


def test_load_rejects_non_checkpoint(tmp_path):
    with pytest.raises(ConfigError):
        Trainer.load(tmp_path)
