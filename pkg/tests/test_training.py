import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from cnedec.autodiff import Tensor, bce_with_logits, parameter
from cnedec.checkpoint import read_checkpoint
from cnedec.cne import CneConfig
from cnedec.errors import CheckpointError, ConfigurationError, UnsupportedRateError
from cnedec.training import (
    TEST_STREAM,
    TRAIN_STREAM,
    VALIDATION_STREAM,
    Adam,
    TrainConfig,
    batch_seed,
    bbt_snr,
    bce_loss,
    cosine_lr,
    finetune_config,
    make_batch,
    train,
)

TINY_MODEL = CneConfig(d_embed=4, d_hidden=6, n_layers=1, n_iter=2)


def tiny_train(**kw):
    base = dict(code="conv", K=12, epochs=2, batches_per_epoch=2, batch_size=8, val_blocks=16,
                model=TINY_MODEL, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def test_bbt_values():
    assert bbt_snr("1/2", 2.5) == 2.5
    assert bbt_snr(Fraction(1, 3), 1.5) == pytest.approx(1.5 + 10 * math.log10(2 / 3), abs=1e-12)
    assert bbt_snr("3/4", 2.5) == pytest.approx(2.5 + 10 * math.log10(1.5), abs=1e-12)
    with pytest.raises(UnsupportedRateError):
        bbt_snr("3/2", 0.0)
    with pytest.raises(UnsupportedRateError):
        bbt_snr(0, 0.0)


def test_bce_loss_reference_points(rng):
    assert bce_loss(np.zeros(7), np.ones(7)) == pytest.approx(math.log(2), abs=1e-15)
    assert bce_loss([20.0], [1]) < 1e-8
    z = rng.standard_normal(50) * 4
    y = rng.integers(0, 2, 50)
    ref = -np.mean(y * np.log(1 / (1 + np.exp(-z))) + (1 - y) * np.log(1 - 1 / (1 + np.exp(-z))))
    assert bce_loss(z, y) == pytest.approx(ref, abs=1e-12)
    assert float(bce_with_logits(Tensor(z), y).data) == pytest.approx(bce_loss(z, y), abs=1e-14)


def test_cosine_endpoints():
    assert cosine_lr(0, 100, 1e-3, 1e-6) == 1e-3
    assert abs(cosine_lr(99, 100, 1e-3, 1e-6) - 1e-6) <= 1e-9
    assert cosine_lr(99, 100, 1e-3, 1e-6) == 1e-6
    lrs = [cosine_lr(s, 50, 1e-4, 1e-6) for s in range(50)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert cosine_lr(0, 1, 1e-3, 1e-6) == 1e-3


def test_adam_step_on_quadratic():
    # f(x) = 0.5 * a * x^2, gradient a x; one step from x0
    a, x0, lr = 3.0, np.array([0.7, -2.0]), 0.1
    p = parameter(x0.copy())
    opt = Adam([p])
    p.grad = a * p.data
    opt.step(lr)
    g = a * x0
    m = 0.1 * g / (1 - 0.9)
    v = 0.001 * g * g / (1 - 0.999)
    expected = x0 - lr * m / (np.sqrt(v) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-12)
    # second step uses the accumulated moments
    p.grad = a * p.data
    g2 = p.grad.copy()
    x1 = p.data.copy()
    opt.step(lr)
    m2 = 0.9 * (0.1 * g) + 0.1 * g2
    v2 = 0.999 * (0.001 * g * g) + 0.001 * g2 * g2
    np.testing.assert_allclose(p.data, x1 - lr * (m2 / (1 - 0.81)) / (np.sqrt(v2 / (1 - 0.999 ** 2)) + 1e-8), atol=1e-12)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(phase="other")
    with pytest.raises(ConfigurationError):
        TrainConfig(rates=("1/2", "2/3"))  # pre-training is single-rate
    with pytest.raises(UnsupportedRateError):
        TrainConfig(code="conv", rates=("1/3",))
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"bogus": 1})
    cfg = TrainConfig.from_dict({"model": {"d_embed": 4, "d_hidden": 6}, "rates": ["1/2"]})
    assert cfg.model == CneConfig(d_embed=4, d_hidden=6)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_seed_streams_disjoint():
    def seeds(stream, epochs=20, batches=64):
        return {int(batch_seed(0, stream, e, b).generate_state(1, np.uint64)[0])
                for e in range(epochs) for b in range(batches)}

    train_s, val_s, test_s = seeds(TRAIN_STREAM), seeds(VALIDATION_STREAM), seeds(TEST_STREAM)
    assert len(train_s) == 20 * 64
    assert not (train_s & test_s) and not (train_s & val_s) and not (val_s & test_s)


def test_pretrain_batch_shapes_and_snr(rng):
    cfg = tiny_train()
    b = make_batch(cfg, rng)
    assert b.received.llr.shape == (8, 18, 2)
    assert b.bits.shape == (8, 12)
    assert set(b.rates) == {"1/2"}
    np.testing.assert_array_equal(b.snr_db, 0.0)
    np.testing.assert_array_equal(b.received.ind, 1.0)


def test_finetune_batches_mix_rates():
    cfg = finetune_config(tiny_train(), batch_size=16)
    assert cfg.rates == ("1/2", "2/3", "3/4")
    n_mixed = 0
    for i in range(100):
        b = make_batch(cfg, np.random.default_rng(i))
        n_mixed += len(set(b.rates)) >= 2
        for r, s in zip(b.rates, b.snr_db):
            assert s == bbt_snr(r, 2.5)
        # punctured positions carry zero LLR and a zero indicator
        assert np.all(b.received.llr[b.received.ind == 0] == 0)
    # P(single rate) = 3 * (1/3)^16, so essentially every batch is mixed
    assert n_mixed >= 99


def test_turbo_batch_layout():
    cfg = finetune_config(tiny_train(code="turbo", K=24, qpp=(5, 6), rates=("1/3",)), batch_size=32)
    assert cfg.rates == ("1/3", "1/2", "2/3", "3/4")
    b = make_batch(cfg, np.random.default_rng(0))
    assert b.received.llr.shape == (32, 3, 24)
    for r, ind in zip(b.rates, b.received.ind):
        # at most 3K distinct coded bits, each marked once
        assert ind.sum() == round(24 / Fraction(r))


def test_training_is_deterministic():
    a = train(tiny_train())
    b = train(tiny_train())
    assert a.history == b.history
    for ta, tb in zip(a.last.parameters(), b.last.parameters()):
        np.testing.assert_array_equal(ta.data, tb.data)


def test_resume_reproduces_uninterrupted_run(tmp_path):
    cfg = tiny_train(epochs=3)
    full = train(cfg, out_dir=tmp_path / "full")
    train(cfg, out_dir=tmp_path / "part", stop_after_epoch=1)
    resumed = train(cfg, out_dir=tmp_path / "part", resume=tmp_path / "part" / "last.ckpt")
    assert resumed.history == full.history
    for ta, tb in zip(full.last.parameters(), resumed.last.parameters()):
        np.testing.assert_array_equal(ta.data, tb.data)
    np.testing.assert_array_equal(full.last.bn.running_var, resumed.last.bn.running_var)
    log = (tmp_path / "full" / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,loss,lr,val_ber" and len(log) == 4
    meta, _ = read_checkpoint(tmp_path / "full" / "best.ckpt")
    assert meta["val_ber"] == full.best_val_ber


def test_resume_rejects_other_config(tmp_path):
    cfg = tiny_train()
    train(cfg, out_dir=tmp_path, stop_after_epoch=1)
    with pytest.raises(CheckpointError):
        train(replace(cfg, lr_initial=5e-3), resume=tmp_path / "last.ckpt")


def test_finetune_needs_pretrained():
    with pytest.raises(CheckpointError, match="pre-trained"):
        train(finetune_config(tiny_train()))


def test_finetune_from_checkpoint(tmp_path):
    pre = tiny_train(epochs=1)
    train(pre, out_dir=tmp_path)
    ft = finetune_config(pre, epochs=1, init_checkpoint=str(tmp_path / "best.ckpt"))
    result = train(ft)
    assert len(result.history) == 1
    wrong = replace(ft, model=CneConfig(d_embed=5, d_hidden=6, n_layers=1, n_iter=2))
    with pytest.raises(CheckpointError, match="does not match"):
        train(wrong)
