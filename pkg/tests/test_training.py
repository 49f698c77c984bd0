import numpy as np
import pytest

from cotasr.errors import ConfigError, TrainingDivergedError
from cotasr.model import ModelConfig, checkpoint_save
from cotasr.synthdata import synth_corpus
from cotasr.training import AdamW, TrainConfig, lr_at, moving_average, train_two_stage

SMALL = ModelConfig(d_model=16, n_heads=2, n_blocks=1, d_enc=8, enc_blocks=1)


def test_schedule_shape():
    lrs = [lr_at(s, 300, 100, 1.0) for s in range(300)]
    assert lrs[0] == pytest.approx(0.01) and lrs[99] == pytest.approx(1.0)
    assert all(a < b for a, b in zip(lrs[:99], lrs[1:100]))
    assert all(a >= b for a, b in zip(lrs[100:], lrs[101:]))
    assert lr_at(300, 300, 100, 1.0) == 0.0


def test_adamw_skips_decay_on_rows():
    p = {"w": np.ones((2, 2)), "b": np.ones((1, 2))}
    opt = AdamW(p, weight_decay=0.5)
    opt.step({"w": np.zeros((2, 2)), "b": np.zeros((1, 2))}, lr=0.1)
    assert np.allclose(p["w"], 0.95) and np.allclose(p["b"], 1.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lam=-1)
    with pytest.raises(ConfigError):
        TrainConfig(stage1_steps=1, stage2_steps=1, warmup_steps=5)
    with pytest.raises(ConfigError):
        train_two_stage([], TrainConfig())
    with pytest.raises(ConfigError):
        train_two_stage(synth_corpus(1, 2), TrainConfig(stage1_steps=1, stage2_steps=1, warmup_steps=1),
                        adapter_kind="conv")


def test_stage_one_freezes_everything_but_the_adapter():
    corpus = synth_corpus(1, 8)
    cfg = TrainConfig(stage1_steps=3, stage2_steps=0, warmup_steps=1, batch_size=2)
    from cotasr.model import CotAsrModel
    before = dict((k, v.copy()) for k, v in CotAsrModel(SMALL).named_parameters())
    res = train_two_stage(corpus, cfg, model_config=SMALL)
    after = dict(res.model.named_parameters())
    changed = {k for k in before if not np.array_equal(before[k], after[k])}
    assert changed and all(k.startswith("adapter.") for k in changed)
    assert all(np.array_equal(before[k], after[k]) for k in before if not k.startswith("adapter."))


def test_same_seed_same_checkpoint(tmp_path):
    corpus = synth_corpus(1, 8)
    cfg = TrainConfig(stage1_steps=2, stage2_steps=2, warmup_steps=1, batch_size=2)
    a = train_two_stage(corpus, cfg, model_config=SMALL)
    b = train_two_stage(corpus, cfg, model_config=SMALL)
    checkpoint_save(tmp_path / "a.ckpt", a.model)
    checkpoint_save(tmp_path / "b.ckpt", b.model)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert [r.loss for r in a.curve] == [r.loss for r in b.curve]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    corpus = synth_corpus(1, 4)
    cfg = TrainConfig(stage1_steps=1, stage2_steps=3, warmup_steps=1, batch_size=2, peak_lr=1e300,
                      clip_norm=0.0)
    with pytest.raises(TrainingDivergedError) as info:
        train_two_stage(corpus, cfg, model_config=SMALL)
    assert info.value.step >= 1


def test_small_run_learns():
    corpus = synth_corpus(1, 16)
    cfg = TrainConfig(stage1_steps=20, stage2_steps=80, warmup_steps=10, batch_size=4, peak_lr=1e-2)
    res = train_two_stage(corpus, cfg, "plain", "linear", SMALL)
    smooth = moving_average(res.losses(), 10)
    assert smooth[-1] < 0.7 * smooth[0]
    assert [r.stage for r in res.curve] == [1] * 20 + [2] * 80


def test_augmentation_leaves_targets_and_prompt_alone():
    from cotasr.cot import make_example
    from cotasr.numerics import Rng
    from cotasr.training import augment
    ex = make_example(synth_corpus(1, 1)[0], "cot")
    cfg = TrainConfig(feature_noise=0.5, token_replace=0.5)
    a, ids = augment(ex, cfg, Rng(0), 36)
    b, ids2 = augment(ex, cfg, Rng(0), 36)
    assert np.array_equal(a.features, b.features) and ids == ids2
    assert a.target == ex.target and ids[:len(ex.prefix)] == list(ex.prefix)
    assert ids[len(ex.prefix):] != list(ex.target[:-1])
    assert not np.array_equal(a.features, ex.features)
    same, none = augment(ex, TrainConfig(feature_noise=0.0, token_replace=0.0), Rng(0), 36)
    assert same is ex and none is None
    with pytest.raises(ConfigError):
        TrainConfig(token_replace=1.0)
