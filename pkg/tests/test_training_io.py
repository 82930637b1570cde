import dataclasses

import numpy as np
import pytest
import yaml

from plediff.baselines import LowRankDelta, init_reward_model
from plediff.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from plediff.config import (
    EnvConfig,
    PretrainConfig,
    RunConfig,
    load_run_config,
    run_config_from_dict,
    run_config_to_dict,
)
from plediff.denoiser import DenoiserConfig
from plediff.envdata import generate_corpus
from plediff.training import pretrain

TINY = RunConfig(
    env=EnvConfig(n_episodes=40, episode_length=32, n_modes=4),
    model=DenoiserConfig(horizon=8, hidden_width=12, n_blocks=1, ple_dim=6, time_embed_dim=8, seed=0),
    schedule_steps=20,
    pretrain=PretrainConfig(n_updates=120, batch_size=8),
    seed=3,
)


@pytest.fixture(scope="module")
def tiny_corpus():
    return generate_corpus(40, 32, 4, seed=3)


# ---------------------------------------------------------------------------
# pretraining loop

def test_pretrain_deterministic(tiny_corpus):
    a = pretrain(tiny_corpus, TINY)
    b = pretrain(tiny_corpus, TINY)
    assert np.array_equal(a.params.flat, b.params.flat)
    assert np.array_equal(a.mapper.w, b.mapper.w)
    assert np.array_equal(a.loss_history, b.loss_history)


def test_pretrain_loss_drops(tiny_corpus):
    res = pretrain(tiny_corpus, TINY)
    assert res.loss_history[-30:].mean() < res.loss_history[:30].mean()


def test_full_context_dropout_freezes_mapper(tiny_corpus):
    cfg = dataclasses.replace(TINY, pretrain=dataclasses.replace(TINY.pretrain, context_dropout_p=1.0))
    res = pretrain(tiny_corpus, cfg)
    from plediff.ple import init_mapper

    fresh = init_mapper(4, TINY.model.ple_dim, 32, seed=TINY.model.seed + 1)
    assert np.array_equal(res.mapper.w, fresh.w)
    assert np.array_equal(res.mapper.b, fresh.b)


def test_pretrain_rejects_wrong_corpus(tiny_corpus):
    bad = dataclasses.replace(TINY, model=dataclasses.replace(TINY.model, state_dim=3))
    with pytest.raises(ValueError, match="feature dim"):
        pretrain(tiny_corpus, bad)


# ---------------------------------------------------------------------------
# checkpoint container

def _roundtrip(tmp_path, ckpt, name="x.ckpt"):
    path = tmp_path / name
    save_checkpoint(path, ckpt)
    return path, load_checkpoint(path)


def test_denoiser_checkpoint_roundtrip(tiny_corpus, tmp_path):
    res = pretrain(tiny_corpus, TINY)
    ckpt = Checkpoint("denoiser", TINY, res.params, mapper=res.mapper, normalizer=res.normalizer)
    path, loaded = _roundtrip(tmp_path, ckpt)
    # parameters equal within float32 rounding
    np.testing.assert_allclose(loaded.params.flat, res.params.flat, rtol=1.2e-7, atol=1e-8)
    assert np.array_equal(loaded.mapper.mask, res.mapper.mask)
    np.testing.assert_allclose(loaded.normalizer.lo, res.normalizer.lo, rtol=0, atol=0)
    assert loaded.config == TINY
    # header round-trip is exact: re-saving the loaded checkpoint is byte-identical
    path2 = tmp_path / "y.ckpt"
    save_checkpoint(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_magic_rejected(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(p)


def test_reward_checkpoint_roundtrip(tmp_path):
    rm = init_reward_model(32, hidden=6, seed=1)
    ckpt = Checkpoint("reward", TINY, rm, extra={"in_dim": 32, "hidden": 6})
    _, loaded = _roundtrip(tmp_path, ckpt)
    assert loaded.type == "reward"
    np.testing.assert_allclose(loaded.params.flat, rm.flat, rtol=1.2e-7, atol=1e-8)
    assert (loaded.params.in_dim, loaded.params.hidden) == (32, 6)


def test_lora_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    deltas = {
        "blocks.0.conv1.w": LowRankDelta("blocks.0.conv1.w", rng.standard_normal((12, 2)), rng.standard_normal((2, 36))),
    }
    ckpt = Checkpoint("lora", TINY, deltas, extra={"rank": 2})
    _, loaded = _roundtrip(tmp_path, ckpt)
    assert loaded.type == "lora"
    got = loaded.params["blocks.0.conv1.w"]
    np.testing.assert_allclose(got.b, deltas["blocks.0.conv1.w"].b, rtol=1.2e-7, atol=1e-7)


# ---------------------------------------------------------------------------
# config parsing

def test_defaults_match_contract():
    cfg = RunConfig()
    assert cfg.inversion.n_adapt == 5000
    assert cfg.model.ple_dim == 16
    assert cfg.guidance.u == 0.02
    assert cfg.guidance.v == 1.2
    assert cfg.schedule_steps == 100
    assert cfg.pretrain.context_dropout_p == 0.25
    assert cfg.inversion.prior.kind == "uniform01"
    assert cfg.env.n_episodes == 750 and cfg.env.episode_length == 64
    assert cfg.model.horizon == 16


def test_unknown_keys_rejected():
    with pytest.raises(ValueError, match="unknown config key"):
        run_config_from_dict({"model": {"horizon": 8, "hidden": 3}})
    with pytest.raises(ValueError, match="unknown config key"):
        run_config_from_dict({"typo_section": {}})


def test_yaml_roundtrip(tmp_path):
    cfg = RunConfig(seed=9, model=DenoiserConfig(horizon=8, hidden_width=16))
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(run_config_to_dict(cfg)))
    assert load_run_config(path) == cfg


def test_invalid_dropout_rejected():
    with pytest.raises(ValueError, match="context_dropout_p"):
        PretrainConfig(context_dropout_p=1.5)
