import numpy as np
import pytest

from plediff.denoiser import DenoiserConfig, sq_err_and_grads
from plediff.ple import (
    PLE,
    InversionConfig,
    MapperParams,
    PriorSpec,
    hidden_window,
    init_mapper,
    invert_preferences,
    make_center_mask,
    map_trajectory,
    sample_prior,
)
from plediff.schedule import make_cosine_schedule

from conftest import random_params

CFG = DenoiserConfig(horizon=4, state_dim=2, action_dim=2, ple_dim=4, hidden_width=8, n_blocks=1, seed=5)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# mapper

def test_zero_mapper_gives_half():
    m = MapperParams(w=np.zeros((4, 6)), b=np.zeros(6), mask=make_center_mask(8))
    z = map_trajectory(m, np.random.default_rng(0).standard_normal((8, 4)))
    assert np.all(z.z == 0.5)


def test_identical_visible_rows_equal_single_row_mapping(rng):
    m = init_mapper(4, 5, 8, seed=1)
    row = rng.standard_normal(4)
    tau = rng.standard_normal((8, 4))
    tau[m.mask] = row
    got = map_trajectory(m, tau).z
    want = _sigmoid(row @ m.w + m.b)
    np.testing.assert_allclose(got, want, rtol=1e-14)


def test_visible_permutation_invariance():
    # integer-valued features make the mean exact under reordering
    rng = np.random.default_rng(4)
    m = init_mapper(3, 4, 10, seed=2)
    tau = rng.integers(-5, 6, size=(10, 3)).astype(float)
    z1 = map_trajectory(m, tau).z
    vis = np.flatnonzero(m.mask)
    tau2 = tau.copy()
    tau2[vis] = tau[np.flip(vis)]
    z2 = map_trajectory(m, tau2).z
    assert np.array_equal(z1, z2)


def test_masked_content_is_ignored(rng):
    m = init_mapper(4, 4, 12, seed=3)
    tau = rng.standard_normal((12, 4))
    z1 = map_trajectory(m, tau).z
    tau2 = tau.copy()
    tau2[~m.mask] = 1e6
    z2 = map_trajectory(m, tau2).z
    assert np.array_equal(z1, z2)


def test_all_invisible_mask_rejected():
    with pytest.raises(ValueError, match="mask"):
        MapperParams(w=np.zeros((4, 4)), b=np.zeros(4), mask=np.zeros(8, dtype=bool))


def test_center_mask_hides_central_half():
    mask = make_center_mask(64)
    assert (~mask).sum() == 32
    start, stop = hidden_window(mask)
    assert (start, stop) == (16, 48)
    assert not mask[16:48].any() and mask[:16].all() and mask[48:].all()
    odd = make_center_mask(7)  # ceil(7/2) = 4 hidden
    assert (~odd).sum() == 4


def test_mapper_output_in_open_interval(rng):
    m = init_mapper(4, 8, 16, seed=9)
    for _ in range(20):
        z = map_trajectory(m, 100.0 * rng.standard_normal((16, 4))).z
        assert np.all(z > 0) and np.all(z < 1)


# ---------------------------------------------------------------------------
# priors

def test_fixed_half_prior():
    z = sample_prior(PriorSpec("fixed_half"), 6, seed=0)
    assert np.all(z.z == 0.5)


def test_uniform_prior_mean():
    zs = np.concatenate([sample_prior(PriorSpec("uniform01"), 100, seed=s).z for s in range(1000)])
    assert abs(zs.mean() - 0.5) < 0.01


def test_gaussian_half_prior_std():
    zs = np.concatenate([sample_prior(PriorSpec("gaussian_half"), 100, seed=s).z for s in range(1000)])
    assert abs(zs.std() - 1.0 / 6.0) < 0.01
    assert abs(zs.mean() - 0.5) < 0.01


def test_prior_bounds_and_determinism():
    for kind in ("uniform01", "gaussian_half", "fixed_half"):
        a = sample_prior(PriorSpec(kind), 16, seed=42)
        b = sample_prior(PriorSpec(kind), 16, seed=42)
        assert np.array_equal(a.z, b.z)
        assert np.all(a.z >= 1e-4) and np.all(a.z <= 1 - 1e-4)


def test_ple_bounds_enforced():
    with pytest.raises(ValueError):
        PLE(np.array([0.5, 1.0]))
    with pytest.raises(ValueError):
        PLE(np.array([0.0, 0.5]))


# ---------------------------------------------------------------------------
# inversion

def _labels(rng, n, h=4, c=4, identical=False):
    out = []
    for _ in range(n):
        w = rng.standard_normal((h, c))
        l = w.copy() if identical else rng.standard_normal((h, c))
        out.append((w, l))
    return out


def test_inversion_freezes_model(rng):
    p = random_params(CFG, rng)
    before = p.flat.copy()
    sched = make_cosine_schedule(10)
    invert_preferences(p, sched, _labels(rng, 5), InversionConfig(n_adapt=50, seed=1))
    assert np.array_equal(p.flat, before)


def test_inversion_outputs_bounded_and_history_length(rng):
    p = random_params(CFG, rng)
    sched = make_cosine_schedule(10)
    z_w, z_l, hist = invert_preferences(p, sched, _labels(rng, 4), InversionConfig(n_adapt=120, seed=2))
    assert hist.shape == (120,)
    for z in (z_w.z, z_l.z):
        assert np.all(z >= 1e-4) and np.all(z <= 1 - 1e-4)
    assert (z_w.kind, z_l.kind) == ("winner", "loser")


def test_inversion_deterministic(rng):
    p = random_params(CFG, rng)
    sched = make_cosine_schedule(10)
    labels = _labels(rng, 6)
    r1 = invert_preferences(p, sched, labels, InversionConfig(n_adapt=60, seed=3))
    r2 = invert_preferences(p, sched, labels, InversionConfig(n_adapt=60, seed=3))
    assert np.array_equal(r1[0].z, r2[0].z)
    assert np.array_equal(r1[1].z, r2[1].z)
    assert np.array_equal(r1[2], r2[2])


def test_identical_pairs_give_no_systematic_separation(rng):
    p = random_params(CFG, rng)
    sched = make_cosine_schedule(10)
    cfg = InversionConfig(n_adapt=300, seed=4)
    d_e = CFG.ple_dim
    z_w0 = sample_prior(cfg.prior, d_e, cfg.seed).z
    z_l0 = sample_prior(cfg.prior, d_e, np.random.default_rng([cfg.seed, 1]).integers(2**62)).z
    init_dist = np.linalg.norm(z_w0 - z_l0)
    z_w, z_l, _ = invert_preferences(p, sched, _labels(rng, 5, identical=True), cfg)
    assert np.linalg.norm(z_w.z - z_l.z) <= 10.0 * init_dist


def test_joint_gradients_are_separable(rng):
    # additive separability: the z_w gradient from the joint winner+loser
    # batch equals the gradient computed from the winner terms alone
    p = random_params(CFG, rng)
    sched = make_cosine_schedule(10)
    b = 3
    w = rng.standard_normal((b, 4, 4))
    l = rng.standard_normal((b, 4, 4))
    ks = rng.integers(0, 10, b)
    eps = rng.standard_normal((b, 4, 4))
    ab = sched.alpha_bar[ks][:, None, None]
    x_w = np.sqrt(ab) * w + np.sqrt(1 - ab) * eps
    x_l = np.sqrt(ab) * l + np.sqrt(1 - ab) * eps
    z_w = rng.uniform(0.2, 0.8, 4)
    z_l = rng.uniform(0.2, 0.8, 4)

    x = np.concatenate([x_w, x_l])
    kk = np.concatenate([ks, ks])
    tgt = np.concatenate([eps, eps])
    ctxs = np.concatenate([np.broadcast_to(z_w, (b, 4)), np.broadcast_to(z_l, (b, 4))])
    _, _, g_joint = sq_err_and_grads(p, x, kk, tgt, ctxs)
    joint_w = 2.0 * g_joint[:b].sum(axis=0)  # d/dz_w of mean-per-group joint loss

    _, _, g_alone = sq_err_and_grads(p, x_w, ks, eps, np.broadcast_to(z_w, (b, 4)))
    alone_w = g_alone.sum(axis=0)
    np.testing.assert_allclose(joint_w, alone_w, rtol=1e-9, atol=1e-13)


def test_inversion_validates_inputs(rng):
    p = random_params(CFG, rng)
    sched = make_cosine_schedule(10)
    with pytest.raises(ValueError, match="n_adapt"):
        invert_preferences(p, sched, _labels(rng, 2), InversionConfig(n_adapt=0))
    with pytest.raises(ValueError, match="nonempty"):
        invert_preferences(p, sched, [], InversionConfig(n_adapt=5))
    with pytest.raises(ValueError, match="shape"):
        invert_preferences(p, sched, [(np.zeros((3, 4)), np.zeros((3, 4)))], InversionConfig(n_adapt=5))


def test_inversion_snapshots(rng):
    p = random_params(CFG, rng)
    sched = make_cosine_schedule(10)
    z_w, z_l, hist, snaps = invert_preferences(
        p, sched, _labels(rng, 4), InversionConfig(n_adapt=50, seed=6), snapshot_steps=(20, 50)
    )
    assert set(snaps) == {20, 50}
    assert np.array_equal(snaps[50][0].z, z_w.z)
