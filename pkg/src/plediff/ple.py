"""Preference latent embeddings: the trajectory mapper, priors and inversion.

A PLE is a vector in (0,1)^d_e that conditions the diffusion model.  During
pretraining the mapper f produces a placeholder embedding from a masked
full trajectory (mask -> per-timestep affine -> mean pool over visible
timesteps -> sigmoid), giving the latent space structure before any user
data exists.  During adaptation the pretrained weights are frozen and a
winner/loser embedding pair is optimized directly against the denoising
reconstruction loss of labeled segments ("preference inversion").
"""

from dataclasses import dataclass, field

import numpy as np

from .denoiser import sq_err_and_grads
from .optim import Adam
from .schedule import NoiseSchedule

PLE_MARGIN = 1e-4  # embeddings are projected into [margin, 1 - margin]


@dataclass
class PLE:
    z: np.ndarray
    kind: str = "placeholder"  # placeholder | winner | loser | null

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).ravel()
        if self.kind not in ("placeholder", "winner", "loser", "null"):
            raise ValueError(f"unknown PLE kind: {self.kind!r}")
        if np.any(self.z <= 0.0) or np.any(self.z >= 1.0):
            raise ValueError("PLE entries must lie strictly inside (0, 1)")


@dataclass
class MapperParams:
    w: np.ndarray  # (S+A, d_e) per-timestep projection
    b: np.ndarray  # (d_e,)
    mask: np.ndarray  # (L,) bool, True = timestep visible to the mapper

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ValueError("mapper mask hides every timestep")

    def copy(self):
        return MapperParams(self.w.copy(), self.b.copy(), self.mask.copy())


def make_center_mask(length, horizon=None):
    """Fixed mask hiding the ceil(L/2) central timesteps.

    Training sub-segments are drawn only from the hidden window, so the
    mapper never sees the region the model is asked to reconstruct.
    """
    hidden = -(-length // 2)
    start = (length - hidden) // 2
    mask = np.ones(length, dtype=bool)
    mask[start : start + hidden] = False
    if horizon is not None and hidden < horizon:
        raise ValueError(f"hidden window {hidden} shorter than horizon {horizon}")
    return mask


def hidden_window(mask):
    """(start, stop) of the contiguous hidden region of a center mask."""
    idx = np.flatnonzero(~mask)
    return int(idx[0]), int(idx[-1]) + 1


def init_mapper(feature_dim, ple_dim, length, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((feature_dim, ple_dim)) / feature_dim
    return MapperParams(w=w, b=np.zeros(ple_dim), mask=make_center_mask(length))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def map_trajectory(mapper: MapperParams, tau_full) -> PLE:
    """placeholder PLE of a full trajectory (normalized units).

    Masked-out timesteps contribute nothing; the affine projection commutes
    with the mean, so the mean visible feature is projected once.
    """
    tau_full = np.asarray(tau_full, dtype=float)
    if tau_full.shape[0] != mapper.mask.shape[0]:
        raise ValueError(
            f"trajectory has {tau_full.shape[0]} timesteps, mask expects {mapper.mask.shape[0]}"
        )
    mean_feat = tau_full[mapper.mask].mean(axis=0)
    z = _sigmoid(mean_feat @ mapper.w + mapper.b)
    return PLE(np.clip(z, PLE_MARGIN, 1.0 - PLE_MARGIN), kind="placeholder")


def map_trajectory_batch(mapper, taus):
    """Vectorized placeholder mapping; returns (z (B,d_e), mean_feat (B,C))."""
    mean_feat = taus[:, mapper.mask].mean(axis=1)
    z = _sigmoid(mean_feat @ mapper.w + mapper.b)
    return np.clip(z, PLE_MARGIN, 1.0 - PLE_MARGIN), mean_feat


@dataclass(frozen=True)
class PriorSpec:
    kind: str = "uniform01"  # uniform01 | gaussian_half | fixed_half

    def __post_init__(self):
        if self.kind not in ("uniform01", "gaussian_half", "fixed_half"):
            raise ValueError(f"unknown prior kind: {self.kind!r}")


def sample_prior(prior: PriorSpec, ple_dim, seed) -> PLE:
    rng = np.random.default_rng(seed)
    if prior.kind == "uniform01":
        z = rng.uniform(0.0, 1.0, size=ple_dim)
    elif prior.kind == "gaussian_half":
        z = 0.5 + (0.5 / 3.0) * rng.standard_normal(ple_dim)
    else:
        z = np.full(ple_dim, 0.5)
    return PLE(np.clip(z, PLE_MARGIN, 1.0 - PLE_MARGIN))


@dataclass
class InversionConfig:
    n_adapt: int = 5000
    batch_size: int = 16
    learning_rate: float = 0.01
    prior: PriorSpec = field(default_factory=PriorSpec)
    # average the final iterates instead of returning the last one; the
    # minibatch bounce around the optimum dominates z* variance otherwise
    tail_average: int = 1000
    seed: int = 0


def invert_preferences(frozen, schedule: NoiseSchedule, resolved_labels, config: InversionConfig,
                       snapshot_steps=(), progress=None):
    """Optimize winner/loser embeddings against a frozen pretrained model.

    ``resolved_labels`` is a list of (winner, loser) segment matrices in
    normalized units.  Every update draws a minibatch of labels (with
    replacement), noises each winner and loser with a shared fresh (k, eps)
    per label, and takes one adaptive-moment step on the joint
    reconstruction loss; both embeddings are then projected back into
    [1e-4, 1-1e-4].  The model parameters receive no update (asserted).

    Returns (z_w_star, z_l_star, loss_history[, snapshots]); ``snapshots``
    maps each requested step count to the (z_w, z_l) pair at that point.
    """
    if config.n_adapt < 1:
        raise ValueError("n_adapt must be >= 1")
    if not resolved_labels:
        raise ValueError("labels must be nonempty")
    cfg = frozen.config
    for w, l in resolved_labels:
        expect = (cfg.horizon, cfg.feature_dim)
        if w.shape != expect or l.shape != expect:
            raise ValueError(f"segment shape {w.shape} does not match model shape {expect}")

    theta_before = frozen.flat.copy()
    d_e = cfg.ple_dim
    z_w = sample_prior(config.prior, d_e, config.seed).z
    z_l = sample_prior(config.prior, d_e, np.random.default_rng([config.seed, 1]).integers(2**62)).z
    winners = np.stack([w for w, _ in resolved_labels])
    losers = np.stack([l for _, l in resolved_labels])
    n_labels = len(resolved_labels)
    batch_size = min(config.batch_size, n_labels)

    rng = np.random.default_rng(config.seed)
    opt = Adam(2 * d_e, lr=config.learning_rate)
    zs = np.concatenate([z_w, z_l])
    history = np.empty(config.n_adapt)
    snapshots = {}
    tail = min(config.tail_average, config.n_adapt) if config.tail_average else 0
    tail_sums = {}  # snapshot step -> running sum over its tail window

    def tail_start(at_step):
        return at_step - (min(tail, at_step) if tail else 1)

    snap_points = sorted(set(snapshot_steps) | {config.n_adapt})

    for step in range(config.n_adapt):
        idx = rng.integers(0, n_labels, size=batch_size)
        ks = rng.integers(0, schedule.n_steps, size=batch_size)
        eps = rng.standard_normal((batch_size, cfg.horizon, cfg.feature_dim))
        ab = schedule.alpha_bar[ks][:, None, None]
        x_w = np.sqrt(ab) * winners[idx] + np.sqrt(1.0 - ab) * eps
        x_l = np.sqrt(ab) * losers[idx] + np.sqrt(1.0 - ab) * eps

        x = np.concatenate([x_w, x_l])
        kk = np.concatenate([ks, ks])
        tgt = np.concatenate([eps, eps])
        ctxs = np.concatenate(
            [np.broadcast_to(zs[:d_e], (batch_size, d_e)), np.broadcast_to(zs[d_e:], (batch_size, d_e))]
        )
        per_item, _, g_ctx = sq_err_and_grads(frozen, x, kk, tgt, ctxs)
        # joint loss: mean over labels of (winner term + loser term)
        loss = float(per_item[:batch_size].mean() + per_item[batch_size:].mean())
        if not np.isfinite(loss):
            raise FloatingPointError(f"inversion diverged at step {step}")
        history[step] = loss
        # sq_err_and_grads scales by 1/(2B); the joint loss averages each
        # group over B, so group sums need a factor of 2
        grad = 2.0 * np.concatenate([g_ctx[:batch_size].sum(axis=0), g_ctx[batch_size:].sum(axis=0)])
        opt.step(zs, grad)
        np.clip(zs, PLE_MARGIN, 1.0 - PLE_MARGIN, out=zs)
        for point in snap_points:
            if tail_start(point) <= step < point:
                tail_sums[point] = tail_sums.get(point, 0.0) + zs
        if step + 1 in snap_points:
            avg = tail_sums[step + 1] / (step + 1 - tail_start(step + 1))
            pair = (PLE(avg[:d_e].copy(), kind="winner"), PLE(avg[d_e:].copy(), kind="loser"))
            if step + 1 in snapshot_steps:
                snapshots[step + 1] = pair
            if step + 1 == config.n_adapt:
                final = pair
        if progress is not None:
            progress(step + 1, loss)

    assert np.array_equal(frozen.flat, theta_before), "frozen parameters were mutated"
    z_w_star, z_l_star = final
    if snapshot_steps:
        return z_w_star, z_l_star, history, snapshots
    return z_w_star, z_l_star, history
