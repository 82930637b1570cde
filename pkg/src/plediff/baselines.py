"""Comparison methods: reward-model guidance and preference finetuning.

Three baselines share the pretrained checkpoint with the inversion method:

* guided sampling -- a small feed-forward reward model is fitted to the
  pairwise labels with the Bradley-Terry loss and its input gradient
  steers classifier-guided sampling;
* full finetuning -- direct preference optimization applied to the
  denoiser, with the per-segment denoising error standing in for the
  log-likelihood and a frozen copy of the base model as reference;
* low-rank finetuning -- the same objective, but only rank-r factor
  pairs on selected weight matrices are trainable.
"""

import fnmatch
import math
from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserParams, forward_batch, sq_err_and_grads
from .optim import Adam
from .sampling import ancestral_sample_batch, classifier_guided_predict

# ---------------------------------------------------------------------------
# Bradley-Terry reward model


@dataclass
class RewardModelParams:
    """Two-hidden-layer tanh MLP over a flattened segment."""

    in_dim: int
    hidden: int
    flat: np.ndarray

    def views(self):
        h, d = self.hidden, self.in_dim
        sizes = [h * d, h, h * h, h, h, 1]
        shapes = [(h, d), (h,), (h, h), (h,), (1, h), (1,)]
        out, off = [], 0
        for n, shape in zip(sizes, shapes):
            out.append(self.flat[off : off + n].reshape(shape))
            off += n
        return out  # w1, b1, w2, b2, w3, b3

    def copy(self):
        return RewardModelParams(self.in_dim, self.hidden, self.flat.copy())


def init_reward_model(in_dim, hidden=64, seed=0):
    rng = np.random.default_rng(seed)
    sizes = [hidden * in_dim, hidden, hidden * hidden, hidden, hidden, 1]
    fans = [in_dim, None, hidden, None, hidden, None]
    flat = np.zeros(sum(sizes))
    off = 0
    for n, fan in zip(sizes, fans):
        if fan is not None:
            flat[off : off + n] = rng.standard_normal(n) / math.sqrt(fan)
        off += n
    return RewardModelParams(in_dim, hidden, flat)


def _rm_forward(rm, x):
    """x (B, in_dim) -> (scores (B,), cache)."""
    w1, b1, w2, b2, w3, b3 = rm.views()
    z1 = x @ w1.T + b1
    a1 = np.tanh(z1)
    z2 = a1 @ w2.T + b2
    a2 = np.tanh(z2)
    r = (a2 @ w3.T + b3)[:, 0]
    return r, (x, a1, a2)


def reward_scores(rm, segs):
    """Scalar return estimates for segment matrices (B, H, C) or (H, C)."""
    single = segs.ndim == 2
    x = segs.reshape(1 if single else segs.shape[0], -1)
    r, _ = _rm_forward(rm, x)
    return float(r[0]) if single else r


def _rm_backward(rm, cache, dr, need_input_grad=False):
    """Gradients of sum_i dr_i * r_i w.r.t. params (and optionally inputs)."""
    w1, b1, w2, b2, w3, b3 = rm.views()
    x, a1, a2 = cache
    g = RewardModelParams(rm.in_dim, rm.hidden, np.zeros_like(rm.flat))
    gw1, gb1, gw2, gb2, gw3, gb3 = g.views()
    dr = dr[:, None]
    gw3 += dr.T @ a2
    gb3 += dr.sum(axis=0)
    da2 = (dr @ w3) * (1.0 - a2 * a2)
    gw2 += da2.T @ a1
    gb2 += da2.sum(axis=0)
    da1 = (da2 @ w2) * (1.0 - a1 * a1)
    gw1 += da1.T @ x
    gb1 += da1.sum(axis=0)
    dx = da1 @ w1 if need_input_grad else None
    return g.flat, dx


def reward_input_grad(rm, segs):
    """d reward / d segment, shaped like the input; used for guidance."""
    single = segs.ndim == 2
    shape = segs.shape
    x = segs.reshape(1 if single else shape[0], -1)
    _, cache = _rm_forward(rm, x)
    _, dx = _rm_backward(rm, cache, np.ones(x.shape[0]), need_input_grad=True)
    return dx.reshape(shape)


def _log_sigmoid(x):
    # stable -softplus(-x)
    out = np.where(x > 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))
    return out


def bt_loss(rm, winner, loser):
    """Bradley-Terry negative log-likelihood of one labeled pair."""
    margin = reward_scores(rm, winner) - reward_scores(rm, loser)
    return float(-_log_sigmoid(np.array([margin]))[0])


def bt_loss_and_grads(rm, winners, losers):
    """Mean BT loss over stacked (B, H, C) winner/loser segments + grads."""
    b = winners.shape[0]
    xw = winners.reshape(b, -1)
    xl = losers.reshape(b, -1)
    rw, cw = _rm_forward(rm, xw)
    rl, cl = _rm_forward(rm, xl)
    margin = rw - rl
    loss = float(-_log_sigmoid(margin).mean())
    # d(-log sigmoid(m))/dm = -sigmoid(-m)
    dm = -1.0 / (1.0 + np.exp(margin)) / b
    gw, _ = _rm_backward(rm, cw, dm)
    gl, _ = _rm_backward(rm, cl, -dm)
    return loss, gw + gl


@dataclass
class RewardTrainConfig:
    n_updates: int = 1500
    batch_size: int = 32
    learning_rate: float = 1e-3
    hidden: int = 64
    holdout_frac: float = 0.2
    seed: int = 0


def train_reward_model(resolved_labels, config: RewardTrainConfig):
    """Fit the reward model to (winner, loser) matrices.

    Returns (params, heldout_accuracy, loss_history).  The holdout split is
    deterministic in the seed; with fewer than five labels everything is
    used for training and the accuracy is measured on the training set.
    """
    if not resolved_labels:
        raise ValueError("labels must be nonempty")
    rng = np.random.default_rng(config.seed)
    n = len(resolved_labels)
    perm = rng.permutation(n)
    n_hold = int(config.holdout_frac * n) if n >= 5 else 0
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    winners = np.stack([w for w, _ in resolved_labels])
    losers = np.stack([l for _, l in resolved_labels])

    rm = init_reward_model(int(np.prod(winners.shape[1:])), config.hidden, config.seed)
    opt = Adam(rm.flat.size, lr=config.learning_rate)
    history = np.empty(config.n_updates)
    for step in range(config.n_updates):
        idx = train_idx[rng.integers(0, len(train_idx), size=min(config.batch_size, len(train_idx)))]
        loss, grad = bt_loss_and_grads(rm, winners[idx], losers[idx])
        if not np.isfinite(loss):
            raise FloatingPointError(f"reward-model training diverged at step {step}")
        history[step] = loss
        opt.step(rm.flat, grad)

    eval_idx = hold_idx if n_hold else train_idx
    acc = pairwise_accuracy(rm, winners[eval_idx], losers[eval_idx])
    return rm, acc, history


def pairwise_accuracy(rm, winners, losers):
    rw = reward_scores(rm, winners)
    rl = reward_scores(rm, losers)
    wins = (rw > rl).astype(float)
    wins[rw == rl] = 0.5
    return float(wins.mean())


def guided_sample_batch(frozen, rm, schedule, weights, shape, n, seed, constraints=None):
    """Classifier-guided ancestral sampling with the reward-model gradient."""

    def predict(x, k):
        return classifier_guided_predict(frozen, x, k, lambda xx: reward_input_grad(rm, xx), weights.v, schedule)

    return ancestral_sample_batch(predict, schedule, shape, n, seed, constraints)


def guided_sample(frozen, rm, schedule, weights, seed, constraints=None):
    cfg = frozen.config
    shape = (cfg.horizon, cfg.feature_dim)
    return guided_sample_batch(frozen, rm, schedule, weights, shape, 1, seed, constraints)[0]


# ---------------------------------------------------------------------------
# preference finetuning (full and low-rank)


@dataclass
class FinetuneConfig:
    beta: float = 5000.0
    n_updates: int = 5000
    batch_size: int = 16
    learning_rate: float = 1e-4
    rank: int = 8
    targets: tuple = ("blocks.*.conv1.w", "blocks.*.conv2.w")
    seed: int = 0


def _dpo_item_weights(delta, beta, batch_size):
    # d/d_delta of mean_i -log sigmoid(-beta * delta_i)
    with np.errstate(over="ignore"):  # saturates to 0/1 correctly
        return beta * (1.0 / (1.0 + np.exp(-beta * delta))) / batch_size


def _dpo_batch(rng, winners, losers, schedule, cfg, batch_size):
    n = winners.shape[0]
    idx = rng.integers(0, n, size=batch_size)
    ks = rng.integers(0, schedule.n_steps, size=batch_size)
    eps = rng.standard_normal((batch_size, cfg.horizon, cfg.feature_dim))
    ab = schedule.alpha_bar[ks][:, None, None]
    x_w = np.sqrt(ab) * winners[idx] + np.sqrt(1.0 - ab) * eps
    x_l = np.sqrt(ab) * losers[idx] + np.sqrt(1.0 - ab) * eps
    return x_w, x_l, ks, eps


def _per_item_sq_err(params, x, ks, eps):
    ctxs = np.broadcast_to(params.null_context, (x.shape[0], params.config.ple_dim))
    pred, cache = forward_batch(params, x, ks, ctxs)
    resid = pred - eps
    return np.einsum("bhc,bhc->b", resid, resid), cache, resid, ctxs


def _dpo_step(params, ref, winners, losers, schedule, config, rng):
    """One DPO update; returns (loss, grad_flat)."""
    cfg = params.config
    b = config.batch_size
    x_w, x_l, ks, eps = _dpo_batch(rng, winners, losers, schedule, cfg, b)
    x = np.concatenate([x_w, x_l])
    kk = np.concatenate([ks, ks])
    tgt = np.concatenate([eps, eps])

    ref_err, _, _, _ = _per_item_sq_err(ref, x, kk, tgt)
    theta_err, _, _, ctxs = _per_item_sq_err(params, x, kk, tgt)
    delta = (theta_err[:b] - ref_err[:b]) - (theta_err[b:] - ref_err[b:])
    loss = float(np.mean(-_log_sigmoid(-config.beta * delta)))
    c = _dpo_item_weights(delta, config.beta, b)
    # gradient of sum_i c_i * (err_w_i - err_l_i); sq_err_and_grads computes
    # the mean over the stacked 2b batch, so weights are scaled by 2b
    item_w = np.concatenate([c, -c]) * (2 * b)
    _, g_flat, _ = sq_err_and_grads(params, x, kk, tgt, ctxs, item_weights=item_w)
    return loss, g_flat


def finetune_full(base, resolved_labels, schedule, config: FinetuneConfig, snapshot_steps=()):
    """DPO finetuning of every parameter, against a frozen reference copy.

    With no labels this is a no-op (zero updates).  Returns
    (params, loss_history, snapshots).
    """
    params = base.copy()
    if not resolved_labels:
        return params, np.empty(0), {}
    ref = base.copy()
    winners = np.stack([w for w, _ in resolved_labels])
    losers = np.stack([l for _, l in resolved_labels])
    rng = np.random.default_rng(config.seed)
    opt = Adam(params.flat.size, lr=config.learning_rate)
    history = np.empty(config.n_updates)
    snapshots = {}
    for step in range(config.n_updates):
        loss, g_flat = _dpo_step(params, ref, winners, losers, schedule, config, rng)
        if not np.isfinite(loss):
            raise FloatingPointError(f"finetuning diverged at step {step}")
        history[step] = loss
        opt.step(params.flat, g_flat)
        if step + 1 in snapshot_steps:
            snapshots[step + 1] = params.copy()
    return params, history, snapshots


@dataclass
class LowRankDelta:
    name: str
    b: np.ndarray  # (m, r), zero at init
    a: np.ndarray  # (r, n)

    @property
    def update(self):
        return self.b @ self.a


def _lora_targets(base, rank, patterns):
    """Resolve target weight matrices; a too-small explicit target is an error."""
    chosen = []
    for name, shape, off in base.layout:
        if not name.endswith(".w"):
            continue
        if not any(fnmatch.fnmatch(name, pat) for pat in patterns):
            continue
        m, n = shape[0], int(np.prod(shape[1:]))
        if rank > min(m, n):
            raise ValueError(f"rank {rank} exceeds min dim {min(m, n)} of target {name}")
        chosen.append((name, (m, n), off))
    if not chosen:
        raise ValueError(f"no LoRA targets matched patterns {patterns}")
    return chosen


def init_lora(base, rank, patterns, seed):
    rng = np.random.default_rng(seed)
    deltas = {}
    for name, (m, n), _ in _lora_targets(base, rank, patterns):
        deltas[name] = LowRankDelta(
            name=name, b=np.zeros((m, rank)), a=rng.standard_normal((rank, n)) / math.sqrt(n)
        )
    return deltas


def lora_parameter_count(deltas):
    return sum(d.b.size + d.a.size for d in deltas.values())


def apply_deltas(base, deltas):
    """Effective parameters: base with W + B@A on every adapted matrix."""
    params = base.copy()
    for name, delta in deltas.items():
        view = params.view(name)
        view += delta.update.reshape(view.shape)
    return params


def finetune_lora(base, resolved_labels, schedule, config: FinetuneConfig, snapshot_steps=()):
    """DPO finetuning of low-rank factors only; the base stays untouched.

    Returns (deltas, loss_history, snapshots) where snapshots hold copies of
    the deltas at the requested steps.
    """
    deltas = init_lora(base, config.rank, config.targets, config.seed)
    if not resolved_labels:
        return deltas, np.empty(0), {}
    winners = np.stack([w for w, _ in resolved_labels])
    losers = np.stack([l for _, l in resolved_labels])
    rng = np.random.default_rng(config.seed)
    names = sorted(deltas)
    sizes = [(deltas[n].b.size, deltas[n].a.size) for n in names]
    opt = Adam(sum(b + a for b, a in sizes), lr=config.learning_rate)
    history = np.empty(config.n_updates)
    snapshots = {}
    base_flat = base.flat.copy()

    for step in range(config.n_updates):
        params = apply_deltas(base, deltas)
        loss, g_flat = _dpo_step(params, base, winners, losers, schedule, config, rng)
        if not np.isfinite(loss):
            raise FloatingPointError(f"LoRA finetuning diverged at step {step}")
        history[step] = loss
        gp = DenoiserParams(base.config, g_flat, base.layout)
        grad_vec = []
        for n in names:
            d = deltas[n]
            g_w = gp.view(n).reshape(d.b.shape[0], -1)
            grad_vec.append((g_w @ d.a.T).ravel())  # dL/dB
            grad_vec.append((d.b.T @ g_w).ravel())  # dL/dA
        vec = np.concatenate([deltas[n].b.ravel() for n in names] + [deltas[n].a.ravel() for n in names])
        # keep (B..., A...) ordering consistent for optimizer state
        gvec = np.concatenate(
            [grad_vec[2 * i] for i in range(len(names))] + [grad_vec[2 * i + 1] for i in range(len(names))]
        )
        opt.step(vec, gvec)
        off = 0
        for n in names:
            d = deltas[n]
            d.b[:] = vec[off : off + d.b.size].reshape(d.b.shape)
            off += d.b.size
        for n in names:
            d = deltas[n]
            d.a[:] = vec[off : off + d.a.size].reshape(d.a.shape)
            off += d.a.size
        if step + 1 in snapshot_steps:
            snapshots[step + 1] = {n: LowRankDelta(n, deltas[n].b.copy(), deltas[n].a.copy()) for n in names}

    assert np.array_equal(base.flat, base_flat), "base parameters were mutated"
    return deltas, history, snapshots
