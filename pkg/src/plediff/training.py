"""Reward-free pretraining of the conditional denoiser and the mapper.

Each update draws a batch of episodes, maps every masked full trajectory to
its placeholder embedding, samples a training sub-segment from the hidden
window, noises it to a uniformly drawn step and regresses the injected
noise.  With probability ``context_dropout_p`` an item's embedding is
replaced by the learned null context, which trains the unconditional path
needed for classifier-free guidance.  The denoiser weights and the mapper
are optimized jointly.
"""

from dataclasses import dataclass

import numpy as np

from . import denoiser as dn
from .config import RunConfig
from .envdata import fit_normalizer, full_matrix
from .optim import Adam
from .ple import hidden_window, init_mapper
from .schedule import make_cosine_schedule


@dataclass
class PretrainResult:
    params: "dn.DenoiserParams"
    mapper: object
    normalizer: object
    schedule: object
    loss_history: np.ndarray
    config: RunConfig


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def pretrain(corpus, cfg: RunConfig, progress=None) -> PretrainResult:
    """Train denoiser + mapper on a corpus; deterministic per cfg.seed."""
    model_cfg = cfg.model
    h, c = model_cfg.horizon, model_cfg.feature_dim
    length = corpus[0].length
    if any(tr.length != length for tr in corpus):
        raise ValueError("corpus episodes have inconsistent lengths")
    if full_matrix(corpus[0]).shape[1] != c:
        raise ValueError(
            f"corpus feature dim {full_matrix(corpus[0]).shape[1]} does not match model S+A={c}"
        )

    normalizer = fit_normalizer(corpus)
    fulls = np.stack([normalizer.normalize(full_matrix(tr)) for tr in corpus])
    n_eps = fulls.shape[0]

    params = dn.init_params(model_cfg)
    mapper = init_mapper(c, model_cfg.ple_dim, length, seed=model_cfg.seed + 1)
    schedule = make_cosine_schedule(cfg.schedule_steps)
    lo, stop = hidden_window(mapper.mask)
    if stop - lo < h:
        raise ValueError(f"hidden window {stop - lo} too short for horizon {h}")

    null_off = next(off for n, _, off in params.layout if n == "null_context")
    d_e = model_cfg.ple_dim
    vis = mapper.mask
    rng = np.random.default_rng(cfg.seed)
    opt_theta = Adam(params.flat.size, lr=cfg.pretrain.learning_rate)
    opt_mapper = Adam(mapper.w.size + mapper.b.size, lr=cfg.pretrain.mapper_learning_rate)
    b = cfg.pretrain.batch_size
    history = np.empty(cfg.pretrain.n_updates)

    for step in range(cfg.pretrain.n_updates):
        ep = rng.integers(0, n_eps, size=b)
        starts = rng.integers(lo, stop - h + 1, size=b)
        batch_fulls = fulls[ep]
        mean_feat = batch_fulls[:, vis].mean(axis=1)
        z = _sigmoid(mean_feat @ mapper.w + mapper.b)
        drop = rng.random(b) < cfg.pretrain.context_dropout_p
        ctxs = np.where(drop[:, None], params.null_context, z)

        tau0 = np.empty((b, h, c))
        for i in range(b):
            tau0[i] = batch_fulls[i, starts[i] : starts[i] + h]
        ks = rng.integers(0, schedule.n_steps, size=b)
        eps = rng.standard_normal((b, h, c))
        ab = schedule.alpha_bar[ks][:, None, None]
        x_k = np.sqrt(ab) * tau0 + np.sqrt(1.0 - ab) * eps

        per_item, g_flat, g_ctx = dn.sq_err_and_grads(params, x_k, ks, eps, ctxs)
        loss = float(per_item.mean())
        if not np.isfinite(loss):
            raise FloatingPointError(f"pretraining diverged at step {step}")
        history[step] = loss

        # dropped items train the null context; the rest train the mapper
        if drop.any():
            g_flat[null_off : null_off + d_e] += g_ctx[drop].sum(axis=0)
        live = ~drop
        if live.any():
            dz_pre = g_ctx[live] * z[live] * (1.0 - z[live])
            g_w = mean_feat[live].T @ dz_pre
            g_b = dz_pre.sum(axis=0)
            vec = np.concatenate([mapper.w.ravel(), mapper.b])
            opt_mapper.step(vec, np.concatenate([g_w.ravel(), g_b]))
            mapper.w[:] = vec[: mapper.w.size].reshape(mapper.w.shape)
            mapper.b[:] = vec[mapper.w.size :]
        else:
            # keep optimizer step counts aligned with the update index
            vec = np.concatenate([mapper.w.ravel(), mapper.b])
            opt_mapper.step(vec, np.zeros_like(vec))

        opt_theta.step(params.flat, g_flat)
        if progress is not None:
            progress(step + 1, loss)

    return PretrainResult(params, mapper, normalizer, schedule, history, cfg)
