"""Ancestral sampling and the guidance modes.

Three ways of steering the reverse chain are supported, all expressed as
combinations of denoiser evaluations:

* classifier-free guidance:   (1+v) * eps_cond - v * eps_null
* dual winner/loser guidance: first push away from the loser embedding,
  (1+u) * eps_w - u * eps_l, then apply classifier-free guidance with
  strength v against the null prediction
* classifier guidance:        eps_null - sqrt(1 - ab_k) * v * grad

The affine combinators are kept as standalone functions so their algebra is
testable with scalar probes, independently of the network.
"""

import math
from dataclasses import dataclass

import numpy as np

from .denoiser import forward_batch, resolve_ctx


@dataclass(frozen=True)
class GuidanceWeights:
    v: float = 1.2  # guidance strength against the null prediction
    u: float = 0.02  # loser-embedding influence

    def __post_init__(self):
        # stored verbatim; negative values are a caller bug, not clamped
        if self.v < 0 or self.u < 0:
            raise ValueError(f"guidance weights must be >= 0, got v={self.v}, u={self.u}")


def combine_cfg(eps_cond, eps_null, v):
    return (1.0 + v) * eps_cond - v * eps_null


def combine_dual(eps_w, eps_l, eps_null, u, v):
    return combine_cfg(combine_cfg(eps_w, eps_l, u), eps_null, v)


def combine_classifier(eps_uncond, grad, alpha_bar_k, v):
    return eps_uncond - math.sqrt(1.0 - alpha_bar_k) * v * grad


def predict_batch(params, x, k, ctx):
    """Denoiser evaluation on a single x or a stacked batch sharing (k, ctx)."""
    single = x.ndim == 2
    xb = x[None] if single else x
    b = xb.shape[0]
    ctx = resolve_ctx(params, ctx)
    eps, _ = forward_batch(params, xb, np.full(b, int(k)), np.broadcast_to(ctx, (b, ctx.shape[0])))
    return eps[0] if single else eps




def cfg_predict(params, x_k, k, z, v):
    """Classifier-free guided noise prediction."""
    return combine_cfg(predict_batch(params, x_k, k, z), predict_batch(params, x_k, k, None), v)


def dual_cfg_predict(params, x_k, k, z_w, z_l, weights: GuidanceWeights):
    """Two-stage guided prediction using winner and loser embeddings."""
    eps_w = predict_batch(params, x_k, k, z_w)
    eps_l = predict_batch(params, x_k, k, z_l)
    eps_null = predict_batch(params, x_k, k, None)
    return combine_dual(eps_w, eps_l, eps_null, weights.u, weights.v)


def classifier_guided_predict(params, x_k, k, reward_grad, v, schedule):
    """Unconditional prediction steered by a reward-model gradient."""
    eps = predict_batch(params, x_k, k, None)
    grad = np.asarray(reward_grad(x_k), dtype=float)
    if grad.shape != np.shape(x_k):
        raise ValueError(f"reward_grad returned shape {grad.shape}, expected {np.shape(x_k)}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite reward gradient at step {k}")
    return combine_classifier(eps, grad, schedule.alpha_bar[int(k)], v)


def _posterior_sigma(schedule):
    """Std-dev of the reverse-chain posterior noise at each step (sigma_0 = 0)."""
    ab = schedule.alpha_bar
    sig2 = np.zeros(schedule.n_steps)
    sig2[1:] = (1.0 - ab[:-1]) / (1.0 - ab[1:]) * (1.0 - schedule.alpha[1:])
    return np.sqrt(sig2)


def ancestral_sample_batch(predict, schedule, shape, n, rng_seed, constraints=None):
    """Run n reverse chains jointly; predict maps (x (n,H,C), k) -> eps.

    Starts from standard normal noise, applies the posterior-mean update
    x_{k-1} = (x_k - (1-a_k)/sqrt(1-ab_k) * eps) / sqrt(a_k) + sigma_k z
    and re-imposes any fixed-entry constraints after every step.
    Deterministic given rng_seed.
    """
    rng = np.random.default_rng(rng_seed)
    sigma = _posterior_sigma(schedule)
    x = rng.standard_normal((n, *shape))
    for k in range(schedule.n_steps - 1, -1, -1):
        eps = np.asarray(predict(x, k), dtype=float)
        if not np.all(np.isfinite(eps)):
            raise FloatingPointError(f"non-finite noise prediction at step {k}")
        a, ab = schedule.alpha[k], schedule.alpha_bar[k]
        x = (x - (1.0 - a) / math.sqrt(1.0 - ab) * eps) / math.sqrt(a)
        if k > 0:
            x += sigma[k] * rng.standard_normal(x.shape)
        if constraints is not None:
            mask, values = constraints
            x[:, mask] = values[mask]
    return x


def ancestral_sample(predict, schedule, shape, rng_seed, constraints=None):
    """Single-trajectory ancestral sampling; predict maps (x (H,C), k) -> eps."""

    def batched(xb, k):
        return np.asarray(predict(xb[0], k))[None]

    return ancestral_sample_batch(batched, schedule, shape, 1, rng_seed, constraints)[0]
