"""Noise-prediction network: parameterization, evaluation and exact gradients.

The denoiser eps(tau_k, ctx, k) maps a noised H x (S+A) trajectory segment,
a diffusion step index and a context embedding to a noise estimate of the
same shape.  Parameters live in a single flat float64 vector described by a
layout table, which keeps checkpointing, optimizer state and freeze checks
trivial.  The learned null-context embedding (used for unconditional
prediction) is stored as the last layout entry.

All gradients are hand-derived reverse-mode derivatives computed by the
kernel backend; they are validated against central finite differences in
the test suite.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass(frozen=True)
class DenoiserConfig:
    horizon: int = 16
    state_dim: int = 2
    action_dim: int = 2
    ple_dim: int = 16
    hidden_width: int = 128
    n_blocks: int = 1
    time_embed_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError(f"horizon must be >= 2, got {self.horizon}")
        for name in ("state_dim", "action_dim", "ple_dim", "hidden_width", "n_blocks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be an even integer >= 2")

    @property
    def feature_dim(self):
        return self.state_dim + self.action_dim

    @property
    def embed_dim(self):
        return self.time_embed_dim + self.ple_dim


def build_layout(cfg: DenoiserConfig):
    """Ordered (name, shape, offset) table for the flat parameter vector.

    Conv weights are (out_ch, 3, in_ch): kernel tap major, matching the
    im2col layout used by the kernels.
    """
    c, w, e = cfg.feature_dim, cfg.hidden_width, cfg.embed_dim
    entries = [("conv_in.w", (w, 3, c)), ("conv_in.b", (w,))]
    for i in range(cfg.n_blocks):
        entries += [
            (f"blocks.{i}.film.w", (2 * w, e)),
            (f"blocks.{i}.film.b", (2 * w,)),
            (f"blocks.{i}.conv1.w", (w, 3, w)),
            (f"blocks.{i}.conv1.b", (w,)),
            (f"blocks.{i}.conv2.w", (w, 3, w)),
            (f"blocks.{i}.conv2.b", (w,)),
        ]
    entries += [
        ("conv_out.w", (c, 3, w)),
        ("conv_out.b", (c,)),
        ("null_context", (cfg.ple_dim,)),
    ]
    layout, offset = [], 0
    for name, shape in entries:
        layout.append((name, shape, offset))
        offset += int(np.prod(shape))
    return layout, offset


@dataclass
class DenoiserParams:
    config: DenoiserConfig
    flat: np.ndarray
    layout: list = field(repr=False)

    def view(self, name):
        """Writable reshaped view into the flat vector."""
        for n, shape, off in self.layout:
            if n == name:
                return self.flat[off : off + int(np.prod(shape))].reshape(shape)
        raise KeyError(name)

    @property
    def null_context(self):
        return self.view("null_context")

    def copy(self):
        return DenoiserParams(self.config, self.flat.copy(), self.layout)

    def kernel_weights(self):
        """Weight views grouped the way the kernel backends consume them."""
        cfg = self.config
        wdict = {
            "win": self.view("conv_in.w").reshape(cfg.hidden_width, -1),
            "bin": self.view("conv_in.b"),
            "wout": self.view("conv_out.w").reshape(cfg.feature_dim, -1),
            "bout": self.view("conv_out.b"),
            "wf": [],
            "bf": [],
            "wc1": [],
            "bc1": [],
            "wc2": [],
            "bc2": [],
        }
        for i in range(cfg.n_blocks):
            wdict["wf"].append(self.view(f"blocks.{i}.film.w"))
            wdict["bf"].append(self.view(f"blocks.{i}.film.b"))
            wdict["wc1"].append(self.view(f"blocks.{i}.conv1.w").reshape(cfg.hidden_width, -1))
            wdict["bc1"].append(self.view(f"blocks.{i}.conv1.b"))
            wdict["wc2"].append(self.view(f"blocks.{i}.conv2.w").reshape(cfg.hidden_width, -1))
            wdict["bc2"].append(self.view(f"blocks.{i}.conv2.b"))
        return wdict


def init_params(cfg: DenoiserConfig) -> DenoiserParams:
    """Deterministic initialization from cfg.seed.

    Weights are zero-mean normal with scale 1/fan_in, biases zero and the
    null context starts at 0.5 in every coordinate.
    """
    layout, total = build_layout(cfg)
    rng = np.random.default_rng(cfg.seed)
    flat = np.zeros(total)
    params = DenoiserParams(cfg, flat, layout)
    for name, shape, off in layout:
        if name == "null_context":
            flat[off : off + cfg.ple_dim] = 0.5
        elif name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            n = int(np.prod(shape))
            flat[off : off + n] = rng.standard_normal(n) / fan_in
        # biases stay zero
    return params


def time_embedding(ks, dim):
    """Sinusoidal embedding of diffusion step indices; (B,) -> (B, dim)."""
    half = dim // 2
    if half > 1:
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    else:
        freqs = np.ones(1)
    ang = np.asarray(ks, dtype=float)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _check_traj(cfg, tau, name="tau_k"):
    tau = np.asarray(tau, dtype=float)
    if tau.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got {tau.ndim}-D")
    if tau.shape[0] != cfg.horizon:
        raise ValueError(f"{name} has {tau.shape[0]} timesteps, expected horizon {cfg.horizon}")
    if tau.shape[1] != cfg.feature_dim:
        raise ValueError(
            f"{name} has feature dim {tau.shape[1]}, expected S+A = {cfg.feature_dim}"
        )
    return tau


def resolve_ctx(params, ctx):
    """None is the null sentinel: substitute the learned null context."""
    if ctx is None:
        return params.null_context.copy()
    ctx = np.asarray(ctx, dtype=float).ravel()
    if ctx.shape[0] != params.config.ple_dim:
        raise ValueError(
            f"ctx has length {ctx.shape[0]}, expected ple_dim {params.config.ple_dim}"
        )
    return ctx


def forward_batch(params, x, ks, ctxs):
    """Batch evaluation; x (B,H,C), ks (B,), ctxs (B,d_e) -> (eps, cache)."""
    e = np.ascontiguousarray(
        np.concatenate([time_embedding(ks, params.config.time_embed_dim), ctxs], axis=1)
    )
    return kernels.forward_batch(params.kernel_weights(), np.ascontiguousarray(x), e)


def backward_batch(params, cache, d_eps):
    """Gradients of a cached forward pass; returns (grad_flat, grad_ctx)."""
    grads, d_e = kernels.backward_batch(params.kernel_weights(), cache, np.ascontiguousarray(d_eps))
    g_flat = np.zeros_like(params.flat)
    gp = DenoiserParams(params.config, g_flat, params.layout)
    cfg = params.config
    gp.view("conv_in.w").reshape(cfg.hidden_width, -1)[:] = grads["win"]
    gp.view("conv_in.b")[:] = grads["bin"]
    gp.view("conv_out.w").reshape(cfg.feature_dim, -1)[:] = grads["wout"]
    gp.view("conv_out.b")[:] = grads["bout"]
    for i in range(cfg.n_blocks):
        gp.view(f"blocks.{i}.film.w")[:] = grads["wf"][i]
        gp.view(f"blocks.{i}.film.b")[:] = grads["bf"][i]
        gp.view(f"blocks.{i}.conv1.w").reshape(cfg.hidden_width, -1)[:] = grads["wc1"][i]
        gp.view(f"blocks.{i}.conv1.b")[:] = grads["bc1"][i]
        gp.view(f"blocks.{i}.conv2.w").reshape(cfg.hidden_width, -1)[:] = grads["wc2"][i]
        gp.view(f"blocks.{i}.conv2.b")[:] = grads["bc2"][i]
    g_ctx = d_e[:, cfg.time_embed_dim :]
    return g_flat, g_ctx


def denoise(params, tau_k, k, ctx=None):
    """Single-segment noise prediction; ctx=None uses the null context."""
    cfg = params.config
    tau_k = _check_traj(cfg, tau_k)
    if not 0 <= int(k):
        raise ValueError(f"step index k must be >= 0, got {k}")
    ctx = resolve_ctx(params, ctx)
    eps, _ = forward_batch(params, tau_k[None], np.array([int(k)]), ctx[None])
    return eps[0]


def sq_err_and_grads(params, x_k, ks, eps_target, ctxs, item_weights=None):
    """Per-item squared denoising errors and gradients of their weighted mean.

    Returns (per_item, grad_flat, grad_ctx) where per_item[i] is
    ||eps_target_i - eps(x_k_i, ctx_i, k_i)||^2 and the gradients are of
    mean_i item_weights[i] * per_item[i] (weights default to 1).
    """
    b = x_k.shape[0]
    pred, cache = forward_batch(params, x_k, ks, ctxs)
    resid = pred - eps_target
    per_item = np.einsum("bhc,bhc->b", resid, resid)
    if item_weights is None:
        d_eps = (2.0 / b) * resid
    else:
        d_eps = (2.0 / b) * item_weights[:, None, None] * resid
    g_flat, g_ctx = backward_batch(params, cache, d_eps)
    return per_item, g_flat, g_ctx


def loss_and_grads(params, batch, schedule):
    """DDPM regression loss and exact gradients over a batch.

    ``batch`` is a list of (tau_0, k, epsilon, ctx-or-None).  Each item is
    noised with the closed-form forward process at its step k, the loss is
    the batch mean of the squared residual norms, and gradients are
    returned for all parameters and for each context vector.  When ctx is
    the null sentinel, its gradient also accumulates into the null-context
    rows of grad_params.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    cfg = params.config
    b = len(batch)
    x_k = np.empty((b, cfg.horizon, cfg.feature_dim))
    ks = np.empty(b, dtype=np.int64)
    eps = np.empty_like(x_k)
    ctxs = np.empty((b, cfg.ple_dim))
    null_items = []
    for i, (tau_0, k, epsilon, ctx) in enumerate(batch):
        tau_0 = _check_traj(cfg, tau_0, "tau_0")
        epsilon = _check_traj(cfg, epsilon, "epsilon")
        if not 0 <= int(k) < schedule.n_steps:
            raise ValueError(f"step index {k} outside [0, {schedule.n_steps})")
        ks[i] = int(k)
        eps[i] = epsilon
        ab = schedule.alpha_bar[ks[i]]
        x_k[i] = math.sqrt(ab) * tau_0 + math.sqrt(1.0 - ab) * epsilon
        if ctx is None:
            null_items.append(i)
        ctxs[i] = resolve_ctx(params, ctx)

    per_item, g_flat, g_ctx = sq_err_and_grads(params, x_k, ks, eps, ctxs)
    loss = float(per_item.mean())
    if null_items:
        null_off = next(off for n, _, off in params.layout if n == "null_context")
        for i in null_items:
            g_flat[null_off : null_off + cfg.ple_dim] += g_ctx[i]
    return loss, g_flat, [g_ctx[i].copy() for i in range(b)]
