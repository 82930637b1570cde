"""Reference numpy implementation of the denoiser kernels.

The network is a residual 1-D temporal convolution stack (kernel size 3,
zero padding) over the horizon axis.  Each residual block applies a learned
per-channel scale/shift computed from the conditioning vector ``e`` (time
embedding concatenated with the context embedding):

    h0    = conv_in(x)
    block: a1 = silu(h)
           u  = conv1(a1)
           f  = u * (1 + scale) + shift          # scale/shift = affine(e)
           a2 = silu(f)
           h  = h + conv2(a2)
    eps   = conv_out(silu(h))

Convolution weights are stored as ``(out_ch, 3 * in_ch)`` with the kernel
tap as the major axis of the second dimension, matching the im2col layout
``[x[t-1], x[t], x[t+1]]``.

``backward_batch`` is the hand-derived reverse-mode differential of
``forward_batch``; it returns exact gradients for every weight and for the
conditioning vector.  The sigmoid of every activation input is cached by
the forward pass, so the backward pass is exp-free:
silu(x) = x * sig(x) and silu'(x) = sig(x) * (1 + x * (1 - sig(x))).
All arrays are float64 and C-contiguous.
"""

import numpy as np


def sigmoid(x):
    with np.errstate(over="ignore"):  # exp overflow saturates correctly
        return 1.0 / (1.0 + np.exp(-x))


def silu(x):
    return x * sigmoid(x)


def silu_grad(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def _silu_grad_cached(x, s):
    return s * (1.0 + x * (1.0 - s))


def im2col(a):
    """(B, H, C) -> (B, H, 3C) with zero padding at both ends of the H axis."""
    b, h, c = a.shape
    out = np.zeros((b, h, 3 * c))
    out[:, 1:, :c] = a[:, :-1]
    out[:, :, c : 2 * c] = a
    out[:, :-1, 2 * c :] = a[:, 1:]
    return out


def col2im(d):
    """Adjoint of :func:`im2col`: scatter (B, H, 3C) back to (B, H, C)."""
    b, h, c3 = d.shape
    c = c3 // 3
    out = d[:, :, c : 2 * c].copy()
    out[:, :-1] += d[:, 1:, :c]
    out[:, 1:] += d[:, :-1, 2 * c :]
    return out


def forward_batch(weights, x, e):
    """Evaluate the denoiser on a batch.

    Parameters
    ----------
    weights : dict with keys win/bin, wout/bout and per-block lists
        wf/bf (conditioning affine), wc1/bc1, wc2/bc2.
    x : (B, H, C) noised trajectories.
    e : (B, E) conditioning vectors (time embedding + context).

    Returns (eps_pred, cache); the cache feeds :func:`backward_batch`.
    """
    w = weights["bin"].shape[0]
    xc = im2col(x)
    hcur = xc @ weights["win"].T + weights["bin"]

    hin, us, ss, fs, sig_hin, sig_f = [], [], [], [], [], []
    for wf, bf, wc1, bc1, wc2, bc2 in zip(
        weights["wf"], weights["bf"], weights["wc1"], weights["bc1"], weights["wc2"], weights["bc2"]
    ):
        film = e @ wf.T + bf
        s, sh = film[:, :w], film[:, w:]
        sg1 = sigmoid(hcur)
        u = im2col(hcur * sg1) @ wc1.T + bc1
        f = u * (1.0 + s)[:, None, :] + sh[:, None, :]
        sg2 = sigmoid(f)
        hnew = hcur + im2col(f * sg2) @ wc2.T + bc2
        hin.append(hcur)
        us.append(u)
        ss.append(s)
        fs.append(f)
        sig_hin.append(sg1)
        sig_f.append(sg2)
        hcur = hnew

    sg3 = sigmoid(hcur)
    eps = im2col(hcur * sg3) @ weights["wout"].T + weights["bout"]
    cache = {
        "xc": xc,
        "e": e,
        "hin": hin,
        "u": us,
        "s": ss,
        "f": fs,
        "hlast": hcur,
        "sig_hin": sig_hin,
        "sig_f": sig_f,
        "sig_hlast": sg3,
    }
    return eps, cache


def backward_batch(weights, cache, d_eps):
    """Backpropagate ``d_eps`` through a cached forward pass.

    Returns (grads, d_e) where ``grads`` mirrors the structure of
    ``weights`` and ``d_e`` is the gradient w.r.t. the conditioning vector.
    """
    e = cache["e"]
    n_blocks = len(weights["wf"])

    grads = {
        "wf": [None] * n_blocks,
        "bf": [None] * n_blocks,
        "wc1": [None] * n_blocks,
        "bc1": [None] * n_blocks,
        "wc2": [None] * n_blocks,
        "bc2": [None] * n_blocks,
    }

    def mat(t3):  # (B, H, C) -> (B*H, C)
        return t3.reshape(-1, t3.shape[-1])

    hlast, sg3 = cache["hlast"], cache["sig_hlast"]
    a3c = im2col(hlast * sg3)
    grads["wout"] = mat(d_eps).T @ mat(a3c)
    grads["bout"] = d_eps.sum(axis=(0, 1))
    da3 = col2im(d_eps @ weights["wout"])
    dh = da3 * _silu_grad_cached(hlast, sg3)
    d_e = np.zeros_like(e)

    for bi in range(n_blocks - 1, -1, -1):
        h_in, u, s, f = cache["hin"][bi], cache["u"][bi], cache["s"][bi], cache["f"][bi]
        sg1, sg2 = cache["sig_hin"][bi], cache["sig_f"][bi]
        du2 = dh
        a2c = im2col(f * sg2)
        grads["wc2"][bi] = mat(du2).T @ mat(a2c)
        grads["bc2"][bi] = du2.sum(axis=(0, 1))
        da2 = col2im(du2 @ weights["wc2"][bi])
        df = da2 * _silu_grad_cached(f, sg2)

        ds = (df * u).sum(axis=1)
        dsh = df.sum(axis=1)
        du = df * (1.0 + s)[:, None, :]
        dfilm = np.concatenate([ds, dsh], axis=1)
        grads["wf"][bi] = dfilm.T @ e
        grads["bf"][bi] = dfilm.sum(axis=0)
        d_e += dfilm @ weights["wf"][bi]

        a1c = im2col(h_in * sg1)
        grads["wc1"][bi] = mat(du).T @ mat(a1c)
        grads["bc1"][bi] = du.sum(axis=(0, 1))
        da1 = col2im(du @ weights["wc1"][bi])
        dh = du2 + da1 * _silu_grad_cached(h_in, sg1)

    grads["win"] = mat(dh).T @ mat(cache["xc"])
    grads["bin"] = dh.sum(axis=(0, 1))
    return grads, d_e
