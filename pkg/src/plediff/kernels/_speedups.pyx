# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython + BLAS denoiser kernels.

Drop-in replacement for kernels._numpy with an identical call and cache
structure; see that module for the math.  Matmuls go through dgemm, the
sigmoids are computed once per forward with numpy's vectorized exp, and
everything else is fused single-pass C loops (the backward pass is
exp-free thanks to the cached sigmoids).
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void rm_gemm(bint ta, bint tb, int m, int n, int k, double alpha,
                  double* a, double* b, double beta, double* c) noexcept nogil:
    """Row-major C(m,n) = alpha*op(A)@op(B) + beta*C via column-major BLAS."""
    cdef char fa = b'T' if tb else b'N'
    cdef char fb = b'T' if ta else b'N'
    cdef int lda = k if tb else n
    cdef int ldb = m if ta else k
    dgemm(&fa, &fb, &n, &m, &k, &alpha, b, &lda, a, &ldb, &beta, c, &n)


def _sigmoid(x):
    with np.errstate(over="ignore"):  # exp overflow saturates correctly
        return 1.0 / (1.0 + np.exp(-x))


cdef void _im2col(double[:, :, ::1] a, double[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t b, t, c
    cdef Py_ssize_t nb = a.shape[0], h = a.shape[1], nc = a.shape[2]
    for b in range(nb):
        for t in range(h):
            for c in range(nc):
                out[b, t, c] = a[b, t - 1, c] if t > 0 else 0.0
                out[b, t, nc + c] = a[b, t, c]
                out[b, t, 2 * nc + c] = a[b, t + 1, c] if t + 1 < h else 0.0


cdef void _silu_im2col(double[:, :, ::1] x, double[:, :, ::1] s, double[:, :, ::1] out) noexcept nogil:
    # im2col of silu(x) = x * sig(x), without materializing the activation
    cdef Py_ssize_t b, t, c
    cdef Py_ssize_t nb = x.shape[0], h = x.shape[1], nc = x.shape[2]
    for b in range(nb):
        for t in range(h):
            for c in range(nc):
                out[b, t, c] = x[b, t - 1, c] * s[b, t - 1, c] if t > 0 else 0.0
                out[b, t, nc + c] = x[b, t, c] * s[b, t, c]
                out[b, t, 2 * nc + c] = x[b, t + 1, c] * s[b, t + 1, c] if t + 1 < h else 0.0


cdef void _col2im(double[:, :, ::1] d, double[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t b, t, c
    cdef Py_ssize_t nb = out.shape[0], h = out.shape[1], nc = out.shape[2]
    cdef double v
    for b in range(nb):
        for t in range(h):
            for c in range(nc):
                v = d[b, t, nc + c]
                if t + 1 < h:
                    v += d[b, t + 1, c]
                if t > 0:
                    v += d[b, t - 1, 2 * nc + c]
                out[b, t, c] = v


cdef void _add_bias(double[:, :, ::1] x, double[::1] bias) noexcept nogil:
    cdef Py_ssize_t i, j, k
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            for k in range(x.shape[2]):
                x[i, j, k] += bias[k]


cdef void _add_bias2(double[:, ::1] x, double[::1] bias) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            x[i, j] += bias[j]


cdef void _film(double[:, :, ::1] u, double[:, ::1] film, double[:, :, ::1] out) noexcept nogil:
    # out = u * (1 + scale) + shift; film rows are [scale | shift]
    cdef Py_ssize_t b, t, w
    cdef Py_ssize_t nw = u.shape[2]
    for b in range(u.shape[0]):
        for t in range(u.shape[1]):
            for w in range(nw):
                out[b, t, w] = u[b, t, w] * (1.0 + film[b, w]) + film[b, nw + w]


cdef void _acc(double[:, :, ::1] dst, double[:, :, ::1] src) noexcept nogil:
    cdef Py_ssize_t i, j, k
    for i in range(dst.shape[0]):
        for j in range(dst.shape[1]):
            for k in range(dst.shape[2]):
                dst[i, j, k] += src[i, j, k]


def forward_batch(weights, x, e):
    x = np.ascontiguousarray(x, dtype=np.float64)
    e = np.ascontiguousarray(e, dtype=np.float64)
    cdef double[:, :, ::1] xv = x
    cdef double[:, ::1] ev = e
    cdef int bsz = xv.shape[0], h = xv.shape[1], c = xv.shape[2]
    cdef double[:, ::1] win = np.ascontiguousarray(weights["win"])
    cdef double[::1] bin_ = np.ascontiguousarray(weights["bin"])
    cdef double[:, ::1] wout = np.ascontiguousarray(weights["wout"])
    cdef double[::1] bout = np.ascontiguousarray(weights["bout"])
    cdef int w = bin_.shape[0]
    cdef int eed = ev.shape[1]
    cdef int n_blocks = len(weights["wf"])
    cdef int bi

    xc = np.empty((bsz, h, 3 * c))
    cdef double[:, :, ::1] xcv = xc
    _im2col(xv, xcv)
    hcur = np.empty((bsz, h, w))
    cdef double[:, :, ::1] hv = hcur
    rm_gemm(0, 1, bsz * h, w, 3 * c, 1.0, &xcv[0, 0, 0], &win[0, 0], 0.0, &hv[0, 0, 0])
    _add_bias(hv, bin_)

    hin, us, ss, fs, sig_hin, sig_f = [], [], [], [], [], []
    cdef double[:, ::1] wf, wc1, wc2, filmv
    cdef double[::1] bf, bc1, bc2
    cdef double[:, :, ::1] tcv, uv, fv, sgv, hnv
    for bi in range(n_blocks):
        wf = np.ascontiguousarray(weights["wf"][bi])
        bf = np.ascontiguousarray(weights["bf"][bi])
        wc1 = np.ascontiguousarray(weights["wc1"][bi])
        bc1 = np.ascontiguousarray(weights["bc1"][bi])
        wc2 = np.ascontiguousarray(weights["wc2"][bi])
        bc2 = np.ascontiguousarray(weights["bc2"][bi])

        film = np.empty((bsz, 2 * w))
        filmv = film
        rm_gemm(0, 1, bsz, 2 * w, eed, 1.0, &ev[0, 0], &wf[0, 0], 0.0, &filmv[0, 0])
        _add_bias2(filmv, bf)

        sg1 = _sigmoid(hcur)
        sgv = sg1
        tc = np.empty((bsz, h, 3 * w))
        tcv = tc
        _silu_im2col(hv, sgv, tcv)
        u = np.empty((bsz, h, w))
        uv = u
        rm_gemm(0, 1, bsz * h, w, 3 * w, 1.0, &tcv[0, 0, 0], &wc1[0, 0], 0.0, &uv[0, 0, 0])
        _add_bias(uv, bc1)

        f = np.empty((bsz, h, w))
        fv = f
        _film(uv, filmv, fv)

        sg2 = _sigmoid(f)
        sgv = sg2
        _silu_im2col(fv, sgv, tcv)
        hnew = np.empty((bsz, h, w))
        hnv = hnew
        rm_gemm(0, 1, bsz * h, w, 3 * w, 1.0, &tcv[0, 0, 0], &wc2[0, 0], 0.0, &hnv[0, 0, 0])
        _add_bias(hnv, bc2)
        _acc(hnv, hv)  # residual: hnew += block input

        hin.append(hcur)
        us.append(u)
        ss.append(np.asarray(film)[:, :w].copy())
        fs.append(f)
        sig_hin.append(sg1)
        sig_f.append(sg2)
        hcur = hnew
        hv = hnv

    sg3 = _sigmoid(hcur)
    cdef double[:, :, ::1] sg3v = sg3
    a3c = np.empty((bsz, h, 3 * w))
    cdef double[:, :, ::1] a3cv = a3c
    _silu_im2col(hv, sg3v, a3cv)
    eps = np.empty((bsz, h, c))
    cdef double[:, :, ::1] epsv = eps
    rm_gemm(0, 1, bsz * h, c, 3 * w, 1.0, &a3cv[0, 0, 0], &wout[0, 0], 0.0, &epsv[0, 0, 0])
    _add_bias(epsv, bout)

    cache = {
        "xc": xc, "e": e, "hin": hin, "u": us, "s": ss, "f": fs, "hlast": hcur,
        "sig_hin": sig_hin, "sig_f": sig_f, "sig_hlast": sg3,
    }
    return eps, cache


cdef void _mul_silu_grad(double[:, :, ::1] d, double[:, :, ::1] x, double[:, :, ::1] s,
                         double[:, :, ::1] out) noexcept nogil:
    # out = d * silu'(x) with silu'(x) = s * (1 + x * (1 - s))
    cdef Py_ssize_t i, j, k
    cdef double sv
    for i in range(d.shape[0]):
        for j in range(d.shape[1]):
            for k in range(d.shape[2]):
                sv = s[i, j, k]
                out[i, j, k] = d[i, j, k] * sv * (1.0 + x[i, j, k] * (1.0 - sv))


cdef void _acc_mul_silu_grad(double[:, :, ::1] d, double[:, :, ::1] x, double[:, :, ::1] s,
                             double[:, :, ::1] acc) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double sv
    for i in range(d.shape[0]):
        for j in range(d.shape[1]):
            for k in range(d.shape[2]):
                sv = s[i, j, k]
                acc[i, j, k] += d[i, j, k] * sv * (1.0 + x[i, j, k] * (1.0 - sv))


cdef void _bias_grad(double[:, :, ::1] d, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, k
    for k in range(out.shape[0]):
        out[k] = 0.0
    for i in range(d.shape[0]):
        for j in range(d.shape[1]):
            for k in range(d.shape[2]):
                out[k] += d[i, j, k]


cdef void _bias_grad2(double[:, ::1] d, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    for j in range(out.shape[0]):
        out[j] = 0.0
    for i in range(d.shape[0]):
        for j in range(d.shape[1]):
            out[j] += d[i, j]


cdef void _film_backward(double[:, :, ::1] df, double[:, :, ::1] u, double[:, ::1] s,
                         double[:, ::1] dfilm, double[:, :, ::1] du) noexcept nogil:
    # dfilm rows are [d_scale | d_shift]; du = df * (1 + scale)
    cdef Py_ssize_t b, t, w
    cdef Py_ssize_t nw = u.shape[2]
    cdef double g
    for b in range(df.shape[0]):
        for w in range(2 * nw):
            dfilm[b, w] = 0.0
        for t in range(df.shape[1]):
            for w in range(nw):
                g = df[b, t, w]
                dfilm[b, w] += g * u[b, t, w]
                dfilm[b, nw + w] += g
                du[b, t, w] = g * (1.0 + s[b, w])


def backward_batch(weights, cache, d_eps):
    d_eps = np.ascontiguousarray(d_eps, dtype=np.float64)
    cdef double[:, :, ::1] dev = d_eps
    cdef int bsz = dev.shape[0], h = dev.shape[1], c = dev.shape[2]
    cdef double[:, ::1] wout = np.ascontiguousarray(weights["wout"])
    cdef double[::1] bin_ = np.ascontiguousarray(weights["bin"])
    cdef int w = bin_.shape[0]
    e = np.ascontiguousarray(cache["e"])
    cdef double[:, ::1] ev = e
    cdef int eed = ev.shape[1]
    cdef int n_blocks = len(weights["wf"])
    cdef int bi

    grads = {
        "wf": [None] * n_blocks, "bf": [None] * n_blocks,
        "wc1": [None] * n_blocks, "bc1": [None] * n_blocks,
        "wc2": [None] * n_blocks, "bc2": [None] * n_blocks,
    }

    cdef double[:, :, ::1] hlast = np.ascontiguousarray(cache["hlast"])
    cdef double[:, :, ::1] sg3 = np.ascontiguousarray(cache["sig_hlast"])
    actc = np.empty((bsz, h, 3 * w))
    cdef double[:, :, ::1] actcv = actc
    _silu_im2col(hlast, sg3, actcv)

    gwout = np.empty((c, 3 * w))
    gbout = np.empty(c)
    cdef double[:, ::1] gwoutv = gwout
    cdef double[::1] gboutv = gbout
    rm_gemm(1, 0, c, 3 * w, bsz * h, 1.0, &dev[0, 0, 0], &actcv[0, 0, 0], 0.0, &gwoutv[0, 0])
    _bias_grad(dev, gboutv)
    grads["wout"] = gwout
    grads["bout"] = gbout

    dcol = np.empty((bsz, h, 3 * w))
    dh = np.empty((bsz, h, w))
    da = np.empty((bsz, h, w))
    cdef double[:, :, ::1] dcolv = dcol, dhv = dh, dav = da
    rm_gemm(0, 0, bsz * h, 3 * w, c, 1.0, &dev[0, 0, 0], &wout[0, 0], 0.0, &dcolv[0, 0, 0])
    _col2im(dcolv, dav)
    _mul_silu_grad(dav, hlast, sg3, dhv)

    d_e = np.zeros((bsz, eed))
    cdef double[:, ::1] dev2 = d_e
    cdef double[:, :, ::1] h_in, u, f, sg1, sg2, dfv, duv
    cdef double[:, ::1] wf, wc1, wc2, sv, dfilmv, gwfv, gw1v, gw2v
    cdef double[::1] gb
    for bi in range(n_blocks - 1, -1, -1):
        h_in = np.ascontiguousarray(cache["hin"][bi])
        u = np.ascontiguousarray(cache["u"][bi])
        f = np.ascontiguousarray(cache["f"][bi])
        sv = np.ascontiguousarray(cache["s"][bi])
        sg1 = np.ascontiguousarray(cache["sig_hin"][bi])
        sg2 = np.ascontiguousarray(cache["sig_f"][bi])
        wf = np.ascontiguousarray(weights["wf"][bi])
        wc1 = np.ascontiguousarray(weights["wc1"][bi])
        wc2 = np.ascontiguousarray(weights["wc2"][bi])

        # conv2 grads: its input activation is silu(f)
        _silu_im2col(f, sg2, actcv)
        gw2 = np.empty((w, 3 * w))
        gb2 = np.empty(w)
        gw2v = gw2
        gb = gb2
        rm_gemm(1, 0, w, 3 * w, bsz * h, 1.0, &dhv[0, 0, 0], &actcv[0, 0, 0], 0.0, &gw2v[0, 0])
        _bias_grad(dhv, gb)
        grads["wc2"][bi] = gw2
        grads["bc2"][bi] = gb2

        df = np.empty((bsz, h, w))
        dfv = df
        rm_gemm(0, 0, bsz * h, 3 * w, w, 1.0, &dhv[0, 0, 0], &wc2[0, 0], 0.0, &dcolv[0, 0, 0])
        _col2im(dcolv, dav)
        _mul_silu_grad(dav, f, sg2, dfv)

        dfilm = np.empty((bsz, 2 * w))
        du = np.empty((bsz, h, w))
        dfilmv = dfilm
        duv = du
        _film_backward(dfv, u, sv, dfilmv, duv)
        gwf = np.empty((2 * w, eed))
        gbf = np.empty(2 * w)
        gwfv = gwf
        gb = gbf
        rm_gemm(1, 0, 2 * w, eed, bsz, 1.0, &dfilmv[0, 0], &ev[0, 0], 0.0, &gwfv[0, 0])
        _bias_grad2(dfilmv, gb)
        grads["wf"][bi] = gwf
        grads["bf"][bi] = gbf
        rm_gemm(0, 0, bsz, eed, 2 * w, 1.0, &dfilmv[0, 0], &wf[0, 0], 1.0, &dev2[0, 0])

        # conv1 grads: its input activation is silu(h_in)
        _silu_im2col(h_in, sg1, actcv)
        gw1 = np.empty((w, 3 * w))
        gb1 = np.empty(w)
        gw1v = gw1
        gb = gb1
        rm_gemm(1, 0, w, 3 * w, bsz * h, 1.0, &duv[0, 0, 0], &actcv[0, 0, 0], 0.0, &gw1v[0, 0])
        _bias_grad(duv, gb)
        grads["wc1"][bi] = gw1
        grads["bc1"][bi] = gb1

        rm_gemm(0, 0, bsz * h, 3 * w, w, 1.0, &duv[0, 0, 0], &wc1[0, 0], 0.0, &dcolv[0, 0, 0])
        _col2im(dcolv, dav)
        # dh_in = dh_out + da1 * silu'(h_in), accumulated in place
        _acc_mul_silu_grad(dav, h_in, sg1, dhv)

    xc = np.ascontiguousarray(cache["xc"])
    cdef double[:, :, ::1] xcv = xc
    gwin = np.empty((w, 3 * c))
    gbin = np.empty(w)
    cdef double[:, ::1] gwinv = gwin
    cdef double[::1] gbinv = gbin
    rm_gemm(1, 0, w, 3 * c, bsz * h, 1.0, &dhv[0, 0, 0], &xcv[0, 0, 0], 0.0, &gwinv[0, 0])
    _bias_grad(dhv, gbinv)
    grads["win"] = gwin
    grads["bin"] = gbin
    return grads, d_e
