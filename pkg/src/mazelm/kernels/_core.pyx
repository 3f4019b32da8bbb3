# cython: language_level=3
"""Compiled kernel backend.

Same contract as kernels.reference: identical function names, shapes,
dtype preservation (float32/float64) and zero-row conventions.

Strategy on a single SIMD-capable core: scalar libm exp/tanh loses ~10x to
numpy's vectorized transcendentals, so the softmax and GELU kernels fuse
the masking/shift/normalize passes here and delegate only the bulk exp or
tanh to numpy.  Reductions, scatter-adds and the optimizer update are
plain fused loops, where removing numpy's temporaries is the whole win.
"""

import numpy as np

cimport cython
from libc.math cimport sqrt, sqrtf, INFINITY

DEF GELU_C = 0.7978845608028654
DEF GELU_A = 0.044715

ctypedef fused FLOAT:
    float
    double


# --- softmax family ------------------------------------------------------
# Pass 1 writes (score - rowmax) for visible keys and -inf elsewhere; the
# caller then applies np.exp (exp(-inf) == 0 exactly), and pass 2
# normalizes in place, mapping all-masked rows to all-zero rows.

@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _shift_key_masked(FLOAT[:, :, ::1] scores, const unsigned char[:, ::1] kmask,
                      FLOAT[:, :, ::1] shifted):
    cdef Py_ssize_t n = scores.shape[0], tq = scores.shape[1], tk = scores.shape[2]
    cdef Py_ssize_t i, q, k
    cdef FLOAT m
    for i in range(n):
        for q in range(tq):
            m = -INFINITY
            for k in range(tk):
                if kmask[i, k] and scores[i, q, k] > m:
                    m = scores[i, q, k]
            if m == -INFINITY:
                for k in range(tk):
                    shifted[i, q, k] = -INFINITY
                continue
            for k in range(tk):
                if kmask[i, k]:
                    shifted[i, q, k] = scores[i, q, k] - m
                else:
                    shifted[i, q, k] = -INFINITY


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _shift_causal(FLOAT[:, :, ::1] scores, Py_ssize_t offset, FLOAT[:, :, ::1] shifted):
    cdef Py_ssize_t n = scores.shape[0], tq = scores.shape[1], tk = scores.shape[2]
    cdef Py_ssize_t i, q, k, hi
    cdef FLOAT m
    for i in range(n):
        for q in range(tq):
            hi = offset + q
            if hi > tk - 1:
                hi = tk - 1
            if hi < 0:
                for k in range(tk):
                    shifted[i, q, k] = -INFINITY
                continue
            m = scores[i, q, 0]
            for k in range(1, hi + 1):
                if scores[i, q, k] > m:
                    m = scores[i, q, k]
            for k in range(hi + 1):
                shifted[i, q, k] = scores[i, q, k] - m
            for k in range(hi + 1, tk):
                shifted[i, q, k] = -INFINITY


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _shift_rows(FLOAT[:, ::1] x, FLOAT[:, ::1] shifted):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef FLOAT m
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        for j in range(d):
            shifted[i, j] = x[i, j] - m


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _normalize_rows(FLOAT[:, ::1] e):
    cdef Py_ssize_t n = e.shape[0], d = e.shape[1]
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += e[i, j]
        if s <= 0.0:
            continue  # fully masked row stays all-zero
        for j in range(d):
            e[i, j] = <FLOAT> (e[i, j] / s)


def _finish_softmax(shifted):
    e = np.exp(shifted)
    _normalize_rows(e.reshape(-1, e.shape[e.ndim - 1]))
    return e


def softmax_key_masked(scores, kmask):
    s = np.ascontiguousarray(scores)
    km = np.ascontiguousarray(kmask, dtype=np.uint8)
    shifted = np.empty_like(s)
    _shift_key_masked(s, km, shifted)
    return _finish_softmax(shifted)


def softmax_causal(scores, offset):
    s = np.ascontiguousarray(scores)
    shifted = np.empty_like(s)
    _shift_causal(s, offset, shifted)
    return _finish_softmax(shifted)


def softmax_lastdim(x):
    xc = np.ascontiguousarray(x)
    d = xc.shape[xc.ndim - 1]
    flat = xc.reshape(-1, d)
    shifted = np.empty_like(flat)
    _shift_rows(flat, shifted)
    return _finish_softmax(shifted).reshape(xc.shape)


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _sm_bwd(FLOAT[:, ::1] probs, FLOAT[:, ::1] dprobs, FLOAT[:, ::1] out):
    cdef Py_ssize_t n = probs.shape[0], d = probs.shape[1]
    cdef Py_ssize_t i, j
    cdef double inner
    for i in range(n):
        inner = 0.0
        for j in range(d):
            inner += <double> probs[i, j] * <double> dprobs[i, j]
        for j in range(d):
            out[i, j] = <FLOAT> (probs[i, j] * (dprobs[i, j] - inner))


def softmax_bwd(probs, dprobs):
    p = np.ascontiguousarray(probs)
    dp = np.ascontiguousarray(dprobs, dtype=p.dtype)
    d = p.shape[p.ndim - 1]
    out = np.empty_like(p)
    _sm_bwd(p.reshape(-1, d), dp.reshape(-1, d), out.reshape(-1, d))
    return out


# --- layer norm -----------------------------------------------------------

@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _ln_fwd(FLOAT[:, ::1] x, FLOAT[::1] g, FLOAT[::1] b, double eps,
            FLOAT[:, ::1] y, FLOAT[::1] mean, FLOAT[::1] rstd):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double mu, var, diff, r
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = <double> x[i, j] - mu
            var += diff * diff
        var /= d
        r = 1.0 / sqrt(var + eps)
        mean[i] = <FLOAT> mu
        rstd[i] = <FLOAT> r
        for j in range(d):
            y[i, j] = <FLOAT> (((<double> x[i, j]) - mu) * r * g[j] + b[j])


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _ln_bwd(FLOAT[:, ::1] dy, FLOAT[:, ::1] x, FLOAT[::1] g,
            FLOAT[::1] mean, FLOAT[::1] rstd, FLOAT[:, ::1] dx,
            double[::1] dg, double[::1] db):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double m1, m2, xhat, dxhat
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (<double> x[i, j] - <double> mean[i]) * <double> rstd[i]
            dxhat = <double> dy[i, j] * <double> g[j]
            m1 += dxhat
            m2 += dxhat * xhat
            dg[j] += <double> dy[i, j] * xhat
            db[j] += dy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (<double> x[i, j] - <double> mean[i]) * <double> rstd[i]
            dxhat = <double> dy[i, j] * <double> g[j]
            dx[i, j] = <FLOAT> (<double> rstd[i] * (dxhat - m1 - xhat * m2))


def layernorm_fwd(x, g, b, eps):
    xc = np.ascontiguousarray(x)
    d = xc.shape[xc.ndim - 1]
    flat = xc.reshape(-1, d)
    y = np.empty_like(flat)
    mean = np.empty(flat.shape[0], dtype=xc.dtype)
    rstd = np.empty(flat.shape[0], dtype=xc.dtype)
    _ln_fwd(flat, np.ascontiguousarray(g, dtype=xc.dtype),
            np.ascontiguousarray(b, dtype=xc.dtype), float(eps), y, mean, rstd)
    lead = xc.shape[: xc.ndim - 1]
    return y.reshape(xc.shape), mean.reshape(lead), rstd.reshape(lead)


def layernorm_bwd(dy, x, g, mean, rstd):
    xc = np.ascontiguousarray(x)
    d = xc.shape[xc.ndim - 1]
    flat_x = xc.reshape(-1, d)
    flat_dy = np.ascontiguousarray(dy, dtype=xc.dtype).reshape(-1, d)
    gc = np.ascontiguousarray(g, dtype=xc.dtype)
    mc = np.ascontiguousarray(mean, dtype=xc.dtype).reshape(-1)
    rc = np.ascontiguousarray(rstd, dtype=xc.dtype).reshape(-1)
    dx = np.empty_like(flat_x)
    dg = np.zeros(d, dtype=np.float64)
    db = np.zeros(d, dtype=np.float64)
    _ln_bwd(flat_dy, flat_x, gc, mc, rc, dx, dg, db)
    return dx.reshape(xc.shape), dg.astype(g.dtype), db.astype(g.dtype)


# --- GELU (tanh approximation) ---------------------------------------------
# u = c * (x + a x^3) is fused here, np.tanh supplies the transcendental,
# and the remaining polynomial is fused again.

@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _gelu_inner(FLOAT[::1] x, FLOAT[::1] u):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef FLOAT v
    for i in range(n):
        v = x[i]
        u[i] = <FLOAT> (GELU_C * (v + GELU_A * v * v * v))


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _gelu_fwd_combine(FLOAT[::1] x, FLOAT[::1] t, FLOAT[::1] y):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    for i in range(n):
        y[i] = <FLOAT> (0.5 * x[i] * (1.0 + t[i]))


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _gelu_bwd_combine(FLOAT[::1] x, FLOAT[::1] t, FLOAT[::1] dy, FLOAT[::1] dx):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef double v, tv, du
    for i in range(n):
        v = x[i]
        tv = t[i]
        du = GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        dx[i] = <FLOAT> (dy[i] * (0.5 * (1.0 + tv) + 0.5 * v * (1.0 - tv * tv) * du))


def gelu_fwd(x):
    xc = np.ascontiguousarray(x)
    flat = xc.reshape(-1)
    u = np.empty_like(flat)
    _gelu_inner(flat, u)
    t = np.tanh(u)
    y = np.empty_like(flat)
    _gelu_fwd_combine(flat, t, y)
    return y.reshape(xc.shape)


def gelu_bwd(x, dy):
    xc = np.ascontiguousarray(x)
    flat = xc.reshape(-1)
    dyc = np.ascontiguousarray(dy, dtype=xc.dtype).reshape(-1)
    u = np.empty_like(flat)
    _gelu_inner(flat, u)
    t = np.tanh(u)
    dx = np.empty_like(flat)
    _gelu_bwd_combine(flat, t, dyc, dx)
    return dx.reshape(xc.shape)


# --- optimizer and embedding scatter ----------------------------------------

@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _adamw(FLOAT[::1] p, FLOAT[::1] grad, FLOAT[::1] m, FLOAT[::1] v,
           long step, double lr, double beta1, double beta2, double eps,
           double weight_decay):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    # Scalars cast to the parameter dtype first, mirroring the reference.
    cdef FLOAT decay = <FLOAT> (1.0 - lr * weight_decay)
    cdef FLOAT b1 = <FLOAT> beta1
    cdef FLOAT b2 = <FLOAT> beta2
    cdef FLOAT one_m_b1 = <FLOAT> (1.0 - beta1)
    cdef FLOAT one_m_b2 = <FLOAT> (1.0 - beta2)
    cdef FLOAT c1 = <FLOAT> (1.0 - beta1 ** step)
    cdef FLOAT c2 = <FLOAT> (1.0 - beta2 ** step)
    cdef FLOAT lrf = <FLOAT> lr
    cdef FLOAT epsf = <FLOAT> eps
    cdef FLOAT mhat, vhat, root
    cdef bint do_decay = weight_decay != 0.0
    for i in range(n):
        if do_decay:
            p[i] = p[i] * decay
        m[i] = b1 * m[i] + one_m_b1 * grad[i]
        v[i] = b2 * v[i] + one_m_b2 * grad[i] * grad[i]
        mhat = m[i] / c1
        vhat = v[i] / c2
        if FLOAT is float:
            root = sqrtf(vhat)
        else:
            root = sqrt(vhat)
        p[i] = p[i] - lrf * mhat / (root + epsf)


def adamw_update(p, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    # In-place contract: p, m, v are mutated.  They are C-contiguous by
    # construction (init_params / zeros); reshape(-1) is then a view.
    if not (p.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
        raise ValueError("adamw_update requires contiguous parameter tensors")
    gc = np.ascontiguousarray(grad, dtype=p.dtype)
    _adamw(p.reshape(-1), gc.reshape(-1), m.reshape(-1), v.reshape(-1),
           step, lr, beta1, beta2, eps, weight_decay)


@cython.boundscheck(False)
@cython.wraparound(False)
def _scatter_add(const long[::1] ids, FLOAT[:, ::1] dout, FLOAT[:, ::1] demb):
    cdef Py_ssize_t n = ids.shape[0], d = dout.shape[1], V = demb.shape[0]
    cdef Py_ssize_t i, j
    cdef long idx
    for i in range(n):
        idx = ids[i]
        if idx < 0 or idx >= V:
            raise IndexError(f"token id {idx} out of range for {V} embeddings")
        for j in range(d):
            demb[idx, j] += dout[i, j]


def embedding_grad(ids, dout, demb):
    if not demb.flags.c_contiguous:
        raise ValueError("embedding_grad requires a contiguous gradient table")
    ic = np.ascontiguousarray(ids, dtype=np.int64)
    dc = np.ascontiguousarray(dout, dtype=demb.dtype)
    _scatter_add(ic, dc.reshape(ic.shape[0], -1), demb)
