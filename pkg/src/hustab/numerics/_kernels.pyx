# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Dormand-Prince stepping loop and dense-output evaluation.

Same algorithm and constants as ``_kernels_py``; only the per-step vector
arithmetic and the interpolation loops move to C.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow, isfinite, nextafter, INFINITY

from ..errors import StepUnderflow

cnp.import_array()

cdef double[6][5] A_ = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40, 9.0 / 40, 0.0, 0.0, 0.0],
    [44.0 / 45, -56.0 / 15, 32.0 / 9, 0.0, 0.0],
    [19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0.0],
    [9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656],
]
cdef double[6] B_ = [35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84]
cdef double[7] E_ = [71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920, -17253.0 / 339200,
                     22.0 / 525, -1.0 / 40]
cdef double[7][4] P_ = [
    [1.0, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608, -12715105075.0 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933,
     87487479700.0 / 32700410799],
    [0.0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304, -10690763975.0 / 1880347072],
    [0.0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408,
     701980252875.0 / 199316789632],
    [0.0, -282668133.0 / 205662961, 2019193451.0 / 616988883, -1453857185.0 / 822651844],
    [0.0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423],
]

cdef double SAFETY = 0.9
cdef double MIN_FACTOR = 0.2
# floor for the first step guess; error control still shrinks it when needed
cdef double MIN_INITIAL_STEP = 1e-10
cdef double MAX_FACTOR = 5.0
cdef double ALPHA = 0.7 / 5
cdef double BETA = 0.4 / 5


cdef inline double _spacing(double t):
    cdef double a = fabs(t)
    if a < 1.0:
        a = 1.0
    return nextafter(a, INFINITY) - a


def initial_step(fun, double[::1] y0, double[::1] f0, double rtol, double atol):
    cdef Py_ssize_t i, dim = y0.shape[0]
    cdef double d0 = 0.0, d1 = 0.0, d2 = 0.0, sc, h0, h1, v
    for i in range(dim):
        sc = atol + rtol * fabs(y0[i])
        v = fabs(y0[i]) / sc
        if v > d0:
            d0 = v
        v = fabs(f0[i]) / sc
        if v > d1:
            d1 = v
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = np.empty(dim)
    cdef double[::1] y1v = y1
    for i in range(dim):
        y1v[i] = y0[i] + h0 * f0[i]
    cdef double[::1] f1 = np.ascontiguousarray(fun(y1), dtype=np.float64)
    for i in range(dim):
        sc = atol + rtol * fabs(y0[i])
        v = fabs(f1[i] - f0[i]) / sc
        if v > d2:
            d2 = v
    d2 /= h0
    if d1 > d2:
        d2 = d1
    if d2 <= 1e-15:
        h1 = h0 * 1e-3
        if h1 < 1e-6:
            h1 = 1e-6
    else:
        h1 = pow(0.01 / d2, 0.2)
    if 100 * h0 < h1:
        h1 = 100 * h0
    if h1 < MIN_INITIAL_STEP:
        return MIN_INITIAL_STEP
    return h1


def dp45_integrate(fun, y0, double t_end, double rtol, double atol, double h0=0.0,
                   Py_ssize_t max_steps=1000000):
    """Integrate ``y' = fun(y)`` on ``[0, t_end]``; see ``_kernels_py``."""
    y_arr = np.array(y0, dtype=np.float64)
    cdef Py_ssize_t dim = y_arr.size
    cdef Py_ssize_t i, s, j, p
    cdef double t = 0.0, h, err, sc, acc, factor = 1.0, err_prev = 1e-4, v
    cdef bint rejected, finite
    if t_end <= 0.0:
        return np.zeros(1), y_arr.reshape(1, dim).copy(), np.empty((0, 4, dim))

    cdef Py_ssize_t cap = 256, steps = 0
    ts = np.empty(cap + 1)
    ys = np.empty((cap + 1, dim))
    qs = np.empty((cap, 4, dim))
    cdef double[::1] tsv = ts
    cdef double[:, ::1] ysv = ys
    cdef double[:, :, ::1] qsv = qs

    K = np.empty((7, dim))
    cdef double[:, ::1] Kv = K
    stage = np.empty(dim)
    cdef double[::1] stv = stage
    y_new_arr = np.empty(dim)
    cdef double[::1] ynew = y_new_arr
    cdef double[::1] y = y_arr
    cdef double[::1] f = np.ascontiguousarray(fun(y_arr), dtype=np.float64).copy()
    cdef double[::1] kk

    tsv[0] = 0.0
    for i in range(dim):
        ysv[0, i] = y[i]
    h = h0 if h0 > 0 else initial_step(fun, y, f, rtol, atol)

    while t < t_end:
        # a short final step clipped to the end of the span is not a collapse
        if h < 10 * _spacing(t):
            raise StepUnderflow(f"step size {h:.3e} collapsed at t={t:.6g}")
        if h > t_end - t:
            h = t_end - t
        rejected = False
        while True:
            for i in range(dim):
                Kv[0, i] = f[i]
            for s in range(1, 6):
                for i in range(dim):
                    acc = 0.0
                    for j in range(s):
                        acc += A_[s][j] * Kv[j, i]
                    stv[i] = y[i] + h * acc
                kk = np.ascontiguousarray(fun(stage), dtype=np.float64)
                for i in range(dim):
                    Kv[s, i] = kk[i]
            finite = True
            for i in range(dim):
                acc = 0.0
                for j in range(6):
                    acc += B_[j] * Kv[j, i]
                ynew[i] = y[i] + h * acc
                if not isfinite(ynew[i]):
                    finite = False
            kk = np.ascontiguousarray(fun(y_new_arr), dtype=np.float64)
            for i in range(dim):
                Kv[6, i] = kk[i]
                if not isfinite(kk[i]):
                    finite = False
            if not finite:
                err = INFINITY
            else:
                err = 0.0
                for i in range(dim):
                    acc = 0.0
                    for j in range(7):
                        acc += E_[j] * Kv[j, i]
                    sc = fabs(y[i])
                    if fabs(ynew[i]) > sc:
                        sc = fabs(ynew[i])
                    v = fabs(h * acc) / (atol + rtol * sc)
                    if v > err:
                        err = v
            if err <= 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = SAFETY * pow(err, -ALPHA) * pow(err_prev, BETA)
                    if factor > MAX_FACTOR:
                        factor = MAX_FACTOR
                if rejected and factor > 1.0:
                    factor = 1.0
                err_prev = err if err > 1e-4 else 1e-4
                break
            if isfinite(err):
                factor = SAFETY * pow(err, -0.2)
                if factor < MIN_FACTOR:
                    factor = MIN_FACTOR
            else:
                factor = MIN_FACTOR
            h *= factor
            rejected = True
            if h < 10 * _spacing(t):
                raise StepUnderflow(f"step size {h:.3e} collapsed at t={t:.6g}")

        if steps == cap:
            cap *= 2
            ts = np.resize(ts, cap + 1)
            ys = np.resize(ys, (cap + 1, dim))
            qs = np.resize(qs, (cap, 4, dim))
            tsv = ts
            ysv = ys
            qsv = qs
        for p in range(4):
            for i in range(dim):
                acc = 0.0
                for j in range(7):
                    acc += P_[j][p] * Kv[j, i]
                qsv[steps, p, i] = acc
        if t + h < t_end:
            t = t + h
        else:
            t = t_end
        for i in range(dim):
            y[i] = ynew[i]
            f[i] = Kv[6, i]
            ysv[steps + 1, i] = ynew[i]
        steps += 1
        tsv[steps] = t
        h *= factor
        if steps >= max_steps:
            raise StepUnderflow(f"step budget of {max_steps} exhausted at t={t:.6g}")
    return ts[:steps + 1].copy(), ys[:steps + 1].copy(), qs[:steps].copy()


def dense_eval(double[::1] ts, ys, qs, Py_ssize_t n, tq):
    """Dense output for a bundle; see ``_kernels_py.dense_eval``."""
    tq_arr = np.ascontiguousarray(tq, dtype=np.float64)
    cdef Py_ssize_t npts = tq_arr.shape[0]
    cdef Py_ssize_t nq = tq_arr.shape[1]
    cdef Py_ssize_t steps = ts.shape[0] - 1
    out = np.empty((npts, nq, n))
    cdef double[:, :, ::1] ov = out
    cdef double[:, ::1] tqv = tq_arr
    cdef double[:, ::1] ysv = np.ascontiguousarray(ys, dtype=np.float64)
    cdef double[:, :, ::1] qsv
    cdef Py_ssize_t i, q, k, lo, hi, mid, off
    cdef double tt, h, th, th2, th3, th4
    if steps == 0:
        for i in range(npts):
            for q in range(nq):
                for k in range(n):
                    ov[i, q, k] = ysv[0, i * n + k]
        return out
    qsv = np.ascontiguousarray(qs, dtype=np.float64)
    for i in range(npts):
        off = i * n
        for q in range(nq):
            tt = tqv[i, q]
            # last index with ts[lo] <= tt, clipped to a valid step
            lo = 0
            hi = steps
            while hi - lo > 1:
                mid = (lo + hi) >> 1
                if ts[mid] <= tt:
                    lo = mid
                else:
                    hi = mid
            h = ts[lo + 1] - ts[lo]
            th = (tt - ts[lo]) / h
            th2 = th * th
            th3 = th2 * th
            th4 = th3 * th
            for k in range(n):
                ov[i, q, k] = ysv[lo, off + k] + h * (
                    qsv[lo, 0, off + k] * th + qsv[lo, 1, off + k] * th2
                    + qsv[lo, 2, off + k] * th3 + qsv[lo, 3, off + k] * th4)
    return out
