"""Pure numpy implementation of the hot kernels.

Mirrors ``_kernels.pyx`` step for step.  Stage combinations are summed
in the same order as the compiled loops rather than through a BLAS product:
the error estimate of an easy step sits at the roundoff floor, so a
different summation order there changes the next step size and the two
backends would drift apart.
"""
import numpy as np

from ..errors import StepUnderflow

# Dormand-Prince 5(4) tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# b - b_hat, including the FSAL stage
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Shampine's fourth-order continuous extension
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
# floor for the first step guess; error control still shrinks it when needed
MIN_INITIAL_STEP = 1e-10
MAX_FACTOR = 5.0
ALPHA = 0.7 / 5
BETA = 0.4 / 5


def _combine(coeffs, K):
    """``sum_j coeffs[j] * K[j]`` accumulated in index order."""
    acc = np.zeros(K.shape[1])
    for c, k in zip(coeffs, K):
        acc += c * k
    return acc


def initial_step(fun, y0, f0, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = fun(y0 + h0 * f0)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return max(min(100 * h0, h1), MIN_INITIAL_STEP)


def dp45_integrate(fun, y0, t_end, rtol, atol, h0=0.0, max_steps=1_000_000):
    """Integrate the autonomous system ``y' = fun(y)`` on ``[0, t_end]``.

    Returns ``(ts, ys, qs)`` where ``qs[j]`` holds the four dense-output
    coefficient vectors of step ``j``.
    """
    y = np.array(y0, dtype=float)
    dim = y.size
    t = 0.0
    ts = [0.0]
    ys = [y.copy()]
    qs = []
    if t_end <= 0.0:
        return np.array(ts), np.array(ys), np.empty((0, 4, dim))

    f = np.asarray(fun(y), dtype=float)
    h = h0 if h0 > 0 else initial_step(fun, y, f, rtol, atol)
    K = np.empty((7, dim))
    err_prev = 1e-4
    steps = 0
    while t < t_end:
        # a short final step clipped to the end of the span is not a collapse
        if h < 10 * np.spacing(max(1.0, abs(t))):
            raise StepUnderflow(f"step size {h:.3e} collapsed at t={t:.6g}")
        h = min(h, t_end - t)
        rejected = False
        while True:
            K[0] = f
            for s in range(1, 6):
                K[s] = fun(y + h * _combine(A[s], K))
            y_new = y + h * _combine(B, K)
            f_new = np.asarray(fun(y_new), dtype=float)
            K[6] = f_new
            if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
                err = np.inf
            else:
                scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
                err = np.max(np.abs(h * _combine(E, K)) / scale)
            if err <= 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** -ALPHA * err_prev ** BETA)
                if rejected:
                    factor = min(1.0, factor)
                err_prev = max(err, 1e-4)
                break
            factor = max(MIN_FACTOR, SAFETY * err ** -0.2) if np.isfinite(err) else MIN_FACTOR
            h *= factor
            rejected = True
            if h < 10 * np.spacing(max(1.0, abs(t))):
                raise StepUnderflow(f"step size {h:.3e} collapsed at t={t:.6g}")
        qs.append(np.stack([_combine(P[:, p], K) for p in range(4)]))
        t = t + h if t + h < t_end else t_end
        y = y_new
        f = f_new
        ts.append(t)
        ys.append(y.copy())
        h *= factor
        steps += 1
        if steps >= max_steps:
            raise StepUnderflow(f"step budget of {max_steps} exhausted at t={t:.6g}")
    return np.array(ts), np.array(ys), np.array(qs)


def dense_eval(ts, ys, qs, n, tq):
    """Evaluate the dense output of a bundle trajectory.

    ``ys`` rows hold ``N`` stacked states of size ``n``; ``tq`` has shape
    ``(N, Q)`` and row ``i`` is queried against point ``i``.  Returns an
    array of shape ``(N, Q, n)``.
    """
    tq = np.asarray(tq, dtype=float)
    npts = tq.shape[0]
    steps = qs.shape[0]
    y3 = ys.reshape(ys.shape[0], npts, n)
    if steps == 0:
        return np.broadcast_to(y3[0][:, None, :], tq.shape + (n,)).copy()
    idx = np.clip(np.searchsorted(ts, tq, side="right") - 1, 0, steps - 1)
    hs = np.diff(ts)
    h = hs[idx]
    theta = (tq - ts[idx]) / h
    rows = np.arange(npts)[:, None]
    base = y3[idx, rows]
    q4 = qs.reshape(steps, 4, npts, n)
    coeff = q4[idx, :, rows]  # (N, Q, 4, n)
    powers = theta[..., None] ** np.arange(1, 5)
    return base + h[..., None] * np.einsum("iqp,iqpk->iqk", powers, coeff)
