import numpy as np

DEFAULT_SCALE = 1e-5


def fd_step(t, scale=DEFAULT_SCALE):
    return scale * np.maximum(1.0, np.abs(t))


def directional_derivative(curve_value, t, scale=DEFAULT_SCALE):
    """Central difference of ``curve_value`` at ``t``.

    Uses ``h = scale * max(1, |t|)``; ``t`` may be an array, in which case
    ``curve_value`` must accept arrays of the same shape.
    """
    t = np.asarray(t, dtype=float)
    h = fd_step(t, scale)
    plus = np.asarray(curve_value(t + h))
    minus = np.asarray(curve_value(t - h))
    if plus.ndim > t.ndim:
        h = h.reshape(h.shape + (1,) * (plus.ndim - t.ndim))
    return (plus - minus) / (2.0 * h)
