"""Reference values computed independently of hustab.

Each oracle uses a different algorithm from the one under test: adaptive
QUADPACK integration, scipy's matrix exponential, the DOP853 integrator,
or a closed-form antiderivative.
"""
import math

import numpy as np
import scipy.integrate
import scipy.linalg


def damped_integral(u, lam, omega_sign, upper=200.0):
    """int_0^omega u(s) exp(-lam s) ds by QUADPACK on the real and imaginary parts."""
    lam = complex(lam)

    def part(fn):
        val, _ = scipy.integrate.quad(fn, 0.0, omega_sign * upper, limit=2000,
                                      epsabs=1e-13, epsrel=1e-12)
        return val

    re = part(lambda s: (u(s) * np.exp(-lam * s)).real)
    im = part(lambda s: (u(s) * np.exp(-lam * s)).imag)
    return complex(re, im)


def affine_flow(M, v, t, x):
    """e^{tM} x + t v via scipy's Pade matrix exponential."""
    M = np.asarray(M, dtype=float)
    return scipy.linalg.expm(t * M) @ np.asarray(x, float) + t * np.asarray(v, float)


def rotation(t, x, rate=1.0):
    c, s = math.cos(rate * t), math.sin(rate * t)
    return np.array([c * x[0] - s * x[1], s * x[0] + c * x[1]])


def dop853_flow(field, t, x):
    """Flow of an autonomous field by scipy's DOP853 at tight tolerances."""
    x = np.asarray(x, dtype=float)
    if t == 0:
        return x.copy()
    sol = scipy.integrate.solve_ivp(lambda _t, y: field(y), (0.0, t), x, method="DOP853",
                                    rtol=1e-13, atol=1e-14)
    return sol.y[:, -1]


def lemma_correction_1d(a, h, lam, t, upper=200.0):
    """b(t) = a(t) + int_0^omega alpha(t+s) e^{-lam s} ds with alpha from exact derivatives.

    ``a`` is given as a pair ``(value, derivative)`` of scalar callables.
    """
    value, deriv = a
    lam = complex(lam)
    sign = 1 if lam.real > 0 else -1

    def alpha(s):
        return deriv(s) - lam * value(s) - (h(s) if h else 0.0)

    return value(t) + damped_integral(lambda s: alpha(t + s), lam, sign, upper)
