"""Adaptive Dormand-Prince integration with dense output."""
import numpy as np

from ..errors import DomainExit
from . import kernels
from .tolerances import Tolerances


class Trajectory:
    """Dense solution of ``x' = V(x)`` from ``x0`` over ``[0, t_final]``.

    ``t_final`` may be negative, in which case the stored samples run
    backward in time.  A trajectory may carry a *bundle* of ``N`` initial
    points integrated together with a shared step sequence; ``at`` then
    accepts per-point query times.
    """

    def __init__(self, field, x0, t_final, tol, domain=None):
        x0 = np.asarray(x0, dtype=float)
        self.single = x0.ndim == 1
        self.x0 = np.atleast_2d(x0).copy()
        self.npoints, self.dim = self.x0.shape
        self.direction = -1.0 if t_final < 0 else 1.0
        self.tol = tol
        self._field = field
        self._domain = domain
        self._tau = np.zeros(1)
        self._states = self.x0.reshape(1, -1).copy()
        self._coeffs = np.empty((0, 4, self.x0.size))
        self.extend(t_final)

    @property
    def t_final(self):
        return self.direction * self._tau[-1]

    @property
    def times(self):
        return self.direction * self._tau

    @property
    def states(self):
        """Stored step states, shape ``(steps+1, n)`` or ``(steps+1, N, n)``."""
        s = self._states.reshape(-1, self.npoints, self.dim)
        return s[:, 0, :] if self.single else s

    @property
    def nsteps(self):
        return len(self._tau) - 1

    def _rhs(self):
        field, sign, shape = self._field, self.direction, self.x0.shape
        if self.single:
            return lambda y: sign * np.asarray(field(y), dtype=float)
        return lambda y: sign * np.asarray(field(y.reshape(shape)), dtype=float).reshape(-1)

    def extend(self, t_final):
        """Continue the integration so that it covers ``t_final``."""
        if t_final * self.direction < 0:
            raise ValueError("cannot extend a trajectory across t=0; use a second trajectory")
        remaining = abs(t_final) - self._tau[-1]
        if remaining <= 0:
            return self
        start = self._states[-1]
        ts, ys, qs = kernels.dp45_integrate(
            self._rhs(), start, remaining, self.tol.ode_rel, self.tol.ode_abs
        )
        self._check_domain(ys, self._tau[-1] + ts)
        self._tau = np.concatenate([self._tau, self._tau[-1] + ts[1:]])
        self._tau[-1] = abs(t_final)
        self._states = np.concatenate([self._states, ys[1:]])
        self._coeffs = np.concatenate([self._coeffs, qs])
        return self

    def _check_domain(self, ys, taus):
        if self._domain is None:
            return
        inside = np.asarray(self._domain.contains(ys.reshape(-1, self.dim))).reshape(len(ys), -1)
        bad = ~inside.all(axis=1)
        if bad.any():
            k = int(np.argmax(bad))
            raise DomainExit(
                f"trajectory left {self._domain.description} at t={self.direction * taus[k]:.6g}"
            )

    def _tau_of(self, t):
        tau = np.asarray(t, dtype=float) * self.direction
        slack = 1e-12 * max(1.0, self._tau[-1])
        if tau.size and (tau.min() < -slack or tau.max() > self._tau[-1] + slack):
            raise ValueError(
                f"query times outside the integrated window [0, {self.t_final:.6g}]"
            )
        return np.clip(tau, 0.0, self._tau[-1])

    def at(self, t):
        """Positions at times ``t``.

        Single trajectories return shape ``(*t.shape, n)``.  Bundles take
        ``t`` of shape ``(N, ...)`` (row ``i`` belongs to point ``i``) and
        return ``(N, ..., n)``.
        """
        tau = self._tau_of(t)
        if self.single:
            flat = tau.reshape(1, -1)
            out = kernels.dense_eval(self._tau, self._states, self._coeffs, self.dim, flat)
            return out.reshape(tau.shape + (self.dim,))
        if tau.ndim == 0 or tau.shape[0] != self.npoints:
            tau = np.broadcast_to(tau, (self.npoints,) + tau.shape)
        flat = tau.reshape(self.npoints, -1)
        out = kernels.dense_eval(self._tau, self._states, self._coeffs, self.dim, flat)
        return out.reshape(tau.shape + (self.dim,))

    __call__ = at


def solve_ivp(field, x0, t_final, tol=None, domain=None):
    """Integrate the autonomous field from ``x0`` to ``t_final``.

    ``field`` maps points to tangent vectors.  For a single ``x0`` of shape
    ``(n,)`` it is called with shape ``(n,)``; for a bundle ``(N, n)`` it is
    called with the whole ``(N, n)`` array.  Negative ``t_final`` integrates
    the time-reversed field.
    """
    return Trajectory(field, x0, float(t_final), tol or Tolerances(), domain)
