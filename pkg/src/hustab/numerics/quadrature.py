"""Composite Gauss-Legendre quadrature for exponentially damped integrands."""
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import BoundViolated, InvalidLambda
from .tolerances import Tolerances

GL_ORDER = 8
GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(GL_ORDER)
MAX_LEVELS = 10
HORIZON_RANGE = (1.0, 1e4)
# a sum of terms with total magnitude S cannot be trusted below about this many
# ulps of S; used as the accuracy floor of growing partial integrals
ROUNDOFF_ULPS = 64


def require_nonzero_real(lam):
    lam = complex(lam)
    if lam.real == 0.0:
        raise InvalidLambda(f"Re(lambda) must be nonzero, got lambda={lam}")
    return lam


def arith_lambda(lam):
    """Real lambdas stay real so real data is not promoted to complex."""
    lam = complex(lam)
    return lam.real if lam.imag == 0 else lam


def eval_curve(fn, s):
    """Call a time-parametrised function and normalise to ``(*s.shape, m)``."""
    s = np.asarray(s, dtype=float)
    out = np.asarray(fn(s))
    if out.shape == s.shape:
        out = out[..., None]
    return out


@dataclass(frozen=True)
class DampedIntegrand:
    """The integrand ``u(s) * exp(-lam * s)`` on the half-line toward omega.

    ``u`` is vectorised: given times of shape ``(K,)`` it returns an array
    whose leading axis is ``K``; trailing axes are carried through.
    """

    u: Callable
    lam: complex

    def __post_init__(self):
        object.__setattr__(self, "lam", require_nonzero_real(self.lam))

    @property
    def omega_sign(self):
        return 1 if self.lam.real > 0 else -1


@dataclass(frozen=True)
class QuadPlan:
    """Panel edges of a composite rule on ``[0, horizon]`` (before the omega sign)."""

    horizon: float
    edges: tuple

    @classmethod
    def uniform(cls, horizon, panels):
        return cls(horizon, tuple(np.linspace(0.0, horizon, panels + 1)))

    @property
    def panels(self):
        return len(self.edges) - 1


@dataclass
class QuadInfo:
    value: np.ndarray
    plan: QuadPlan
    estimate: float
    levels: int
    max_abs_u: float


def horizon(u_max, re_lam, quad_tol):
    """Truncation point whose analytic tail bound is half the error budget."""
    a = abs(re_lam)
    if u_max <= 0:
        return HORIZON_RANGE[0]
    T = math.log(2.0 * u_max / (quad_tol * a)) / a
    return min(max(T, HORIZON_RANGE[0]), HORIZON_RANGE[1])


def tail_bound(u_max, re_lam, T):
    a = abs(re_lam)
    return u_max * math.exp(-a * T) / a


def initial_panels(T, lam):
    return max(1, math.ceil(T * max(1.0, abs(lam)) / 2.0))


def panel_rule(a, b, panels):
    """Nodes and weights of the uniform composite rule on ``[a, b]``."""
    return edge_rule(np.linspace(a, b, panels + 1))


def edge_rule(edges):
    """Nodes and weights of the composite rule on the given panel edges."""
    edges = np.asarray(edges, dtype=float)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * GL_NODES).ravel()
    weights = (half[:, None] * GL_WEIGHTS).ravel()
    return nodes, weights


def _panel_sums(integrand, lo, hi):
    """GL value of every panel ``[lo_i, hi_i]``; returns ``(sums, max|u|)``."""
    sign = integrand.omega_sign
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    u_nodes = (mid[:, None] + half[:, None] * GL_NODES).ravel()
    s = sign * u_nodes
    vals = np.asarray(integrand.u(s))
    kernel = sign * (half[:, None] * GL_WEIGHTS).ravel() * np.exp(-arith_lambda(integrand.lam) * s)
    sums = np.einsum("pk,pk...->p...", kernel.reshape(len(lo), GL_ORDER),
                     vals.reshape((len(lo), GL_ORDER) + vals.shape[1:]))
    return sums, float(np.max(np.abs(vals))) if vals.size else 0.0


def damped_sum(integrand, plan):
    """One evaluation of the composite rule; returns ``(value, max|u|)``."""
    edges = np.asarray(plan.edges)
    sums, peak = _panel_sums(integrand, edges[:-1], edges[1:])
    return sums.sum(axis=0), peak


def _check_bound(max_abs_u, u_max):
    if not np.isfinite(max_abs_u):
        raise BoundViolated("the integrand is not finite; it grows without bound toward omega")
    if max_abs_u > 1.1 * u_max:
        raise BoundViolated(
            f"sampled |u| = {max_abs_u:.3e} exceeds the declared bound {u_max:.3e} by more than 10%"
        )


def _max_over_batch(a):
    a = np.abs(a)
    if a.ndim <= 1:
        return a
    if a[0].size == 0:
        return np.zeros(len(a))
    return a.reshape(len(a), -1).max(axis=1)


class _Refiner:
    """Dyadic panel refinement with a length-proportional error budget."""

    def __init__(self, integrand, u_max, budget, width0, max_levels):
        self.integrand = integrand
        self.u_max = u_max
        self.budget = budget
        self.width0 = width0
        self.max_levels = max_levels
        self.peak = 0.0
        self.levels = 0
        self.stalled = False

    def sums(self, lo, hi):
        out, m = _panel_sums(self.integrand, lo, hi)
        self.peak = max(self.peak, m)
        _check_bound(self.peak, self.u_max)
        return out

    def depth(self, lo, hi):
        return np.rint(np.log2(self.width0 / (hi - lo))).astype(int)

    def refine(self, lo, hi, coarse):
        """Halve until accepted; returns accepted ``(lo, hi, value, err)``."""
        acc = ([], [], [], [])
        while len(lo):
            mid = 0.5 * (lo + hi)
            halves = self.sums(np.concatenate([lo, mid]), np.concatenate([mid, hi]))
            left, right = halves[:len(lo)], halves[len(lo):]
            fine = left + right
            err = _max_over_batch(fine - coarse)
            depth = self.depth(lo, mid)
            self.levels = max(self.levels, int(depth.max()))
            done = err <= self.budget * (hi - lo)
            capped = depth >= self.max_levels
            self.stalled |= bool(np.any(capped & ~done))
            done |= capped
            for store, part in zip(acc, (lo[done], hi[done], fine[done], err[done])):
                store.append(part)
            keep = ~done
            lo, hi = np.concatenate([lo[keep], mid[keep]]), np.concatenate([mid[keep], hi[keep]])
            coarse = np.concatenate([left[keep], right[keep]])
        return tuple(np.concatenate(a) for a in acc)


def quad_exp_decay(integrand, u_max, tol=None, *, full_output=False, max_levels=MAX_LEVELS):
    """Approximate the improper integral of ``u(s) exp(-lam s)`` from 0 to omega.

    The horizon is chosen from ``u_max`` so the discarded tail is at most
    ``quad_tol/2``.  Panels are halved where needed: a panel is accepted
    once the difference between its value and the sum over its two halves
    is within its length-proportional share of ``quad_tol/2``.  Accepted
    panels are then graded so that no panel is more than twice as wide as
    a neighbour; otherwise a narrow feature sitting just past a refined
    region can fall between the nodes of a wide panel and go unnoticed.

    Features narrower than the node spacing of the first two levels (about
    a fifth of ``2 / max(1, |lam|)``) can be missed entirely; integrands are
    expected to be resolved at that scale.
    """
    tol = tol or Tolerances()
    lam = integrand.lam
    T = horizon(u_max, lam.real, tol.quad_tol)
    edges = np.linspace(0.0, T, initial_panels(T, lam) + 1)
    lo, hi = edges[:-1], edges[1:]
    ref = _Refiner(integrand, u_max, tol.quad_tol / 2 / T, edges[1] - edges[0], max_levels)
    coarse = ref.sums(lo, hi)
    a_lo, a_hi, a_val, a_err = ref.refine(lo, hi, coarse)
    while True:
        order = np.argsort(a_lo)
        a_lo, a_hi, a_val, a_err = a_lo[order], a_hi[order], a_val[order], a_err[order]
        width = a_hi - a_lo
        nbr = np.minimum(np.r_[np.inf, width[:-1]], np.r_[width[1:], np.inf])
        split = width > 2.0 * nbr * (1 + 1e-9)
        if not split.any():
            break
        keep = ~split
        lo, hi = a_lo[split], a_hi[split]
        mid = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        more = ref.refine(lo, hi, ref.sums(lo, hi))
        a_lo, a_hi, a_val, a_err = (np.concatenate([a[keep], b])
                                    for a, b in zip((a_lo, a_hi, a_val, a_err), more))
    total = a_val.sum(axis=0)
    estimate = float(a_err.sum())
    if ref.stalled and estimate > tol.quad_tol / 2:
        warnings.warn(
            f"panel halving stopped at depth {ref.levels} with estimate {estimate:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    plan = QuadPlan(T, tuple(sorted(set(a_lo.tolist()) | set(a_hi.tolist()))))
    if full_output:
        return total, QuadInfo(total, plan, estimate, ref.levels, ref.peak)
    return total


def damped_partial_integrals(h, lam, t, tol=None, *, max_levels=MAX_LEVELS):
    """Integrals ``int_0^t h(s) exp(lam (t - s)) ds`` for every ``t``.

    ``h`` is a time-parametrised function; the result has shape
    ``(*t.shape, m)``.
    """
    tol = tol or Tolerances()
    lam = arith_lambda(lam)
    t = np.asarray(t, dtype=float)
    flat = t.ravel()
    span = float(np.max(np.abs(flat))) if flat.size else 0.0
    panels = initial_panels(max(span, 1.0), lam)

    def level(panels):
        u, w = panel_rule(0.0, 1.0, panels)
        s = flat[None, :] * u[:, None]  # (K, Nt)
        vals = eval_curve(h, s)
        kern = w[:, None] * flat[None, :] * np.exp(lam * flat[None, :] * (1.0 - u[:, None]))
        value = np.einsum("kt,kt...->t...", kern, vals)
        mass = np.einsum("kt,kt...->t...", np.abs(kern), np.abs(vals))
        return value, mass

    coarse, _ = level(panels)
    for _ in range(max_levels):
        panels *= 2
        fine, mass = level(panels)
        # when the kernel grows like exp(|lam| t) the absolute target can sit
        # below the rounding error of the sum itself; accept at that floor
        floor = np.maximum(tol.quad_tol / 2, ROUNDOFF_ULPS * np.finfo(float).eps * mass)
        if np.all(np.abs(fine - coarse) <= floor):
            break
        coarse = fine
    return fine.reshape(t.shape + fine.shape[1:])
