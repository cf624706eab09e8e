"""Residuals, the one-dimensional correction, and the correction along a flow.

For an approximate solution ``y`` of ``Vy = lam*y + f`` the exact solution
nearby is

    z(x) = y(x) + int_0^omega alpha(Phi(s, x)) exp(-lam s) ds,

where ``alpha = Vy - lam*y - f`` is the defect and omega is +inf or -inf
according to the sign of ``Re lam``.  Along a single orbit this reduces to
the scalar formula implemented by :func:`lemma1_correct`.
"""
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .errors import BoundViolated, InvalidLambda
from .geometry import VectorField
from .numerics import (
    DampedIntegrand,
    QuadPlan,
    Tolerances,
    arith_lambda,
    damped_partial_integrals,
    directional_derivative,
    eval_curve,
    horizon,
    quad_exp_decay,
    require_nonzero_real,
)
from .numerics.quadrature import initial_panels, panel_rule

NORMS = {
    "max": lambda v: np.max(np.abs(v), axis=-1),
    "euclidean": lambda v: np.linalg.norm(v, axis=-1),
}

# Safety factor on the sampled residual used as the quadrature tail bound.
BOUND_SAFETY = 1.5
# Presampling covers the horizon of this multiple of the peak seen so far, so
# small increases found along the way do not force another round.
PRESAMPLE_HEADROOM = 4.0
# Orbit samples per adaptive quadrature batch when evaluating corrections.
CHUNK_ROWS = 2048


def hus_bound(epsilon, lam):
    """Stability bound ``epsilon / |Re lam|``."""
    lam = complex(lam)
    if lam.real == 0.0:
        raise InvalidLambda("the stability constant 1/|Re lambda| needs Re(lambda) != 0")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    return epsilon / abs(lam.real)


def _as_vectors(values, lead_shape):
    values = np.asarray(values)
    if values.shape == tuple(lead_shape):
        values = values[..., None]
    return values


@dataclass(frozen=True)
class StabilityProblem:
    """The equation ``Vy = lam*y + f`` with the norm used for sup-norms."""

    field: VectorField
    lam: complex
    forcing: Optional[Callable] = None
    norm: str = "max"

    def __post_init__(self):
        lam = complex(self.lam)
        if lam.real == 0.0:
            raise InvalidLambda(
                f"lambda={lam} has zero real part; the correction requires Re(lambda) != 0"
            )
        object.__setattr__(self, "lam", lam)
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {sorted(NORMS)}")

    @property
    def omega_sign(self):
        return 1 if self.lam.real > 0 else -1

    def f(self, points, m):
        points = np.asarray(points, dtype=float)
        if self.forcing is None:
            return np.zeros(points.shape[:-1] + (m,))
        return _as_vectors(self.forcing(points), points.shape[:-1])

    def size(self, v):
        """Pointwise norm over the trailing component axis."""
        return NORMS[self.norm](np.asarray(v))


class CandidateSolution:
    """A function ``y`` on the domain with optional analytic Jacobian.

    ``value`` maps points ``(..., n)`` to ``(..., m)``; ``gradient`` maps them
    to ``(..., m, n)``.
    """

    def __init__(self, value, gradient=None):
        self.value = value
        self.gradient = gradient

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        return _as_vectors(self.value(points), points.shape[:-1])

    def on_orbit(self, bundle, times):
        """Values at ``Phi(times, x)`` for the base points of ``bundle``."""
        return self(bundle.positions(times))

    def check_gradient(self, points, h=1e-6):
        """Max deviation between ``gradient`` and a central-difference Jacobian."""
        if self.gradient is None:
            return 0.0
        x = np.atleast_2d(np.asarray(points, dtype=float))
        n = x.shape[-1]
        cols = []
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            cols.append((self(x + e) - self(x - e)) / (2 * h))
        fd = np.stack(cols, axis=-1)
        return float(np.max(np.abs(fd - np.asarray(self.gradient(x)))))


def _fd_step(tol):
    return tol.fd_step_scale


def orbit_derivative(problem, y, bundle, times, tol):
    """``Vy`` at ``Phi(times, x)``: Jacobian times field, or a central difference
    of ``r -> y(Phi(times + r, x))`` at ``r = 0``."""
    times = np.asarray(times, dtype=float)
    if y.gradient is not None:
        return _jacobian_derivative(problem, y, bundle.positions(times))
    h = _fd_step(tol)
    both = y.on_orbit(bundle, np.stack([times + h, times - h], axis=1))
    return (both[:, 0] - both[:, 1]) / (2 * h)


def _jacobian_derivative(problem, y, pts):
    jac = np.asarray(y.gradient(pts))
    return np.matmul(jac, problem.field(pts)[..., None])[..., 0]


def orbit_residual(problem, y, bundle, times, tol):
    """Defect ``alpha = Vy - lam*y - f`` at ``Phi(times, x)``; shape ``(N, ..., m)``."""
    times = np.asarray(times, dtype=float)
    if times.ndim == 0 or times.shape[0] != bundle.npoints:
        times = np.broadcast_to(times, (bundle.npoints,) + times.shape)
    lam = arith_lambda(problem.lam)
    pts = None
    if y.gradient is not None and type(y).on_orbit is CandidateSolution.on_orbit:
        # a pointwise candidate: one position lookup serves every term
        pts = bundle.positions(times)
        yv = y(pts)
        vy = _jacobian_derivative(problem, y, pts)
    else:
        vy = orbit_derivative(problem, y, bundle, times, tol)
        yv = y.on_orbit(bundle, times)
    out = vy - lam * yv
    if problem.forcing is not None:
        if pts is None:
            pts = bundle.positions(times)
        out = out - problem.f(pts, yv.shape[-1])
    return out


def residual_field(problem, y, flow, tol=None):
    """Return the defect ``x -> Vy(x) - lam*y(x) - f(x)`` as a function."""
    tol = tol or flow.tol

    def alpha(points):
        points = np.asarray(points, dtype=float)
        lead = points.shape[:-1]
        flat = points.reshape(-1, points.shape[-1])
        bundle = flow.orbits(flat)
        vals = orbit_residual(problem, y, bundle, np.zeros((len(flat), 1)), tol)[:, 0]
        return vals.reshape(lead + vals.shape[-1:])

    return alpha


class CorrectedSolution(CandidateSolution):
    """The exact solution ``z`` built from ``y``; evaluates lazily anywhere.

    Each evaluation batch runs its own adaptive quadrature, with all query
    times of one base point sharing a panel layout.  Finite differences of
    ``z`` along an orbit therefore see one fixed, smooth quadrature rule, so
    ``z`` can be differentiated along orbits or corrected again.
    """

    def __init__(self, problem, base, flow, plan, u_max, tol):
        super().__init__(self._value)
        self.problem = problem
        self.base = base
        self.flow = flow
        self.plan = plan
        self.u_max = u_max
        self.tol = tol

    def _value(self, points):
        points = np.asarray(points, dtype=float)
        lead = points.shape[:-1]
        flat = points.reshape(-1, points.shape[-1])
        z = self.on_orbit(self.flow.orbits(flat), np.zeros((len(flat), 1)))[:, 0]
        return z.reshape(lead + z.shape[-1:])

    def _correction_block(self, bundle, rows, times):
        sub = bundle.subset(rows)
        lam = self.problem.lam

        def alpha_at(s):
            return orbit_residual(self.problem, self.base, sub, times[:, :, None] + s, self.tol)

        peak = float(np.max(np.abs(alpha_at(np.zeros(1))), initial=0.0))
        u_max = max(self.u_max, _presample_bound(alpha_at, lam, self.tol, peak))
        integrand = DampedIntegrand(lambda s: np.moveaxis(alpha_at(s), 2, 0), lam)
        return quad_exp_decay(integrand, u_max, self.tol)

    def correction_on_orbit(self, bundle, times):
        """``z - y`` at ``Phi(times, x)``, i.e. the damped integral of the defect."""
        times = np.asarray(times, dtype=float)
        if times.ndim == 0 or times.shape[0] != bundle.npoints:
            times = np.broadcast_to(times, (bundle.npoints,) + times.shape)
        lead = times.shape
        flat = times.reshape(bundle.npoints, -1)
        rows_per_block = max(1, CHUNK_ROWS // max(1, flat.shape[1]))
        parts = []
        for r0 in range(0, bundle.npoints, rows_per_block):
            rows = slice(r0, min(bundle.npoints, r0 + rows_per_block))
            parts.append(self._correction_block(bundle, rows, flat[rows]))
        total = np.concatenate(parts)
        return total.reshape(lead + total.shape[-1:])

    def on_orbit(self, bundle, times):
        return self.base.on_orbit(bundle, times) + self.correction_on_orbit(bundle, times)


@dataclass
class CorrectionResult:
    """Outcome of the correction at a set of evaluation points.

    Sup-norms are maxima over finite samples (``sample_count`` points).
    """

    corrected: CorrectedSolution
    epsilon_measured: float
    bound: float
    distance_measured: float
    omega_sign: int
    lam: complex
    eval_points: np.ndarray
    y_values: np.ndarray
    z_values: np.ndarray
    sample_count: int
    u_max: float
    plan: QuadPlan
    quad_estimate: float
    epsilon_cap: Optional[float] = None
    warnings: list = dc_field(default_factory=list)

    @property
    def within_bound(self):
        return self.distance_measured <= self.bound

    def summary(self):
        return {
            "epsilon_measured": self.epsilon_measured,
            "bound": self.bound,
            "distance_measured": self.distance_measured,
            "omega_sign": self.omega_sign,
            "lambda": {"re": self.lam.real, "im": self.lam.imag},
            "sample_count": self.sample_count,
            "u_max": self.u_max,
            "horizon": self.plan.horizon,
            "panels": self.plan.panels,
            "quad_estimate": self.quad_estimate,
            "epsilon_cap": self.epsilon_cap,
            "warnings": list(self.warnings),
        }


def _presample_bound(alpha_at, lam, tol, initial_peak, max_rounds=8):
    """Sampled proxy for sup|alpha| toward omega, grown until the horizon settles."""
    sign = 1 if lam.real > 0 else -1
    peak = initial_peak
    for _ in range(max_rounds):
        covered = PRESAMPLE_HEADROOM * peak
        T = horizon(BOUND_SAFETY * covered, lam.real, tol.quad_tol)
        nodes, _w = panel_rule(0.0, T, initial_panels(T, lam))
        with np.errstate(over="ignore", invalid="ignore"):
            sampled = np.abs(alpha_at(sign * nodes))
        if not np.all(np.isfinite(sampled)):
            raise BoundViolated("the defect overflows along an orbit; it is not bounded toward omega")
        peak = max(peak, float(np.max(sampled, initial=0.0)))
        # the quadrature horizon for this peak lies inside the sampled window
        if peak <= covered:
            break
    return BOUND_SAFETY * peak


def theorem1_correct(problem, y, flow, eval_points, tol=None, *, verify_points=None,
                     u_max=None, epsilon_cap=None):
    """Correct ``y`` into the exact solution ``z`` and measure the HUS bound.

    ``epsilon_measured`` is the max of |alpha| over ``verify_points``
    (default: the evaluation points); ``distance_measured`` is the max of
    |y - z| over the evaluation points.
    """
    tol = tol or flow.tol
    lam = problem.lam
    X = np.atleast_2d(np.asarray(eval_points, dtype=float))
    bundle = flow.orbits(X)
    alpha0 = orbit_residual(problem, y, bundle, np.zeros((len(X), 1)), tol)[:, 0]

    def alpha_along(s):
        return orbit_residual(problem, y, bundle, np.broadcast_to(s, (len(X),) + s.shape), tol)

    if u_max is None:
        u_max = _presample_bound(alpha_along, lam, tol, float(np.max(np.abs(alpha0), initial=0.0)))

    integrand = DampedIntegrand(lambda s: np.moveaxis(alpha_along(s), 1, 0), lam)
    delta, info = quad_exp_decay(integrand, u_max, tol, full_output=True)
    y_vals = y.on_orbit(bundle, np.zeros((len(X), 1)))[:, 0]
    z_vals = y_vals + delta
    if np.isrealobj(y_vals) and lam.imag == 0 and np.iscomplexobj(z_vals):
        z_vals = z_vals.real

    if verify_points is None:
        alpha_v = alpha0
        n_verify = len(X)
    else:
        V = np.atleast_2d(np.asarray(verify_points, dtype=float))
        alpha_v = residual_field(problem, y, flow, tol)(V)
        n_verify = len(V)
    eps = float(np.max(problem.size(alpha_v), initial=0.0))
    dist = float(np.max(problem.size(delta), initial=0.0))
    notes = []
    if epsilon_cap is not None and eps > epsilon_cap:
        notes.append(f"measured epsilon {eps:.3e} exceeds the supplied cap {epsilon_cap:.3e}")
    corrected = CorrectedSolution(problem, y, flow, info.plan, u_max, tol)
    return CorrectionResult(
        corrected=corrected,
        epsilon_measured=eps,
        bound=hus_bound(eps, lam),
        distance_measured=dist,
        omega_sign=problem.omega_sign,
        lam=lam,
        eval_points=X,
        y_values=y_vals,
        z_values=z_vals,
        sample_count=n_verify,
        u_max=u_max,
        plan=info.plan,
        quad_estimate=info.estimate,
        epsilon_cap=epsilon_cap,
        warnings=notes,
    )


def lemma1_correct(a, h, lam, a0_time=0.0, tol=None, *, alpha_bound=None,
                   window=(-5.0, 5.0), samples=201):
    """One-dimensional correction of ``a' = lam*a + h``.

    Returns ``(b, sup_distance)`` where ``b`` is the unique solution of
    ``b' = lam*b + h`` staying at bounded distance from ``a`` and
    ``sup_distance`` is ``max |a - b|`` sampled on ``window``.
    ``h=None`` means the zero forcing.
    """
    tol = tol or Tolerances()
    lam = require_nonzero_real(lam)
    lam_a = arith_lambda(lam)
    t0 = float(a0_time)
    m = eval_curve(a, np.array([t0])).shape[-1]

    def h_of(s):
        if h is None:
            return np.zeros(np.shape(s) + (m,))
        return eval_curve(h, s)

    def alpha(s):
        s = np.asarray(s, dtype=float)
        da = directional_derivative(lambda r: eval_curve(a, r), s, tol.fd_step_scale)
        return da - lam_a * eval_curve(a, s) - h_of(s)

    if alpha_bound is None:
        peak = float(np.max(np.abs(alpha(np.array([t0]))), initial=0.0))
        alpha_bound = _presample_bound(lambda s: alpha(t0 + s), lam, tol, peak)
    tail = quad_exp_decay(DampedIntegrand(lambda s: alpha(t0 + s), lam), alpha_bound, tol)
    start = eval_curve(a, np.array([t0]))[0] + tail

    def b(t):
        t = np.asarray(t, dtype=float)
        growth = np.exp(lam_a * (t - t0))[..., None] * start
        forced = damped_partial_integrals(lambda r: h_of(t0 + r), lam_a, t - t0, tol)
        return growth + forced

    grid = np.linspace(window[0], window[1], samples)
    diff = eval_curve(a, grid) - b(grid)
    sup_distance = float(np.max(np.max(np.abs(diff), axis=-1)))
    return b, sup_distance


def orbit_curve(flow, x):
    """``s -> Phi(s, x)`` as a vectorised function of time."""
    bundle = flow.orbits(np.asarray(x, dtype=float)[None])

    def curve(s):
        s = np.asarray(s, dtype=float)
        return bundle.positions(s.reshape(1, -1))[0].reshape(s.shape + (bundle.dim,))

    return curve


def check_flow_compatibility(problem, y, flow, result, samples, tol=None):
    """Max over ``(t, x)`` of |z(Phi(t, x)) - b_x(t)|.

    ``b_x`` comes from :func:`lemma1_correct` on ``a_x = y o Phi(., x)`` and
    ``h = f o Phi(., x)``, independently of the correction that built ``z``.
    """
    tol = tol or flow.tol
    groups = {}
    for t, x in samples:
        x = np.asarray(x, dtype=float)
        groups.setdefault(x.tobytes(), (x, []))[1].append(float(t))
    worst = 0.0
    for x, times in groups.values():
        times = np.asarray(times)
        curve = orbit_curve(flow, x)
        m = np.asarray(y(x[None])).shape[-1]
        b, _ = lemma1_correct(
            lambda s: y(curve(s)),
            None if problem.forcing is None else (lambda s: problem.f(curve(s), m)),
            problem.lam, 0.0, tol, window=(float(times.min()), float(times.max())),
            samples=len(times),
        )
        z_side = result.corrected(curve(times))
        defect = problem.size(z_side - b(times))
        worst = max(worst, float(np.max(defect)))
    return worst
