"""Coordinate domains, vector fields, their flows, and the example catalog."""
import threading
from collections import OrderedDict
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import DomainExit, InvalidParams
from .numerics import Tolerances, solve_ivp

FIELD_KINDS = ("euler", "affine", "rotation", "bump", "geodesic", "custom")


@dataclass(frozen=True)
class Domain:
    """A coordinate chart in R^n given by a membership predicate."""

    dim: int
    contains: Callable
    description: str


def euclidean_space(n):
    return Domain(n, lambda x: np.ones(np.shape(x)[:-1], dtype=bool), f"R^{n}")


def positive_orthant(n):
    return Domain(n, lambda x: np.all(np.asarray(x) > 0, axis=-1), f"R^{n}_+")


@dataclass(frozen=True)
class VectorField:
    """A C^1 field on a coordinate domain.

    ``eval`` maps points of shape ``(..., n)`` to vectors of the same shape.
    ``closed_form_flow(t, x)`` broadcasts ``t`` of shape ``S`` against ``x``
    of shape ``S + (n,)``.
    """

    domain: Domain
    eval: Callable
    closed_form_flow: Optional[Callable] = None
    kind: str = "custom"
    params: dict = dc_field(default_factory=dict, compare=False)

    @property
    def dim(self):
        return self.domain.dim

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=float))

    def check_closed_form(self, points, h=1e-5):
        """Max deviation between d/dt of the closed-form flow at 0 and ``eval``."""
        if self.closed_form_flow is None:
            return 0.0
        x = np.atleast_2d(np.asarray(points, dtype=float))
        t = np.full(x.shape[:-1], h)
        deriv = (self.closed_form_flow(t, x) - self.closed_form_flow(-t, x)) / (2 * h)
        return float(np.max(np.abs(deriv - self.eval(x))))


# -- catalog -------------------------------------------------------------------

def _check_homogeneous(g, n, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 3.0, size=(16, n))
    gx = np.asarray(g(x), dtype=float)
    for c in (0.25, 0.5, 2.0, 4.0, 10.0):
        if np.max(np.abs(np.asarray(g(c * x), dtype=float) - gx)) > 1e-8:
            raise InvalidParams(f"g is not homogeneous of degree zero (g({c}x) != g(x))")


def euler_field(g, dim):
    """Field ``x -> g(x) x`` on the positive orthant, g homogeneous of degree 0."""
    _check_homogeneous(g, dim)

    def ev(x):
        return np.asarray(g(x))[..., None] * x

    def flow(t, x):
        return np.exp(np.asarray(t)[..., None] * np.asarray(g(x))[..., None]) * x

    return VectorField(positive_orthant(dim), ev, flow, "euler", {"dim": dim, "g": g})


def _affine_propagator(M):
    """Return ``(t, x) -> e^{tM} x`` vectorised over broadcast times and points."""
    n = M.shape[0]
    if not M.any():
        return lambda t, x: np.broadcast_to(x, np.broadcast_shapes(np.shape(t) + (n,), np.shape(x)))
    w, V = np.linalg.eig(M)
    if np.linalg.cond(V) < 1e6:
        Vinv = np.linalg.inv(V)
        real = np.isrealobj(M)

        def prop(t, x):
            t = np.asarray(t, dtype=float)
            coords = np.asarray(x) @ Vinv.T
            out = (np.exp(t[..., None] * w) * coords) @ V.T
            return out.real if real else out

        return prop

    def prop(t, x):
        t = np.asarray(t, dtype=float)
        uniq, inv = np.unique(t.ravel(), return_inverse=True)
        mats = scipy.linalg.expm(uniq[:, None, None] * M)[inv].reshape(t.shape + (n, n))
        return np.einsum("...ij,...j->...i", mats, x)

    return prop


def affine_field(matrix, offset):
    """Field ``x -> Mx + v``; requires ``Mv = 0`` so the flow is ``e^{tM}x + tv``."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    v = np.asarray(offset, dtype=float).ravel()
    n = M.shape[0]
    if M.shape != (n, n) or v.shape != (n,):
        raise InvalidParams(f"affine field needs an n x n matrix and an n-vector, got {M.shape}, {v.shape}")
    defect = np.max(np.abs(M @ v), initial=0.0)
    if defect > 1e-12:
        raise InvalidParams(f"affine field requires Mv = 0, got |Mv| = {defect:.3e}")
    prop = _affine_propagator(M)

    def ev(x):
        return x @ M.T + v

    def flow(t, x):
        t = np.asarray(t, dtype=float)
        return prop(t, x) + t[..., None] * v

    return VectorField(euclidean_space(n), ev, flow, "affine", {"matrix": M.tolist(), "offset": v.tolist()})


def rotation_field(rates):
    """Block-diagonal skew field on R^{2k}; every orbit is periodic."""
    rates = np.asarray(rates, dtype=float).ravel()
    if rates.size == 0:
        raise InvalidParams("rotation field needs at least one angular rate")
    n = 2 * rates.size

    def ev(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0::2] = -rates * x[..., 1::2]
        out[..., 1::2] = rates * x[..., 0::2]
        return out

    def flow(t, x):
        ang = np.asarray(t, dtype=float)[..., None] * rates
        c, s = np.cos(ang), np.sin(ang)
        x = np.asarray(x, dtype=float)
        a, b = x[..., 0::2], x[..., 1::2]
        out = np.empty(np.broadcast_shapes(np.shape(ang)[:-1] + (n,), x.shape))
        out[..., 0::2] = c * a - s * b
        out[..., 1::2] = s * a + c * b
        return out

    return VectorField(euclidean_space(n), ev, flow, "rotation", {"rates": rates.tolist()})


def bump_profile(rho):
    """Smooth compactly supported profile, 1 at rho=0 and 0 for rho >= 1."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    inside = rho < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - rho[inside] ** 2))
    return out


def bump_field(center, radius, direction):
    """Constant direction scaled by a bump; compact support makes it complete."""
    c = np.asarray(center, dtype=float).ravel()
    d = np.asarray(direction, dtype=float).ravel()
    if c.shape != d.shape or radius <= 0:
        raise InvalidParams("bump field needs matching center/direction and radius > 0")

    def ev(x):
        off = np.asarray(x, dtype=float) - c
        rho = np.sqrt(np.einsum("...i,...i->...", off, off)) / radius
        return bump_profile(rho)[..., None] * d

    return VectorField(euclidean_space(c.size), ev, None, "bump",
                       {"center": c.tolist(), "radius": float(radius), "direction": d.tolist()})


def flat_christoffel(k):
    return lambda x: np.zeros(np.shape(x)[:-1] + (k, k, k))


def conformal_gaussian_christoffel(k, amplitude, width):
    """Christoffel symbols of ``exp(2 phi) delta`` with ``phi = a exp(-|x|^2/w^2)``.

    The conformal factor is bounded above and below, so the metric is
    complete and so is its geodesic field.
    """
    eye = np.eye(k)

    def grad_phi(x):
        x = np.asarray(x, dtype=float)
        phi = amplitude * np.exp(-np.einsum("...i,...i->...", x, x) / width**2)
        return (-2.0 / width**2) * phi[..., None] * x

    def gamma(x):
        grad = grad_phi(x)
        return (np.einsum("ij,...k->...ijk", eye, grad)
                + np.einsum("ik,...j->...ijk", eye, grad)
                - np.einsum("jk,...i->...ijk", eye, grad))

    def contract(x, v):
        # Gamma^i_jl v^j v^l collapses to 2 (grad phi . v) v - |v|^2 grad phi
        grad = grad_phi(x)
        gv = np.einsum("...i,...i->...", grad, v)[..., None]
        return 2.0 * gv * v - np.einsum("...i,...i->...", v, v)[..., None] * grad

    gamma.contract = contract
    return gamma


def geodesic_field(k, christoffel):
    """Geodesic spray on the tangent bundle coordinates ``(x, v)`` in R^{2k}."""
    if k < 1:
        raise InvalidParams("geodesic field needs base dimension k >= 1")

    # presets may supply Gamma(x)(v, v) directly instead of the full tensor
    contract = getattr(christoffel, "contract", None)

    def ev(z):
        z = np.asarray(z, dtype=float)
        x, v = z[..., :k], z[..., k:]
        if contract is not None:
            acc = -contract(x, v)
        else:
            gv = np.matmul(christoffel(x), v[..., None, :, None])[..., 0]
            acc = -np.matmul(gv, v[..., None])[..., 0]
        return np.concatenate([v, acc], axis=-1)

    return VectorField(euclidean_space(2 * k), ev, None, "geodesic", {"k": k, "christoffel": christoffel})


CATALOG = {
    "euler": ("x -> g(x) x on R^n_+, g homogeneous of degree zero; flow e^{t g(x)} x",
              {"dim": "int", "g": "callable or preset {kind: constant|ratio}"}),
    "affine": ("x -> M x + v with M v = 0; flow e^{tM} x + t v",
               {"matrix": "n x n array", "offset": "n-vector"}),
    "rotation": ("block-diagonal skew field on R^{2k}; periodic orbits",
                 {"rates": "k angular rates"}),
    "bump": ("compactly supported field profile(|x-c|/r) d; no closed form",
             {"center": "n-vector", "radius": "float > 0", "direction": "n-vector"}),
    "geodesic": ("geodesic spray on R^{2k} from Christoffel symbols; no closed form",
                 {"k": "int", "christoffel": "callable or preset {kind: flat|conformal_gaussian}"}),
}


def catalog_field(kind, **params):
    """Build a catalog field from its kind tag and parameters."""
    try:
        if kind == "euler":
            return euler_field(params["g"], int(params["dim"]))
        if kind == "affine":
            return affine_field(params["matrix"], params["offset"])
        if kind == "rotation":
            return rotation_field(params["rates"])
        if kind == "bump":
            return bump_field(params["center"], float(params["radius"]), params["direction"])
        if kind == "geodesic":
            return geodesic_field(int(params["k"]), params["christoffel"])
    except KeyError as exc:
        raise InvalidParams(f"{kind} field is missing parameter {exc.args[0]!r}") from None
    raise InvalidParams(f"unknown field kind {kind!r}; expected one of {sorted(CATALOG)}")


# -- flows ---------------------------------------------------------------------

class OrbitBundle:
    """Orbits of a batch of base points, evaluable at per-point times.

    Numerical bundles hold a forward and a backward trajectory per chunk of
    points and extend them on demand.
    """

    CHUNK = 512

    def __init__(self, flow, points):
        self.flow = flow
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.npoints, self.dim = self.points.shape
        self._lock = threading.Lock()
        self._fwd = [None] * self._nchunks()
        self._bwd = [None] * self._nchunks()
        if not np.all(flow.field.domain.contains(self.points)):
            raise DomainExit(f"base point outside {flow.field.domain.description}")

    def _nchunks(self):
        return max(1, -(-self.npoints // self.CHUNK))

    def _chunk_traj(self, store, i, t_target):
        sl = slice(i * self.CHUNK, (i + 1) * self.CHUNK)
        traj = store[i]
        if traj is None:
            traj = solve_ivp(self.flow.field.eval, self.points[sl], t_target, self.flow.tol,
                             self.flow.field.domain)
            store[i] = traj
        elif abs(traj.t_final) < abs(t_target):
            traj.extend(t_target)
        return traj

    def subset(self, rows):
        """View on a contiguous slice of base points sharing these trajectories."""
        return BundleView(self, rows)

    def positions(self, times, rows=slice(None)):
        """Positions at ``times`` of shape ``(N, ...)`` (or broadcastable).

        ``rows`` restricts the query to a contiguous slice of base points.
        """
        start, stop, _ = rows.indices(self.npoints)
        count = stop - start
        times = np.asarray(times, dtype=float)
        if times.ndim == 0 or times.shape[0] != count:
            times = np.broadcast_to(times, (count,) + times.shape)
        cf = self.flow.field.closed_form_flow
        if self.flow.use_closed_form and cf is not None:
            x = self.points[start:stop].reshape((count,) + (1,) * (times.ndim - 1) + (self.dim,))
            out = np.array(np.broadcast_to(cf(times, x), times.shape + (self.dim,)))
            # Phi(0, x) = x exactly, independent of roundoff in the closed form
            zero = times == 0
            if zero.any():
                out[zero] = np.broadcast_to(x, out.shape)[zero]
            return out
        out = np.empty(times.shape + (self.dim,))
        for i in range(start // self.CHUNK, -(-stop // self.CHUNK)):
            lo, hi = max(start, i * self.CHUNK), min(stop, (i + 1) * self.CHUNK)
            t = times[lo - start:hi - start]
            tmax, tmin = float(t.max(initial=0.0)), float(t.min(initial=0.0))
            with self._lock:
                fwd = self._chunk_traj(self._fwd, i, tmax) if tmax > 0 else None
                bwd = self._chunk_traj(self._bwd, i, tmin) if tmin < 0 else None
            local = slice(lo - i * self.CHUNK, hi - i * self.CHUNK)
            dest = slice(lo - start, hi - start)
            width = min(self.npoints, (i + 1) * self.CHUNK) - i * self.CHUNK
            if hi - lo != width:
                # trajectories cover the whole chunk; pad the other rows with t = 0
                padded = np.zeros((width,) + t.shape[1:])
                padded[local] = t
                t = padded
            else:
                local = slice(None)
            if bwd is None:
                if fwd is not None:
                    out[dest] = fwd.at(np.maximum(t, 0.0))[local]
                else:
                    out[dest] = self.points[lo:hi].reshape((-1,) + (1,) * (times.ndim - 1) + (self.dim,))
            elif fwd is None:
                out[dest] = bwd.at(np.minimum(t, 0.0))[local]
            else:
                pos = fwd.at(np.maximum(t, 0.0))[local]
                neg = bwd.at(np.minimum(t, 0.0))[local]
                out[dest] = np.where((t[local] >= 0)[..., None], pos, neg)
        return out


class BundleView:
    """A contiguous slice of an :class:`OrbitBundle`."""

    def __init__(self, bundle, rows):
        start, stop, step = rows.indices(bundle.npoints)
        if step != 1:
            raise ValueError("bundle views need a contiguous slice")
        self.bundle = bundle
        self.rows = slice(start, stop)
        self.flow = bundle.flow
        self.points = bundle.points[self.rows]
        self.npoints, self.dim = self.points.shape

    def subset(self, rows):
        start, stop, _ = rows.indices(self.npoints)
        return BundleView(self.bundle, slice(self.rows.start + start, self.rows.start + stop))

    def positions(self, times):
        return self.bundle.positions(times, self.rows)


class FlowMap:
    """The flow of a vector field, closed-form when available.

    Orbit bundles are cached by base points; the cache is guarded by a lock
    so concurrent readers and inserters are safe.  ``cache=False`` gives the
    pure mode where every request integrates afresh.
    """

    def __init__(self, field, tol=None, *, use_closed_form=True, cache=True, max_cached=64):
        self.field = field
        self.tol = tol or Tolerances()
        self.use_closed_form = use_closed_form
        self.cache = cache
        self.max_cached = max_cached
        self._bundles = OrderedDict()
        self._lock = threading.Lock()

    @property
    def numerical(self):
        return not (self.use_closed_form and self.field.closed_form_flow is not None)

    def orbits(self, points, cache=None):
        points = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
        use_cache = self.cache if cache is None else cache
        if not use_cache or not self.numerical:
            return OrbitBundle(self, points)
        key = (points.shape, points.tobytes())
        with self._lock:
            bundle = self._bundles.get(key)
            if bundle is not None:
                self._bundles.move_to_end(key)
                return bundle
        bundle = OrbitBundle(self, points)
        with self._lock:
            bundle = self._bundles.setdefault(key, bundle)
            while len(self._bundles) > self.max_cached:
                self._bundles.popitem(last=False)
        return bundle

    def flow_at(self, t, x):
        """Evaluate Phi(t, x) for a single point and scalar or array ``t``."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if not np.all(self.field.domain.contains(x)):
            raise DomainExit(f"{x} is outside {self.field.domain.description}")
        if np.all(t == 0):
            return np.broadcast_to(x, t.shape + x.shape).copy()
        return self.orbits(x[None]).positions(t[None])[0]


def check_semigroup(flow, samples):
    """Max over ``(t, s, x)`` of |Phi(t+s, x) - Phi(t, Phi(s, x))|."""
    if not samples:
        return 0.0
    t = np.array([smp[0] for smp in samples], dtype=float)
    s = np.array([smp[1] for smp in samples], dtype=float)
    x = np.array([np.asarray(smp[2], dtype=float) for smp in samples])
    base = flow.orbits(x, cache=False)
    direct = base.positions((t + s)[:, None])[:, 0]
    mid = base.positions(s[:, None])[:, 0]
    composed = flow.orbits(mid, cache=False).positions(t[:, None])[:, 0]
    return float(np.max(np.linalg.norm(direct - composed, axis=-1)))
