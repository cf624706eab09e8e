"""Backend selection for the hot kernels.

The compiled Cython module is used when it imports; otherwise the numpy
fallback is used.  Both expose ``dp45_integrate`` and ``dense_eval`` with
identical signatures.
"""
from . import _kernels_py as _python

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _python}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active = _compiled if _compiled is not None else _python


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return "compiled" if _active is _compiled else "python"


def use_backend(name):
    """Switch the active backend; returns the previously active name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available_backends()}")
    previous = backend_name()
    _active = _BACKENDS[name]
    return previous


def dp45_integrate(fun, y0, t_end, rtol, atol, h0=0.0, max_steps=1_000_000):
    return _active.dp45_integrate(fun, y0, t_end, rtol, atol, h0, max_steps)


def dense_eval(ts, ys, qs, n, tq):
    return _active.dense_eval(ts, ys, qs, n, tq)
