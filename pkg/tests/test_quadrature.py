import math

import numpy as np
import pytest

from hustab.errors import BoundViolated, InvalidLambda
from hustab.numerics import (
    DampedIntegrand,
    Tolerances,
    damped_partial_integrals,
    horizon,
    quad_exp_decay,
    tail_bound,
)

from oracles import damped_integral

TOL = Tolerances()


def test_zero_integrand_is_exactly_zero():
    val = quad_exp_decay(DampedIntegrand(lambda s: np.zeros_like(s), 2.0), 1.0)
    assert val == 0.0


def test_constant_forward():
    val = quad_exp_decay(DampedIntegrand(lambda s: np.ones_like(s), 2.0), 1.0)
    assert abs(val - 0.5) <= TOL.quad_tol


def test_cos_plus_sin_backward_vanishes():
    u = DampedIntegrand(lambda s: np.cos(s) + np.sin(s), -1.0)
    assert abs(quad_exp_decay(u, math.sqrt(2))) <= TOL.quad_tol


@pytest.mark.parametrize("lam", [0.5 + 1j, -0.5 - 2j, 3.0, -1.5])
def test_against_quadpack(lam):
    def u(s):
        return np.cos(1.3 * s) / (1 + 0.1 * s * s)

    got = complex(quad_exp_decay(DampedIntegrand(u, lam), 1.0))
    sign = 1 if complex(lam).real > 0 else -1
    expected = damped_integral(u, lam, sign)
    assert abs(got - expected) < 1e-9


def test_vector_valued_batch():
    def u(s):
        return np.stack([np.ones_like(s), np.sin(s)], axis=-1)

    got = quad_exp_decay(DampedIntegrand(u, 1.0), 1.0)
    np.testing.assert_allclose(got, [1.0, 0.5], atol=1e-10)


def test_zero_real_part_rejected():
    with pytest.raises(InvalidLambda):
        DampedIntegrand(lambda s: s, 2j)


def test_bound_violation_detected():
    with pytest.raises(BoundViolated):
        quad_exp_decay(DampedIntegrand(lambda s: 5.0 * np.ones_like(s), 1.0), 1.0)


def test_full_output_reports_plan():
    val, info = quad_exp_decay(DampedIntegrand(lambda s: np.exp(-s * s), 1.0), 1.0,
                               full_output=True)
    assert info.estimate <= TOL.quad_tol / 2
    assert info.plan.edges[0] == 0.0 and info.plan.edges[-1] == info.plan.horizon
    assert np.all(np.diff(info.plan.edges) > 0)
    assert tail_bound(1.0, 1.0, info.plan.horizon) <= TOL.quad_tol / 2 * (1 + 1e-12)


def test_horizon_is_clamped():
    assert horizon(0.0, 1.0, 1e-10) == 1.0
    assert horizon(1e300, 1e-6, 1e-10) == 1e4


def test_partial_integrals_closed_form():
    # int_0^t cos(s) e^{-(t-s)} ds = (cos t + sin t - e^{-t}) / 2
    t = np.linspace(-3, 3, 13)
    got = damped_partial_integrals(lambda s: np.cos(s), -1.0, t)[..., 0]
    expected = (np.cos(t) + np.sin(t) - np.exp(-t)) / 2
    np.testing.assert_allclose(got, expected, atol=1e-9)


@pytest.mark.parametrize("lam", [-2.0, 2.0])
def test_partial_integrals_with_growing_kernel(lam):
    # int_0^t cos(s) e^{lam (t - s)} ds = (sin t - lam cos t + lam e^{lam t}) / (lam^2 + 1);
    # for t*lam > 0 the kernel reaches e^{10}, so the sum's rounding error
    # exceeds an absolute 1e-12 and only a relative floor is attainable
    t = np.linspace(-5, 5, 41)
    got = damped_partial_integrals(np.cos, lam, t, Tolerances(quad_tol=1e-12))[:, 0]
    exact = (np.sin(t) - lam * np.cos(t) + lam * np.exp(lam * t)) / (lam * lam + 1)
    np.testing.assert_allclose(got, exact, rtol=1e-13, atol=1e-12)
