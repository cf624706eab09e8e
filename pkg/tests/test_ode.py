import math

import numpy as np
import pytest

from hustab.errors import DomainExit, StepUnderflow
from hustab.geometry import positive_orthant
from hustab.numerics import Tolerances, solve_ivp

from oracles import dop853_flow, rotation


def rot(x):
    return np.array([-x[..., 1], x[..., 0]]).T if np.ndim(x) > 1 else np.array([-x[1], x[0]])


def test_exponential_growth_reaches_four(backend):
    traj = solve_ivp(lambda x: x, np.array([2.0]), math.log(2))
    assert abs(traj.at(math.log(2))[0] - 4.0) < 1e-8


def test_zero_time_keeps_single_state(backend):
    traj = solve_ivp(rot, np.array([1.0, 0.5]), 0.0)
    assert traj.nsteps == 0
    np.testing.assert_array_equal(traj.states, [[1.0, 0.5]])
    np.testing.assert_array_equal(traj.at(0.0), [1.0, 0.5])


def test_quarter_rotation(backend):
    traj = solve_ivp(rot, np.array([1.0, 0.0]), math.pi / 2)
    np.testing.assert_allclose(traj.at(math.pi / 2), [0.0, 1.0], atol=1e-8)


def test_backward_time_matches_rotation_oracle(backend):
    x0 = np.array([0.3, -1.2])
    traj = solve_ivp(rot, x0, -2.5)
    for t in np.linspace(-2.5, 0, 7):
        np.testing.assert_allclose(traj.at(t), rotation(t, x0), atol=1e-8)


def test_dense_output_against_dop853(backend):
    def pendulum(x):
        return np.array([x[1], -math.sin(x[0])])

    x0 = np.array([1.0, 0.0])
    traj = solve_ivp(pendulum, x0, 6.0)
    for t in (0.37, 1.9, 4.41, 6.0):
        np.testing.assert_allclose(traj.at(t), dop853_flow(pendulum, t, x0), atol=1e-8)


def test_bundle_matches_individual_solves(backend):
    pts = np.array([[1.0, 0.0], [0.0, 2.0], [-1.5, 0.5]])
    bundle = solve_ivp(rot, pts, 3.0)
    times = np.array([[0.5, 3.0], [1.0, 2.0], [0.0, 2.9]])
    got = bundle.at(times)
    for i, x in enumerate(pts):
        for j, t in enumerate(times[i]):
            np.testing.assert_allclose(got[i, j], rotation(t, x), atol=1e-8)


def test_extend_continues_trajectory(backend):
    traj = solve_ivp(lambda x: -x, np.array([1.0]), 1.0)
    traj.extend(3.0)
    assert traj.t_final == 3.0
    assert abs(traj.at(3.0)[0] - math.exp(-3.0)) < 1e-9
    assert abs(traj.at(0.5)[0] - math.exp(-0.5)) < 1e-9


def test_query_outside_window_rejected(backend):
    traj = solve_ivp(lambda x: -x, np.array([1.0]), 1.0)
    with pytest.raises(ValueError):
        traj.at(1.5)


def test_domain_exit_raised(backend):
    # x' = -1 leaves the positive half-line at t = 1
    with pytest.raises(DomainExit):
        solve_ivp(lambda x: -np.ones_like(x), np.array([1.0]), 2.0, domain=positive_orthant(1))


def test_blow_up_underflows(backend):
    # x' = x^2 from 1 blows up at t = 1
    with pytest.raises(StepUnderflow):
        solve_ivp(lambda x: x * x, np.array([1.0]), 2.0)


def test_reversibility_tolerance(backend):
    tol = Tolerances()
    x0 = np.array([0.7, -0.4])
    fwd = solve_ivp(rot, x0, 4.0, tol)
    back = solve_ivp(rot, fwd.at(4.0), -4.0, tol)
    err = np.max(np.abs(back.at(-4.0) - x0))
    assert err <= 10 * (tol.ode_abs + tol.ode_rel * np.max(np.abs(x0)))


@pytest.mark.parametrize("span", [3e-148, -1e-20, 1e-9])
def test_tiny_span_is_one_short_step(backend, span):
    x0 = np.array([0.7, -0.4])
    traj = solve_ivp(rot, x0, span)
    np.testing.assert_allclose(traj.at(span), rotation(span, x0), atol=1e-15)


def test_start_next_to_the_origin(backend):
    # |y0| ~ 1e-16 makes the relative initial-step guess vanish
    x0 = np.array([0.0, 2.220446049250313e-16])
    traj = solve_ivp(lambda x: np.array([1.0, 0.5]) + 0 * x, x0, 1.0)
    np.testing.assert_allclose(traj.at(1.0), x0 + [1.0, 0.5], atol=1e-12)
