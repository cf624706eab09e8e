import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hustab.core import StabilityProblem, residual_field
from hustab.errors import InvalidConfig, StageError
from hustab.geometry import FlowMap
from hustab.harness import (
    ExperimentConfig,
    GridSpec,
    PerturbationSpec,
    build_field,
    config_matrix,
    default_config,
    estimate_sup_norm,
    make_candidate,
    make_perturbation,
    run_correction,
    run_experiment,
)

LINE_FIELD = {"kind": "affine", "matrix": [[0.0]], "offset": [1.0]}
ROT_FIELD = {"kind": "rotation", "rates": [1.0]}
BOX = GridSpec((-2.0, -2.0), (2.0, 2.0), (15, 15), 32)


def _problem_and_flow(config):
    field = build_field(config.field)
    return StabilityProblem(field, config.lam), FlowMap(field, config.tolerances)


# -- perturbations ---------------------------------------------------------------

@pytest.mark.parametrize("shape", ["constant", "sinusoidal", "bump", "random-smoothed"])
@pytest.mark.parametrize("magnitude", [0.0, 0.01, 0.3])
def test_perturbation_respects_magnitude(shape, magnitude):
    p = make_perturbation(PerturbationSpec(shape, magnitude, seed=11), BOX)
    dense = GridSpec(BOX.lower, BOX.upper, (61, 61), 256)
    sup, _ = estimate_sup_norm(p, dense)
    assert sup <= magnitude * (1 + 1e-9)


@pytest.mark.parametrize("shape", ["constant", "sinusoidal", "bump", "random-smoothed"])
def test_perturbation_gradient_is_consistent(shape):
    p = make_perturbation(PerturbationSpec(shape, 0.1, seed=5), BOX, m=2)
    pts = np.random.default_rng(0).uniform(-2, 2, size=(30, 2))
    assert p.check_gradient(pts) <= 1e-7


def test_perturbation_is_deterministic():
    spec = PerturbationSpec("random-smoothed", 0.1, seed=2**63 + 7)
    pts = BOX.points()
    np.testing.assert_array_equal(make_perturbation(spec, BOX)(pts),
                                  make_perturbation(spec, BOX)(pts))
    other = make_perturbation(dataclasses.replace(spec, seed=1), BOX)(pts)
    assert not np.array_equal(make_perturbation(spec, BOX)(pts), other)


def test_shape_aliases_and_validation():
    assert PerturbationSpec("sinusoidal-in-coordinates").shape == "sinusoidal"
    assert PerturbationSpec("uniform-random-smoothed").shape == "random-smoothed"
    with pytest.raises(InvalidConfig):
        PerturbationSpec("spiky")
    with pytest.raises(InvalidConfig):
        PerturbationSpec("bump", -0.1)
    with pytest.raises(InvalidConfig):
        PerturbationSpec("bump", 0.1, seed=2**64)


def test_wavevector_gives_coordinate_sine():
    p = make_perturbation(PerturbationSpec("sinusoidal", 0.5, wavevector=(1.0, 0.0)), BOX)
    pts = BOX.points()
    np.testing.assert_allclose(p(pts)[:, 0], 0.5 * np.sin(pts[:, 0]), atol=1e-15)
    with pytest.raises(InvalidConfig, match="wavevector"):
        make_perturbation(PerturbationSpec("sinusoidal", 0.5, wavevector=(1.0,)), BOX)


# -- candidates ------------------------------------------------------------------

def test_zero_magnitude_candidate_is_exact():
    config = default_config("rotation", 1.0, magnitude=0.0)
    problem, flow = _problem_and_flow(config)
    y = make_candidate(config, problem, flow)
    eps, _ = estimate_sup_norm(residual_field(problem, y, flow), config.grid)
    assert eps <= 1e-8


def test_constant_perturbation_on_line_is_tight():
    config = ExperimentConfig(LINE_FIELD, -2.0, GridSpec((-5.0,), (5.0,), (21,)),
                              PerturbationSpec("constant", 0.1))
    problem, flow = _problem_and_flow(config)
    y = make_candidate(config, problem, flow)
    eps, _ = estimate_sup_norm(residual_field(problem, y, flow), config.grid)
    assert eps == pytest.approx(0.2, abs=1e-9)
    res = run_correction(config)
    assert res.distance_measured / res.bound == pytest.approx(1.0, abs=1e-6)


def test_coordinate_sine_under_rotation():
    # defect of sin(x1) for V = (-x2, x1), lambda = 1 is -(x2 cos x1 + sin x1)
    config = ExperimentConfig(ROT_FIELD, 1.0, BOX,
                              PerturbationSpec("sinusoidal", 1.0, wavevector=(1.0, 0.0)))
    problem, flow = _problem_and_flow(config)
    y = make_candidate(config, problem, flow)
    r = np.sqrt(np.linspace(0, 4, 401))[:, None]
    th = np.linspace(0, 2 * np.pi, 721)[None]
    disc = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1).reshape(-1, 2)
    eps, _ = estimate_sup_norm(residual_field(problem, y, flow), disc)
    oracle = np.max(np.abs(disc[:, 1] * np.cos(disc[:, 0]) + np.sin(disc[:, 0])))
    assert eps == pytest.approx(oracle, abs=1e-6)
    # triangle bound |x2 cos x1| + |lambda sin x1| <= 2 + 1 on |x| <= 2
    assert eps <= 3.0


def test_inexact_seed_is_rejected():
    config = ExperimentConfig(ROT_FIELD, 1.0, BOX,
                              exact_solution={"kind": "gaussian", "amplitude": 1.0})
    problem, flow = _problem_and_flow(config)
    with pytest.raises(InvalidConfig, match="exact seed"):
        make_candidate(config, problem, flow)


def test_matched_forcing_keeps_seed_exact():
    config = ExperimentConfig(ROT_FIELD, -1.0, BOX, PerturbationSpec("bump", 0.0),
                              forcing={"kind": "matched"},
                              exact_solution={"kind": "gaussian", "amplitude": 1.0})
    res = run_correction(config)
    assert res.distance_measured <= 1e-8


# -- sup-norm estimation -----------------------------------------------------------

def test_sup_of_zero():
    value, point = estimate_sup_norm(lambda x: np.zeros(len(x)), BOX)
    assert value == 0.0 and point.shape == (2,)


def test_sup_attained_on_included_boundary():
    value, point = estimate_sup_norm(lambda x: x[:, 0], GridSpec((0.0, 0.0), (1.0, 1.0), (5, 5)))
    assert value == 1.0 and point[0] == 1.0


def test_sup_of_dense_sine():
    value, _ = estimate_sup_norm(lambda x: np.sin(3 * x[:, 0]), GridSpec((0.0,), (np.pi,), (1000,)))
    assert value == pytest.approx(1.0, abs=1e-4)


@given(st.integers(2, 12), st.integers(0, 20), st.integers(0, 3))
def test_grid_refinement_is_monotone(n, halton, seed):
    k = np.random.default_rng(seed).uniform(-3, 3, size=2)
    fn = lambda x: np.sin(x @ k) + 0.1 * x[:, 0]  # noqa: E731
    coarse = GridSpec(BOX.lower, BOX.upper, (n, n), halton)
    fine = GridSpec(BOX.lower, BOX.upper, (2 * n - 1, 2 * n - 1), 2 * halton)
    assert estimate_sup_norm(fn, fine)[0] >= estimate_sup_norm(fn, coarse)[0]


# -- configs -----------------------------------------------------------------------

def test_config_rejects_imaginary_lambda():
    with pytest.raises(InvalidConfig, match="Re"):
        ExperimentConfig(ROT_FIELD, 1j, BOX)


def test_config_matrix_size_and_grid_budget():
    configs = config_matrix()
    assert len(configs) == 5 * 4 * 2
    assert all(len(c.grid.points()) <= 1000 for c in configs)


def test_grid_outside_domain_is_reported():
    euler = default_config("euler", 2.0)
    bad = dataclasses.replace(euler, grid=GridSpec((-1.0, 0.5), (1.0, 1.0), (3, 3)))
    with pytest.raises(InvalidConfig, match="domain"):
        run_correction(bad)


# -- end-to-end --------------------------------------------------------------------

def test_zero_perturbation_experiment():
    report = run_experiment(default_config("rotation", 1.0, magnitude=0.0))
    assert report.passed
    assert report.correction["distance_measured"] <= 1e-6
    for name in ("residual_of_z_max", "flow_compat_max_defect", "semigroup_max_defect",
                 "idempotence_defect", "linearity_defect"):
        assert getattr(report, name) <= 1e-6, name


def test_periodic_experiment():
    config = default_config("rotation", 1.0, magnitude=0.1, shape="bump")
    report = run_experiment(config)
    assert report.passed
    assert report.z_sup <= 1e-5
    assert report.y_sup <= report.correction["epsilon_measured"] + 1e-5


def test_affine_sinusoidal_experiment():
    # the sine runs along the contracting axis, so the defect stays bounded on orbits
    config = ExperimentConfig(
        {"kind": "affine", "matrix": [[1.0, 0.0], [0.0, -1.0]], "offset": [0.0, 0.0]}, 2.0, BOX,
        PerturbationSpec("sinusoidal", 0.1, wavevector=(0.0, 1.0)))
    report = run_experiment(config)
    assert report.bound_check["pass"]
    assert report.flow_compat_max_defect <= 1e-5
    assert report.passed


def test_verdicts_recompute_from_fields():
    report = run_experiment(default_config("affine", -0.5, magnitude=0.01))
    data = report.as_dict()
    assert data["verdicts"] == report.verdicts()
    broken = dataclasses.replace(report, residual_of_z_max=1.0)
    assert not broken.verdicts()["residual_of_z"] and not broken.passed


def test_experiment_is_deterministic():
    config = default_config("euler", 0.5 + 1j, magnitude=0.01)
    a, b = run_experiment(config).as_dict(), run_experiment(config).as_dict()
    assert a == b


def test_stage_label_on_error():
    # a gaussian is not an exact seed for the rotation field, so the build stage fails
    config = dataclasses.replace(default_config("rotation", 1.0),
                                 exact_solution={"kind": "gaussian"})
    with pytest.raises(StageError) as info:
        run_experiment(config)
    assert info.value.stage == "build"
    assert isinstance(info.value.error, InvalidConfig)
