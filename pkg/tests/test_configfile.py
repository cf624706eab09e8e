import textwrap

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hustab.configfile import apply_overrides, config_to_dict, dump_config, load_config, parse_config
from hustab.errors import ParseError, ValidationError
from hustab.harness import ExperimentConfig, GridSpec, PerturbationSpec, config_matrix
from hustab.numerics import Tolerances

MINIMAL = textwrap.dedent("""\
    [field]
    kind = "rotation"
    rates = [1.0]

    [problem]
    lambda = { re = 1.0, im = 0.0 }

    [grid]
    lower = [-2.0, -2.0]
    upper = [2.0, 2.0]
    counts = [5, 5]
""")


def test_minimal_document_uses_defaults():
    config = parse_config(MINIMAL)
    assert config.lam == 1.0
    assert config.field == {"kind": "rotation", "rates": [1.0]}
    assert config.grid == GridSpec((-2.0, -2.0), (2.0, 2.0), (5, 5), 0)
    assert config.perturbation == PerturbationSpec()
    assert config.tolerances == Tolerances()
    assert config.forcing == {"kind": "zero"}


def test_packaged_example_loads(tmp_path):
    from importlib import resources
    text = resources.files("hustab").joinpath("configs", "periodic.toml").read_text()
    path = tmp_path / "c.toml"
    path.write_text(text)
    config = load_config(path)
    assert config.perturbation.shape == "bump" and config.grid.halton == 32


def test_zero_real_part_is_a_validation_error():
    text = MINIMAL.replace("re = 1.0, im = 0.0", "re = 0.0, im = 2.0")
    with pytest.raises(ValidationError, match=r"Re\(lambda\) != 0"):
        parse_config(text)


def test_affine_offset_outside_range_is_rejected():
    text = textwrap.dedent("""\
        [field]
        kind = "affine"
        matrix = [[0.0, 1.0], [0.0, 0.0]]
        offset = [0.0, 1.0]

        [problem]
        lambda = { re = 1.0 }

        [grid]
        lower = [-1.0, -1.0]
        upper = [1.0, 1.0]
        counts = [3, 3]
    """)
    with pytest.raises(ValidationError):
        parse_config(text)


def test_grid_dimension_must_match_field():
    text = MINIMAL.replace("[-2.0, -2.0]", "[-2.0]").replace("[2.0, 2.0]", "[2.0]").replace("[5, 5]", "[5]")
    with pytest.raises(ValidationError, match="dimension"):
        parse_config(text)


@pytest.mark.parametrize("bad,line,fragment", [
    ('rates = [1.0]', 3, "rates = [true]"),
    ('counts = [5, 5]', 11, 'counts = [5, 5.5]'),
])
def test_type_errors_report_line_numbers(bad, line, fragment):
    with pytest.raises(ParseError, match=rf"^line {line}, "):
        parse_config(MINIMAL.replace(bad, fragment))


def test_unknown_keys_and_sections_are_rejected():
    with pytest.raises(ParseError, match="unknown key"):
        parse_config(MINIMAL.replace("rates = [1.0]", "rates = [1.0]\nspeed = 2.0"))
    with pytest.raises(ParseError, match="unknown key"):
        parse_config(MINIMAL + "\n[plots]\nwidth = 3\n")


def test_missing_section_and_malformed_text():
    with pytest.raises(ParseError, match=r"\[grid\]"):
        parse_config(MINIMAL.split("[grid]")[0])
    with pytest.raises(ParseError, match="malformed"):
        parse_config("[field\nkind = 1")


def test_overrides_apply_with_toml_values():
    config = parse_config(MINIMAL, ["perturbation.magnitude=0.01", "perturbation.shape=bump",
                                    "problem.lambda.re=-0.5", "grid.counts=[3, 4]"])
    assert config.perturbation.magnitude == 0.01
    assert config.perturbation.shape == "bump"
    assert config.lam == -0.5
    assert config.grid.counts == (3, 4)


@pytest.mark.parametrize("override", ["perturbation.size=1", "nosuch.key=1", "grid=3", "magnitude"])
def test_unknown_overrides_are_rejected(override):
    with pytest.raises(ParseError):
        apply_overrides({"field": {"kind": "rotation"}}, [override])


@pytest.mark.parametrize("config", config_matrix(), ids=lambda c: f"{c.field['kind']}-{c.lam}")
def test_matrix_configs_round_trip(config):
    again = parse_config(dump_config(config))
    assert again == config
    assert config_to_dict(again) == config_to_dict(config)


@given(
    lam_re=st.floats(0.05, 5) | st.floats(-5, -0.05),
    lam_im=st.floats(-3, 3),
    magnitude=st.floats(0, 1),
    seed=st.integers(0, 2**64 - 1),
    shape=st.sampled_from(["constant", "sinusoidal", "bump", "random-smoothed"]),
    counts=st.tuples(st.integers(1, 9), st.integers(1, 9)),
    halton=st.integers(0, 64),
)
def test_round_trip_property(lam_re, lam_im, magnitude, seed, shape, counts, halton):
    config = ExperimentConfig({"kind": "rotation", "rates": [1.0]}, complex(lam_re, lam_im),
                              GridSpec((-1.5, -2.0), (2.0, 1.0), counts, halton),
                              PerturbationSpec(shape, magnitude, seed))
    assert parse_config(dump_config(config)) == config


def test_wavevector_round_trips():
    config = parse_config(MINIMAL + '\n[perturbation]\nshape = "sinusoidal"\nwavevector = [1.0, 0.0]\n')
    assert config.perturbation.wavevector == (1.0, 0.0)
    assert parse_config(dump_config(config)) == config
