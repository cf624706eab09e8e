"""TOML experiment documents: parsing, validation, overrides and round-trip.

A document looks like::

    [field]
    kind = "rotation"
    rates = [1.0]

    [problem]
    lambda = { re = 1.0, im = 0.0 }
    forcing = { kind = "zero" }

    [perturbation]
    shape = "bump"
    magnitude = 0.1
    seed = 3

    [grid]
    lower = [-2.0, -2.0]
    upper = [2.0, 2.0]
    counts = [15, 15]
    halton = 32

``[tolerances]`` and ``[checks]`` are optional and default as in
:class:`~hustab.numerics.Tolerances` and :class:`~hustab.harness.CheckSpec`.
"""
import copy
import dataclasses
import re
import sys

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import HusError, ParseError, ValidationError
from .harness import CheckSpec, ExperimentConfig, GridSpec, PerturbationSpec, build_field
from .numerics import Tolerances

FIELD_KEYS = {
    "rotation": {"rates"},
    "affine": {"matrix", "offset"},
    "euler": {"dim", "g"},
    "bump": {"center", "radius", "direction"},
    "geodesic": {"k", "christoffel"},
}
NESTED_FIELD_KEYS = {
    "g": {"kind", "value", "index", "scale", "offset"},
    "christoffel": {"kind", "amplitude", "width"},
}
PROBLEM_KEYS = {
    "lambda": {"re", "im"},
    "forcing": {"kind", "value"},
    "exact_solution": {"kind", "value", "amplitude", "center", "width", "components"},
}
SECTION_KEYS = {
    "perturbation": {"shape", "magnitude", "seed", "wavevector"},
    "grid": {"lower", "upper", "counts", "halton"},
    "tolerances": {f.name for f in dataclasses.fields(Tolerances)},
    "checks": {f.name for f in dataclasses.fields(CheckSpec)},
}
REQUIRED = ("field", "problem", "grid")


def _locate(text, path):
    """Best-effort line number of the last key of ``path`` in ``text``."""
    if not text:
        return None
    path = re.sub(r"\[\d+\]", "", path)
    key = path.split(".")[-1]
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=|[{{,]\s*{re.escape(key)}\s*=")
    section = path.split(".")[0]
    in_section = False
    for i, line in enumerate(text.splitlines(), 1):
        header = re.match(r"^\s*\[([^\]]+)\]", line)
        if header:
            in_section = header.group(1).split(".")[0].strip() == section
            if in_section and header.group(1).strip() == path:
                return i
            continue
        if in_section and pattern.search(line):
            return i
    return None


class _Reader:
    """Typed access to a parsed document with path-aware diagnostics."""

    def __init__(self, text):
        self.text = text

    def fail(self, path, message):
        line = _locate(self.text, path)
        where = f"line {line}, " if line else ""
        raise ParseError(f"{where}{path}: {message}")

    def number(self, path, value, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if integer:
            if isinstance(value, float) and not value.is_integer():
                self.fail(path, f"expected an integer, got {value!r}")
            return int(value)
        if not np.isfinite(value):
            self.fail(path, f"expected a finite number, got {value!r}")
        return float(value)

    def vector(self, path, value, integer=False):
        if not isinstance(value, list) or not value:
            self.fail(path, f"expected a non-empty array of numbers, got {value!r}")
        return [self.number(f"{path}[{i}]", v, integer) for i, v in enumerate(value)]

    def matrix(self, path, value):
        if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
            self.fail(path, "expected an array of arrays")
        rows = [self.vector(f"{path}[{i}]", r) for i, r in enumerate(value)]
        if len({len(r) for r in rows}) != 1:
            self.fail(path, "rows have different lengths")
        return rows

    def table(self, path, value, allowed):
        if not isinstance(value, dict):
            self.fail(path, f"expected a table, got {value!r}")
        unknown = sorted(set(value) - set(allowed))
        if unknown:
            self.fail(f"{path}.{unknown[0]}", f"unknown key; expected one of {sorted(allowed)}")
        return value

    def string(self, path, value):
        if not isinstance(value, str):
            self.fail(path, f"expected a string, got {value!r}")
        return value


def _field_spec(r, raw):
    raw = r.table("field", raw, {"kind"} | set().union(*FIELD_KEYS.values()))
    kind = r.string("field.kind", raw.get("kind"))
    if kind not in FIELD_KEYS:
        r.fail("field.kind", f"unknown field kind {kind!r}; expected one of {sorted(FIELD_KEYS)}")
    r.table("field", raw, {"kind"} | FIELD_KEYS[kind])
    out = {"kind": kind}
    for key, value in raw.items():
        path = f"field.{key}"
        if key == "kind":
            continue
        if key == "matrix":
            out[key] = r.matrix(path, value)
        elif key in ("rates", "offset", "center", "direction"):
            out[key] = r.vector(path, value)
        elif key == "radius":
            out[key] = r.number(path, value)
        elif key in ("dim", "k"):
            out[key] = r.number(path, value, integer=True)
        else:
            sub = r.table(path, value, NESTED_FIELD_KEYS[key])
            spec = {"kind": r.string(f"{path}.kind", sub.get("kind"))}
            for sk, sv in sub.items():
                if sk != "kind":
                    spec[sk] = r.number(f"{path}.{sk}", sv, integer=(sk == "index"))
            out[key] = spec
    return out


def _tagged(r, path, raw, allowed):
    raw = r.table(path, raw, allowed)
    out = {"kind": r.string(f"{path}.kind", raw.get("kind", "zero"))}
    for key, value in raw.items():
        if key == "kind":
            continue
        sub = f"{path}.{key}"
        if key in ("value", "amplitude", "center"):
            out[key] = r.vector(sub, value) if isinstance(value, list) else r.number(sub, value)
        elif key == "components":
            out[key] = r.number(sub, value, integer=True)
        else:
            out[key] = r.number(sub, value)
    return out


def _dataclass_from(r, cls, path, raw):
    raw = r.table(path, raw, {f.name for f in dataclasses.fields(cls)})
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in raw:
            continue
        value = raw[f.name]
        sub = f"{path}.{f.name}"
        if isinstance(f.default, tuple):
            kwargs[f.name] = tuple(r.vector(sub, value))
        elif isinstance(f.default, int) and not isinstance(f.default, bool):
            kwargs[f.name] = r.number(sub, value, integer=True)
        else:
            kwargs[f.name] = r.number(sub, value)
    return kwargs


def config_from_dict(doc, text=None):
    """Validate a parsed document and build the :class:`ExperimentConfig`."""
    r = _Reader(text)
    r.table("<document>", doc, set(REQUIRED) | set(SECTION_KEYS))
    for name in REQUIRED:
        if name not in doc:
            raise ParseError(f"missing required section [{name}]")
    field = _field_spec(r, doc["field"])

    problem = r.table("problem", doc["problem"], set(PROBLEM_KEYS))
    if "lambda" not in problem:
        r.fail("problem.lambda", "missing; give lambda = { re = ..., im = ... }")
    lam_raw = r.table("problem.lambda", problem["lambda"], PROBLEM_KEYS["lambda"])
    if "re" not in lam_raw:
        r.fail("problem.lambda.re", "missing real part")
    lam = complex(r.number("problem.lambda.re", lam_raw["re"]),
                  r.number("problem.lambda.im", lam_raw.get("im", 0.0)))
    forcing = _tagged(r, "problem.forcing", problem.get("forcing", {"kind": "zero"}),
                      PROBLEM_KEYS["forcing"])
    exact = None
    if "exact_solution" in problem:
        exact = _tagged(r, "problem.exact_solution", problem["exact_solution"],
                        PROBLEM_KEYS["exact_solution"])

    pert_raw = r.table("perturbation", doc.get("perturbation", {}), SECTION_KEYS["perturbation"])
    pert = {}
    if "shape" in pert_raw:
        pert["shape"] = r.string("perturbation.shape", pert_raw["shape"])
    if "magnitude" in pert_raw:
        pert["magnitude"] = r.number("perturbation.magnitude", pert_raw["magnitude"])
    if "seed" in pert_raw:
        pert["seed"] = r.number("perturbation.seed", pert_raw["seed"], integer=True)
    if "wavevector" in pert_raw:
        pert["wavevector"] = tuple(r.vector("perturbation.wavevector", pert_raw["wavevector"]))

    grid_raw = r.table("grid", doc["grid"], SECTION_KEYS["grid"])
    for key in ("lower", "upper", "counts"):
        if key not in grid_raw:
            r.fail(f"grid.{key}", "missing")
    grid = dict(
        lower=r.vector("grid.lower", grid_raw["lower"]),
        upper=r.vector("grid.upper", grid_raw["upper"]),
        counts=r.vector("grid.counts", grid_raw["counts"], integer=True),
        halton=r.number("grid.halton", grid_raw.get("halton", 0), integer=True),
    )
    tol_kwargs = _dataclass_from(r, Tolerances, "tolerances", doc.get("tolerances", {}))
    check_kwargs = _dataclass_from(r, CheckSpec, "checks", doc.get("checks", {}))

    if lam.real == 0.0:
        raise ValidationError(
            f"problem.lambda: Re(lambda) = 0 (lambda = {lam}); the stability result requires "
            "Re(lambda) != 0, which is what makes 1/|Re(lambda)| a finite stability constant"
        )
    try:
        config = ExperimentConfig(
            field=field,
            lam=lam,
            grid=GridSpec(**grid),
            perturbation=PerturbationSpec(**pert),
            forcing=forcing,
            exact_solution=exact,
            tolerances=Tolerances(**tol_kwargs),
            checks=CheckSpec(**check_kwargs),
        )
        built = build_field(field)
    except (HusError, ValueError, TypeError, KeyError) as exc:
        raise ValidationError(str(exc)) from exc
    if built.dim != config.grid.dim:
        raise ValidationError(
            f"grid has dimension {config.grid.dim} but the {field['kind']} field lives in R^{built.dim}"
        )
    if not np.all(built.domain.contains(config.grid.points())):
        raise ValidationError(f"grid points must lie in the domain {built.domain.description}")
    return config


def parse_config(text, overrides=()):
    """Parse and validate a TOML document, applying ``key=value`` overrides."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"malformed document: {exc}") from exc
    doc = apply_overrides(doc, overrides)
    return config_from_dict(doc, text)


def load_config(path, overrides=()):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


def _allowed_keys(doc, section):
    if section == "field":
        kind = doc.get("field", {}).get("kind")
        return {"kind"} | FIELD_KEYS.get(kind, set().union(*FIELD_KEYS.values()))
    if section == "problem":
        return set(PROBLEM_KEYS)
    return SECTION_KEYS.get(section)


def _check_override_path(doc, parts, key):
    section = parts[0]
    if section not in set(REQUIRED) | set(SECTION_KEYS):
        raise ParseError(f"override {key!r}: unknown section {section!r}")
    if len(parts) < 2:
        raise ParseError(f"override {key!r}: name a key inside [{section}]")
    allowed = _allowed_keys(doc, section)
    if parts[1] not in allowed:
        raise ParseError(f"override {key!r}: unknown key; [{section}] accepts {sorted(allowed)}")
    nested = PROBLEM_KEYS if section == "problem" else NESTED_FIELD_KEYS if section == "field" else {}
    if len(parts) == 3 and parts[1] in nested and parts[2] in nested[parts[1]]:
        return
    if len(parts) != 2:
        raise ParseError(f"override {key!r}: unknown key")


def _override_value(raw):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(doc, overrides):
    """Return a copy of ``doc`` with dotted ``key=value`` assignments applied.

    Values use TOML syntax (``0.01``, ``[1.0, 2.0]``, ``"bump"``); bare words
    are taken as strings.  Unknown keys are rejected.
    """
    doc = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        _check_override_path(doc, parts, key.strip())
        target = doc
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ParseError(f"override {key!r}: {part} is not a table")
        target[parts[-1]] = _override_value(raw.strip())
    return doc


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def config_to_dict(config):
    """Document form of a config; inverse of :func:`config_from_dict`."""
    problem = {
        "lambda": {"re": config.lam.real, "im": config.lam.imag},
        "forcing": _plain(config.forcing),
    }
    if config.exact_solution is not None:
        problem["exact_solution"] = _plain(config.exact_solution)
    g = config.grid
    return {
        "field": _plain(config.field),
        "problem": problem,
        "perturbation": {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in dataclasses.asdict(config.perturbation).items() if v is not None},
        "grid": {"lower": list(g.lower), "upper": list(g.upper),
                 "counts": list(g.counts), "halton": g.halton},
        "tolerances": config.tolerances.as_dict(),
        "checks": _plain(dataclasses.asdict(config.checks)),
    }


def dump_config(config):
    """Serialise a config to TOML text."""
    return tomli_w.dumps(config_to_dict(config))
