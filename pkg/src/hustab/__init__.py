"""Constructive Hyers-Ulam stability for Vy = lambda*y + f along vector fields.

Given an approximate solution ``y`` with defect ``alpha = Vy - lambda*y - f``
bounded by ``eps``, :func:`theorem1_correct` builds the exact solution

    z(x) = y(x) + int_0^omega alpha(Phi(s, x)) exp(-lambda s) ds

with ``|y - z| <= eps / |Re lambda|``.
"""
from .core import (
    CandidateSolution,
    CorrectedSolution,
    CorrectionResult,
    StabilityProblem,
    check_flow_compatibility,
    hus_bound,
    lemma1_correct,
    residual_field,
    theorem1_correct,
)
from .geometry import FlowMap, VectorField, catalog_field, check_semigroup
from .numerics import Tolerances

__version__ = "0.1.0"

__all__ = [
    "CandidateSolution",
    "CorrectedSolution",
    "CorrectionResult",
    "FlowMap",
    "StabilityProblem",
    "Tolerances",
    "VectorField",
    "catalog_field",
    "check_flow_compatibility",
    "check_semigroup",
    "hus_bound",
    "lemma1_correct",
    "residual_field",
    "theorem1_correct",
]
