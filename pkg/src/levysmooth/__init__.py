"""Numerical checks of Malliavin smoothness for compound Poisson functionals."""

from .model import BoxSet, JumpModel, NuComponent, OutOfScopeError, Rect, expected_count, m_measure, nu_measure
from .simulate import JumpPath, PathBatch, SeedSpec, add_jump, count_in, sample_path
from .dsl import Env, Functional, evaluate, measurability, parse
from .estimate import Estimate

__version__ = "0.1.0"

__all__ = [
    "BoxSet",
    "Env",
    "Estimate",
    "Functional",
    "JumpModel",
    "JumpPath",
    "NuComponent",
    "OutOfScopeError",
    "PathBatch",
    "Rect",
    "SeedSpec",
    "add_jump",
    "count_in",
    "evaluate",
    "expected_count",
    "m_measure",
    "measurability",
    "nu_measure",
    "parse",
    "sample_path",
]
