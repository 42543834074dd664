"""Poly-forest structure learning with pluggable conditional-independence tests."""

from .citests import CiDecision, CiTesterSpec, make_tester
from .graphs import Cpdag, Dag, Skeleton, random_polyforest, true_cpdag
from .learner import LearnResult, learn
from .metrics import EvalReport, evaluate, prr, shd_cpdag, shd_skeleton

__version__ = "0.1.0"

__all__ = [
    "CiDecision",
    "CiTesterSpec",
    "Cpdag",
    "Dag",
    "EvalReport",
    "LearnResult",
    "Skeleton",
    "evaluate",
    "learn",
    "make_tester",
    "prr",
    "random_polyforest",
    "shd_cpdag",
    "shd_skeleton",
    "true_cpdag",
]
