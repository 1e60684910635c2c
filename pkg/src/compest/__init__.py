"""Sup-norm estimation of composite functions ``g = f o G`` under Gaussian white noise.

Modules
-------
zones
    Smoothness zones, rate branches and rate functions.
weights
    Piecewise-constant weights, their norms and orientations.
field
    Test functions, Hoelder checks and observation fields.
estimator
    Oriented linear estimators, pointwise selection and the global estimate.
lowerbound
    Hypothesis families behind the lower bound.
harness
    Monte Carlo rate sweeps.
"""

from .zones import SmoothnessPair, classify, rate_info, phi, psi, DomainError
from .weights import build_weight, orient, WeightSpec
from .field import make_composite, synthesize, ObservationField
from .estimator import SelectionConfig, global_estimate, solve_lambda
from .lowerbound import build_family
from .harness import SweepPlan, run_sweep

__version__ = "0.1.0"
