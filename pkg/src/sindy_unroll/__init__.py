"""Equation discovery with K-step unrolled Euler / RK4 integrators and sparse regression."""
from .core import (CoefficientMatrix, Dataset, DiscoveredModel, DiscoveryConfig, Library,
                   SGDConfig, SpatialGrid, TimeGrid, fingerprint, make_training_pairs)
from .dictionary import evaluate, standard_library
from .discover import default_config, discover_closed_form, discover_sgd, pretty_print, ridge_solve
from .simulate import add_noise, subsample, system_spec
from .unroll import unrolled_euler, unrolled_rk4

__version__ = "0.1.0"
