"""Canard thresholds in forced QIF neurons, networks and their mean fields.

Submodules
----------
params      parameter sets, Cauchy sampling, forcing, seeded streams
network     dense and sparse QIF networks, the theta-form single cell
meanfield   mean-field right-hand sides and integrators
slowfast    critical manifold, folds, folded singularities, canards
sweep       orbit classification, threshold bisection, branch tracing
cli         configs, run directories and the ``qifcanard`` command
"""
__version__ = "0.1.0"

from qifcanard.kernels import BACKEND  # noqa: E402,F401
