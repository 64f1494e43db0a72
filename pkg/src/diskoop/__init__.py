"""Koopman model learning under quadratic dissipativity constraints.

Modules
-------
lifting
    State-plus-thin-plate-spline lifting dictionaries.
dynsim
    RK4 simulation of the benchmark system and input generators.
edmd
    Snapshot matrices and least-squares (unconstrained) fitting.
dissipativity
    Supply rates, the dissipation LMI, certificates and model checks.
conic
    LMI-constrained convex programs and solver backends.
sequential
    Convex initialization and sequential convex overbounding.
formats
    Trajectory CSV, model/report JSON and plot-data files.
cli
    Command-line interface.
"""

from .dissipativity import (DissipativityReport, NotDissipativeError,
                            SupplyRate, certify, frequency_margin,
                            lemma_lmi_lhs, trajectory_audit)
from .dynsim import BENCHMARK, TrajectoryDataset, generate_input, simulate
from .edmd import DataMatrices, KoopmanModel, assemble, fit_unconstrained
from .lifting import LiftingDictionary, lift, sample_dictionary
from .sequential import AlgorithmOptions, run_algorithm

__version__ = '0.1.0'

__all__ = [
    'AlgorithmOptions', 'BENCHMARK', 'DataMatrices', 'DissipativityReport',
    'KoopmanModel', 'LiftingDictionary', 'NotDissipativeError', 'SupplyRate',
    'TrajectoryDataset', 'assemble', 'certify', 'fit_unconstrained',
    'frequency_margin', 'generate_input', 'lemma_lmi_lhs', 'lift',
    'run_algorithm', 'sample_dictionary', 'simulate', 'trajectory_audit',
]
