"""Cramer-Rao bounds and Monte Carlo estimator benchmarks for Poisson ptychography."""

from .errors import ConfigError, InputError, NumericalError, PlacementError, PtychoError
from .fisher import CrlbMap, assemble_fisher, crlb, crlb_from_fisher
from .forward import DiffractionStack, ObjectEstimate, Probe, ScanPattern, expected_counts
from .montecarlo import McStatistics, compare_to_crlb, run_campaign, statistics
from .noise import RngSeed, average_measurements, sample_poisson_stack
from .optimizer import CgConfig, RunTrace, reconstruct, run_cg
from .scenarios import CaseSpec, Scenario, build_case, case_spec

__version__ = "0.1.0"
