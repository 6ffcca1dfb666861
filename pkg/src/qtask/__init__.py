"""Task-based hybrid runtime for quantum circuit tasks, with GHZ wire cutting."""

from .circuit import Circuit, Gate, Histogram, Measurement, Preparation, ghz_circuit, parity
from .cutting import CutPlan, Estimate, build_cut_experiment, cut_ghz, enumerate_variants
from .qir import emit_qir, parse_qir

__version__ = "0.1.0"

__all__ = [
    "Circuit", "Gate", "Histogram", "Measurement", "Preparation", "ghz_circuit", "parity",
    "CutPlan", "Estimate", "build_cut_experiment", "cut_ghz", "enumerate_variants",
    "emit_qir", "parse_qir",
]
