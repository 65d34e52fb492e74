"""Controlled islanding of power grids by improved spectral clustering."""
from importlib import resources

from .config import IslandingConfig, RegressionParams
from .cuts import MetricReport, Partition, combined_matrix, cut, meet, metric_report, ncut
from .grid import DerivedMatrices, PowerGrid, derive_matrices, load_case, parse_case
from .pipeline import IslandingResult, isc_pipeline
from .shed import shed_max_flow
from .solver import AggregatedGrid, exact_solve, greedy_partition, lift_partition
from .spectral import csc_partition, hsc_partition

__version__ = "0.1.0"


def example_case(name: str = "case9") -> PowerGrid:
    """Load a case bundled with the package."""
    return parse_case(resources.files(__package__).joinpath("data", f"{name}.json").read_text())


__all__ = [
    "AggregatedGrid",
    "DerivedMatrices",
    "IslandingConfig",
    "IslandingResult",
    "MetricReport",
    "Partition",
    "PowerGrid",
    "RegressionParams",
    "combined_matrix",
    "csc_partition",
    "cut",
    "derive_matrices",
    "exact_solve",
    "example_case",
    "greedy_partition",
    "hsc_partition",
    "isc_pipeline",
    "lift_partition",
    "load_case",
    "meet",
    "metric_report",
    "ncut",
    "parse_case",
    "shed_max_flow",
]
