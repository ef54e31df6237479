"""Mixed-variable high-dimensional Bayesian optimization with hyper-ellipsoid local regions."""
from .benchmarks import get_benchmark, list_benchmarks
from .drivers import DriverConfig, run_baseline, run_driver, run_moca_hesp
from .space import Dataset, MixedSpace, VariableSpec, hamming_distance, shift_wrap
from .trace import RunTrace

__all__ = [
    "Dataset",
    "DriverConfig",
    "MixedSpace",
    "RunTrace",
    "VariableSpec",
    "get_benchmark",
    "hamming_distance",
    "list_benchmarks",
    "run_baseline",
    "run_driver",
    "run_moca_hesp",
    "shift_wrap",
]

__version__ = "0.1.0"
