"""Selective borrowing of external controls for RMST treatment effects."""
from .data import Dataset, DataError, TimeGrid, dataset_to_csv, load_dataset, write_dataset
from .estimator import (EstimateReport, EstimatorOptions, bootstrap, estimate, estimate_acw,
                        estimate_adapt, estimate_all, estimate_aipw, run_pipeline)
from .selector import refine_biases, select_lambda, threshold
from .simulation import SimulationConfig, simulate, true_theta

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DataError", "TimeGrid", "dataset_to_csv", "load_dataset", "write_dataset",
    "EstimateReport", "EstimatorOptions", "bootstrap", "estimate", "estimate_acw",
    "estimate_adapt", "estimate_all", "estimate_aipw", "run_pipeline",
    "refine_biases", "select_lambda", "threshold",
    "SimulationConfig", "simulate", "true_theta",
]
