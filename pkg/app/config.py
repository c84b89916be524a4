"""
Defaults and logging setup for the stereo tuner.

All runtime configuration comes from CLI flags and ParameterSet files;
nothing here reads the environment.
"""

import logging
import os
import sys
from typing import Any, Dict

from app.params import DEFAULT_NUM_DISPARITIES

LOG_FORMAT = '%(asctime)s - %(levelname)s - [%(funcName)s] - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'

DEFAULT_GA_CONFIG: Dict[str, Any] = {
    "population_size": 30,
    "generations": 100,
    "crossover_probability": 0.6,
    "mutation_probability": 0.3,
    "elite_count": 5,
    "rng_seed": 0,
    "fitness_metric": "ssim",
}

DEFAULT_SYNTH: Dict[str, Any] = {
    "width": 128,
    "height": 96,
    "true_disparity": 8,
    "pattern": "uniform-noise",
    "noise_seed": 0,
}

DEFAULT_EXPERIMENT_RUNS = 30

__all__ = [
    "DEFAULT_NUM_DISPARITIES",
    "DEFAULT_GA_CONFIG",
    "DEFAULT_SYNTH",
    "DEFAULT_EXPERIMENT_RUNS",
    "default_workers",
    "setup_logging",
]


def default_workers() -> int:
    """Available parallelism of this process."""
    if hasattr(os, "sched_getaffinity"):
        return max(1, len(os.sched_getaffinity(0)))
    return max(1, os.cpu_count() or 1)


def setup_logging(level: str = "INFO") -> None:
    """Root logger on stderr; stdout is reserved for command output."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
        stream=sys.stderr,
        force=True,
    )
