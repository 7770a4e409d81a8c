"""Configuration management for the SHSR toolkit."""

import logging
import os
from pathlib import Path
from typing import Tuple

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)


def _env_floats(name: str, default: str) -> Tuple[float, ...]:
    """Parse a comma-separated list of floats from the environment."""
    raw = os.getenv(name, default)
    return tuple(float(item) for item in raw.split(',') if item.strip())


def _env_ints(name: str, default: str) -> Tuple[int, ...]:
    """Parse a comma-separated list of integers from the environment."""
    raw = os.getenv(name, default)
    return tuple(int(item) for item in raw.split(',') if item.strip())


class Config:
    """Application configuration."""

    # Randomness: every command derives all of its randomness from this seed
    SEED = int(os.getenv('SHSR_SEED', 0))

    # Filter fitting
    THRESHOLD = float(os.getenv('SHSR_THRESHOLD', 0.999))
    FIT_WORKERS = int(os.getenv('SHSR_FIT_WORKERS', 1))
    DEDUPLICATE_SHARED_COST = os.getenv('SHSR_DEDUPLICATE_SHARED_COST', 'true').lower() == 'true'

    # Regression trees
    MIN_SAMPLES_LEAF = _env_ints('SHSR_MIN_SAMPLES_LEAF', '3,5,7')
    CV_FOLDS = int(os.getenv('SHSR_CV_FOLDS', 5))

    # Evaluation protocol
    REPEATS = int(os.getenv('SHSR_REPEATS', 20))
    TEST_FRACTION = float(os.getenv('SHSR_TEST_FRACTION', 0.1))
    THRESHOLDS = _env_floats('SHSR_THRESHOLDS', '0.95,0.97,0.99,0.999,0.9999')
    SUBSAMPLE_FRACTIONS = _env_floats('SHSR_SUBSAMPLE_FRACTIONS', '0.2,0.4,0.6,0.8,1.0')

    # Baselines
    RANDOM_FRACTIONS = _env_floats('SHSR_RANDOM_FRACTIONS', '0.5,0.6,0.7,0.8,0.9,0.95,0.97,0.99')
    KNN_NEIGHBORS = _env_ints('SHSR_KNN_NEIGHBORS', '1,3,10')
    KNN_ACC_D = _env_floats('SHSR_KNN_ACCD', '0.001,0.01,0.1')
    TOP_M = {
        'classification': _env_ints('SHSR_TOP_M_CLASSIFICATION', '100,300,500,1000,1500,2000,2500'),
        'regression': _env_ints('SHSR_TOP_M_REGRESSION', '100,500,1000,2000,4000,6000'),
    }

    # Meta-features
    SILHOUETTE_KS = tuple(range(2, 11))
    PCA_PERCENTS = (60, 70, 80, 90)
    SILHOUETTE_MAX_ROWS = int(os.getenv('SHSR_SILHOUETTE_MAX_ROWS', 1000))
    KMEANS_N_INIT = int(os.getenv('SHSR_KMEANS_N_INIT', 10))
    KMEANS_MAX_ITER = int(os.getenv('SHSR_KMEANS_MAX_ITER', 100))

    # Logging
    LOG_LEVEL = os.getenv('SHSR_LOG_LEVEL', 'INFO').upper()
    LOG_FILE = Path(os.environ['SHSR_LOG_FILE']) if os.getenv('SHSR_LOG_FILE') else None

    @classmethod
    def validate(cls):
        """Validate configuration values; problems are reported, not raised."""
        problems = []

        if not 0 < cls.THRESHOLD:
            problems.append(f"SHSR_THRESHOLD must be positive (got {cls.THRESHOLD})")
        elif cls.THRESHOLD > 1:
            problems.append(f"SHSR_THRESHOLD {cls.THRESHOLD} > 1 yields an empty filter")

        if not 0 < cls.TEST_FRACTION < 1:
            problems.append(f"SHSR_TEST_FRACTION must lie in (0, 1) (got {cls.TEST_FRACTION})")

        if cls.REPEATS < 1:
            problems.append(f"SHSR_REPEATS must be >= 1 (got {cls.REPEATS})")

        if cls.CV_FOLDS < 2:
            problems.append(f"SHSR_CV_FOLDS must be >= 2 (got {cls.CV_FOLDS})")

        if any(leaf < 1 for leaf in cls.MIN_SAMPLES_LEAF):
            problems.append("SHSR_MIN_SAMPLES_LEAF values must be >= 1")

        if any(not 0 <= fraction < 1 for fraction in cls.RANDOM_FRACTIONS):
            problems.append("SHSR_RANDOM_FRACTIONS values must lie in [0, 1)")

        if any(not 0 < fraction <= 1 for fraction in cls.SUBSAMPLE_FRACTIONS):
            problems.append("SHSR_SUBSAMPLE_FRACTIONS values must lie in (0, 1]")

        if cls.FIT_WORKERS < 1:
            problems.append(f"SHSR_FIT_WORKERS must be >= 1 (got {cls.FIT_WORKERS})")

        for problem in problems:
            logger.warning(f"Configuration: {problem}")

        return not problems

    @classmethod
    def get_display_config(cls):
        """Get the resolved configuration for manifests and diagnostics."""
        return {
            'seed': cls.SEED,
            'threshold': cls.THRESHOLD,
            'fit_workers': cls.FIT_WORKERS,
            'deduplicate_shared_cost': cls.DEDUPLICATE_SHARED_COST,
            'min_samples_leaf': list(cls.MIN_SAMPLES_LEAF),
            'cv_folds': cls.CV_FOLDS,
            'repeats': cls.REPEATS,
            'test_fraction': cls.TEST_FRACTION,
            'silhouette_max_rows': cls.SILHOUETTE_MAX_ROWS,
            'kmeans_n_init': cls.KMEANS_N_INIT,
            'kmeans_max_iter': cls.KMEANS_MAX_ITER,
        }

    @classmethod
    def get_top_m(cls, task: str):
        """Get the top-m preset for a task kind ('classification' or 'regression')."""
        return cls.TOP_M.get(task, cls.TOP_M['classification'])


# Validate configuration on import
Config.validate()
