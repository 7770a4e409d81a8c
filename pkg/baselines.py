"""Comparison policies: random configuration elimination and KNN + ARR ranking."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.impute import SimpleImputer
from sklearn.neighbors import NearestNeighbors
from sklearn.preprocessing import StandardScaler

from errors import InvalidValue
from evaluation import Recommender
from runs import RunRecord

logger = logging.getLogger(__name__)

ARR_MIN_DENOMINATOR = 1e-6
# times of 0 seconds are floored so the log time ratio stays finite
MIN_TIME = 1e-9
# neighbor distances equal to this many decimals are ties, broken by dataset id
DISTANCE_DECIMALS = 10


@dataclass(frozen=True)
class ArrParams:
    n_neighbors: int
    acc_d: float
    top_m: int

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise InvalidValue(f"n_neighbors must be >= 1, got {self.n_neighbors}")
        if self.acc_d < 0:
            raise InvalidValue(f"acc_d must be >= 0, got {self.acc_d}")
        if self.top_m < 1:
            raise InvalidValue(f"top_m must be >= 1, got {self.top_m}")

    @property
    def label(self) -> str:
        return f"N={self.n_neighbors},AccD={self.acc_d},m={self.top_m}"


def random_elimination(config_ids: Iterable[str], fraction: float, seed: int) -> FrozenSet[str]:
    """Remove floor(fraction * K) configurations uniformly at random; at least one survives."""
    if not 0 <= fraction < 1:
        raise InvalidValue(f"elimination fraction must lie in [0, 1), got {fraction}")
    configs = sorted(set(config_ids))
    if not configs:
        return frozenset()
    n_remove = min(math.floor(fraction * len(configs)), len(configs) - 1)
    rng = np.random.default_rng(seed)
    keep = rng.choice(len(configs), size=len(configs) - n_remove, replace=False)
    return frozenset(configs[i] for i in keep)


def chance_of_keeping_optimal(n_configs: int, n_optimal: int, n_removed: int, exact: bool = False) -> float:
    """Probability that random elimination keeps at least one optimal configuration.

    The default treats every kept draw as independent, (1 - n_optimal/n_configs) ** n_kept;
    exact=True uses the hypergeometric count instead.
    """
    if not 0 <= n_optimal <= n_configs or not 0 <= n_removed <= n_configs:
        raise InvalidValue("counts must satisfy 0 <= n_optimal, n_removed <= n_configs")
    n_kept = n_configs - n_removed
    if exact:
        return 1.0 - math.comb(n_configs - n_optimal, n_kept) / math.comb(n_configs, n_kept)
    return 1.0 - (1.0 - n_optimal / n_configs) ** n_kept


def arr_score(perf_p: float, perf_q: float, time_p: float, time_q: float, acc_d: float) -> float:
    """Adjusted ratio of ratios of configuration p against q."""
    if min(perf_p, perf_q, time_p, time_q) <= 0:
        raise InvalidValue("ARR needs strictly positive performances and times")
    denominator = 1.0 + acc_d * math.log(time_p / time_q)
    if denominator <= 0:
        logger.warning(f"ARR denominator {denominator:.3g} clamped to {ARR_MIN_DENOMINATOR}")
        denominator = ARR_MIN_DENOMINATOR
    return (perf_p / perf_q) / denominator


def _dataset_arr(performance: np.ndarray, times: np.ndarray, acc_d: float) -> Tuple[np.ndarray, int]:
    """Mean ARR of every configuration against all others on one dataset."""
    count = performance.size
    if count == 1:
        return np.ones(1), 0
    times = np.maximum(times, MIN_TIME)
    denominators = 1.0 + acc_d * np.log(times[:, None] / times[None, :])
    clamped = int(np.sum(denominators <= 0))
    denominators = np.where(denominators <= 0, ARR_MIN_DENOMINATOR, denominators)
    scores = (performance[:, None] / performance[None, :]) / denominators
    np.fill_diagonal(scores, 0.0)
    return scores.sum(axis=1) / (count - 1), clamped


def nearest_datasets(meta: pd.DataFrame, x_new: Mapping[str, float], n_neighbors: int) -> List[str]:
    """The n closest training datasets by Euclidean distance on z-scored meta-features.

    Features are mean-imputed on the training rows; features that are entirely missing or
    constant there are ignored.
    """
    datasets = list(meta.index)
    observed = [name for name in meta.columns if meta[name].notna().any()]
    if not observed:
        return sorted(datasets)[:n_neighbors]

    imputer = SimpleImputer(strategy='mean')
    train = imputer.fit_transform(meta[observed].to_numpy(dtype=float))
    varying = np.ptp(train, axis=0) > 0
    if not varying.any():
        return sorted(datasets)[:n_neighbors]

    scaler = StandardScaler()
    train = scaler.fit_transform(train[:, varying])
    point = np.array([[x_new.get(name, np.nan) for name in observed]], dtype=float)
    point = scaler.transform(imputer.transform(point)[:, varying])

    index = NearestNeighbors(n_neighbors=len(datasets), algorithm='brute').fit(train)
    distances, positions = index.kneighbors(point)
    ranked = sorted((round(float(distance), DISTANCE_DECIMALS), datasets[position])
                    for distance, position in zip(distances[0], positions[0]))
    return [dataset for _, dataset in ranked[:n_neighbors]]


def rank_configurations(records: Sequence[RunRecord], neighbors: Sequence[str],
                        acc_d: float) -> List[Tuple[str, float]]:
    """Configurations ranked by the geometric mean over neighbors of their mean ARR.

    Configurations with no result on any neighbor are placed last.
    """
    configs = sorted({record.config_id for record in records})
    log_scores: Dict[str, List[float]] = {config: [] for config in configs}
    clamped = 0
    for dataset in neighbors:
        on_dataset = sorted((r for r in records if r.dataset_id == dataset), key=lambda r: r.config_id)
        if not on_dataset:
            continue
        performance = np.array([r.performance for r in on_dataset])
        times = np.array([r.time_seconds for r in on_dataset])
        scores, n_clamped = _dataset_arr(performance, times, acc_d)
        clamped += n_clamped
        for record, score in zip(on_dataset, scores):
            log_scores[record.config_id].append(math.log(score))
    if clamped:
        logger.warning(f"{clamped} ARR denominators clamped to {ARR_MIN_DENOMINATOR}")

    scored = [(config, math.exp(sum(logs) / len(logs))) for config, logs in log_scores.items() if logs]
    unscored = [(config, float('nan')) for config, logs in log_scores.items() if not logs]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored + unscored


def knn_recommend(records: Sequence[RunRecord], meta: pd.DataFrame, x_new: Mapping[str, float],
                  params: ArrParams) -> FrozenSet[str]:
    """Top-m configurations for a new dataset, ranked on its nearest training datasets."""
    if not records:
        raise InvalidValue("KNN recommendation needs a non-empty training corpus")
    datasets = sorted({record.dataset_id for record in records} & set(meta.index))
    if not datasets:
        raise InvalidValue("no training dataset has meta-features")
    neighbors = nearest_datasets(meta.loc[datasets], x_new, params.n_neighbors)
    ranking = rank_configurations(records, neighbors, params.acc_d)
    return frozenset(config for config, _ in ranking[:params.top_m])


class RandomEliminationPolicy:
    """Drop a fixed fraction of the known configurations, redrawn for every test dataset."""

    name = 'random'

    def __init__(self, fraction: float):
        if not 0 <= fraction < 1:
            raise InvalidValue(f"elimination fraction must lie in [0, 1), got {fraction}")
        self.fraction = fraction

    @property
    def param(self) -> str:
        return f"{self.fraction:g}"

    def fit(self, records: Sequence[RunRecord], meta: pd.DataFrame, seed: int) -> Recommender:
        configs = sorted({record.config_id for record in records})
        seeds = np.random.SeedSequence(seed)

        def recommend(dataset_id: str, x_new: pd.Series) -> FrozenSet[str]:
            draw = int(seeds.spawn(1)[0].generate_state(1)[0])
            return random_elimination(configs, self.fraction, draw)

        return recommend


class KnnArrPolicy:
    name = 'knn'

    def __init__(self, params: ArrParams):
        self.params = params

    @property
    def param(self) -> str:
        return self.params.label

    def fit(self, records: Sequence[RunRecord], meta: pd.DataFrame, seed: int) -> Recommender:
        records = list(records)

        def recommend(dataset_id: str, x_new: pd.Series) -> FrozenSet[str]:
            return knn_recommend(records, meta, x_new, self.params)

        return recommend
