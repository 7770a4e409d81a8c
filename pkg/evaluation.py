"""Holdout evaluation of configuration-filtering policies."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from config import Config
from errors import CIUndefined, InvalidValue
from runs import GroupCatalog, RunRecord, build_matrices, init_active, records_for, run_cost
from shsr import apply_filter, fit_shsr, kept_configurations

logger = logging.getLogger(__name__)

# (dataset_id, meta-feature row) -> kept config ids; None keeps every configuration
Recommender = Callable[[str, pd.Series], Optional[FrozenSet[str]]]

RESULT_COLUMNS = ['policy', 'param', 'repeat', 'dataset_id', 'perf_ratio', 'time_ratio']


class Policy(Protocol):
    """Anything that turns a training corpus into per-dataset kept-configuration sets."""

    name: str

    @property
    def param(self) -> str: ...

    def fit(self, records: Sequence[RunRecord], meta: pd.DataFrame, seed: int) -> Recommender: ...


class IdentityPolicy:
    """Keeps every configuration."""

    name = 'identity'
    param = '-'

    def fit(self, records: Sequence[RunRecord], meta: pd.DataFrame, seed: int) -> Recommender:
        return lambda dataset_id, x_new: None


class ShsrPolicy:
    """Fit a filter sequence on the training corpus and apply it per test dataset."""

    name = 'shsr'

    def __init__(self, threshold: float, workers: Optional[int] = None):
        self.threshold = threshold
        self.workers = workers

    @property
    def param(self) -> str:
        return f"{self.threshold:g}"

    def fit(self, records: Sequence[RunRecord], meta: pd.DataFrame, seed: int) -> Recommender:
        catalog = GroupCatalog.from_records(records)
        datasets = sorted({record.dataset_id for record in records})
        P, E = build_matrices(records, catalog, datasets=datasets)
        sequence = fit_shsr(P, E, meta, self.threshold, init_active(P), seed,
                            catalog=catalog, workers=self.workers)

        def recommend(dataset_id: str, x_new: pd.Series) -> FrozenSet[str]:
            decision = apply_filter(sequence, x_new)
            return kept_configurations(decision.kept, catalog)

        return recommend


@dataclass(frozen=True)
class DatasetOutcome:
    repeat: int
    dataset_id: str
    perf_ratio: float
    time_ratio: float
    flagged: bool = False


@dataclass(frozen=True)
class RepeatResult:
    repeat: int
    seed: int
    n_test: int
    perf_ratio: float
    time_ratio: float
    n_flagged: int


@dataclass(frozen=True)
class EvaluationReport:
    policy: str
    param: str
    seed: int
    repeats: Tuple[RepeatResult, ...]
    outcomes: Tuple[DatasetOutcome, ...]
    perf_mean: float
    perf_ci: Optional[float]
    time_mean: float
    time_ci: Optional[float]
    test_fraction: float
    subsample: float = 1.0
    metadata: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            'policy': self.policy,
            'param': self.param,
            'seed': self.seed,
            'test_fraction': self.test_fraction,
            'subsample': self.subsample,
            'perf_ratio': {'mean': self.perf_mean, 'ci95': self.perf_ci},
            'time_ratio': {'mean': self.time_mean, 'ci95': self.time_ci},
            'repeats': [
                {
                    'repeat': result.repeat,
                    'seed': result.seed,
                    'n_test': result.n_test,
                    'perf_ratio': result.perf_ratio,
                    'time_ratio': result.time_ratio,
                    'n_flagged': result.n_flagged,
                }
                for result in self.repeats
            ],
            'metadata': dict(self.metadata),
        }


def gaussian_ci(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and 95% Gaussian half-width, 1.96 * sd / sqrt(n) with the n - 1 sd."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise CIUndefined(f"a confidence interval needs >= 2 values, got {values.size}")
    mean = float(np.mean(values))
    return mean, float(1.96 * np.std(values, ddof=1) / math.sqrt(values.size))


def subsample_results(records: Sequence[RunRecord], fraction: float, seed: int) -> List[RunRecord]:
    """Uniform sample of floor(fraction * N) records over the whole corpus, order preserved."""
    if not 0 < fraction <= 1:
        raise InvalidValue(f"subsample fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return list(records)
    size = math.floor(fraction * len(records))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(records), size=size, replace=False))
    return [records[i] for i in chosen]


def score_dataset(records: Sequence[RunRecord], kept: Optional[FrozenSet[str]]) -> Tuple[float, float]:
    """Performance and time ratios of a kept set against all of a dataset's records.

    The performance ratio is NaN when no kept configuration has a result.
    """
    if kept is None:
        return 1.0, 1.0
    kept_records = [record for record in records if record.config_id in kept]
    best = max(record.performance for record in records)
    perf_ratio = max((r.performance for r in kept_records), default=math.nan) / best
    total = run_cost(records, Config.DEDUPLICATE_SHARED_COST)
    time_ratio = run_cost(kept_records, Config.DEDUPLICATE_SHARED_COST) / total if total > 0 else 1.0
    return perf_ratio, time_ratio


def _split_seeds(seed: int, repeats: int) -> List[int]:
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(repeats)]


def evaluate_holdout(records: Sequence[RunRecord], meta: pd.DataFrame, policy: Policy,
                     repeats: Optional[int] = None, test_fraction: Optional[float] = None,
                     seed: Optional[int] = None, subsample: float = 1.0) -> EvaluationReport:
    """Repeated random dataset holdouts; the policy is fitted on the rest each time.

    With subsample < 1 the training records of every repeat are a fresh uniform
    sample; test datasets are always scored on their full records.
    """
    repeats = Config.REPEATS if repeats is None else repeats
    test_fraction = Config.TEST_FRACTION if test_fraction is None else test_fraction
    seed = Config.SEED if seed is None else seed
    if repeats < 1:
        raise InvalidValue(f"repeats must be >= 1, got {repeats}")
    if not 0 < test_fraction < 1:
        raise InvalidValue(f"test fraction must lie in (0, 1), got {test_fraction}")

    all_datasets = sorted({record.dataset_id for record in records})
    datasets = [dataset for dataset in all_datasets if dataset in meta.index]
    if len(datasets) < len(all_datasets):
        logger.warning(f"{len(all_datasets) - len(datasets)} datasets have no meta-features; left out")
    if len(datasets) < 2:
        raise InvalidValue("evaluation needs at least two datasets with meta-features")

    n_test = min(max(1, math.floor(test_fraction * len(datasets))), len(datasets) - 1)
    by_dataset: Dict[str, List[RunRecord]] = {dataset: [] for dataset in datasets}
    for record in records:
        if record.dataset_id in by_dataset:
            by_dataset[record.dataset_id].append(record)

    results: List[RepeatResult] = []
    outcomes: List[DatasetOutcome] = []
    for repeat, repeat_seed in enumerate(_split_seeds(seed, repeats)):
        rng = np.random.default_rng(repeat_seed)
        test = sorted(rng.choice(datasets, size=n_test, replace=False).tolist())
        train = [dataset for dataset in datasets if dataset not in set(test)]
        train_records = records_for(records, train)
        if subsample < 1:
            train_records = subsample_results(train_records, subsample, repeat_seed)

        recommend = policy.fit(train_records, meta, repeat_seed)
        repeat_outcomes = []
        for dataset in test:
            kept = recommend(dataset, meta.loc[dataset])
            perf_ratio, time_ratio = score_dataset(by_dataset[dataset], kept)
            flagged = math.isnan(perf_ratio)
            if flagged:
                logger.warning(f"{policy.name}({policy.param}) kept no run configuration on {dataset}")
            repeat_outcomes.append(DatasetOutcome(repeat, dataset, perf_ratio, time_ratio, flagged))

        perf_values = [o.perf_ratio for o in repeat_outcomes if not o.flagged]
        results.append(RepeatResult(
            repeat=repeat,
            seed=repeat_seed,
            n_test=n_test,
            perf_ratio=float(np.mean(perf_values)) if perf_values else math.nan,
            time_ratio=float(np.mean([o.time_ratio for o in repeat_outcomes])),
            n_flagged=sum(o.flagged for o in repeat_outcomes),
        ))
        outcomes.extend(repeat_outcomes)
        logger.debug(f"{policy.name}({policy.param}) repeat {repeat}: "
                     f"perf {results[-1].perf_ratio:.4f}, time {results[-1].time_ratio:.4f}")

    perf_mean, perf_ci = _aggregate([result.perf_ratio for result in results])
    time_mean, time_ci = _aggregate([result.time_ratio for result in results])
    logger.info(f"{policy.name}({policy.param}): perf {perf_mean:.4f}, time {time_mean:.4f} over {repeats} repeats")
    return EvaluationReport(
        policy=policy.name,
        param=policy.param if subsample == 1 else f"{policy.param}@{subsample:g}",
        seed=seed,
        repeats=tuple(results),
        outcomes=tuple(outcomes),
        perf_mean=perf_mean,
        perf_ci=perf_ci,
        time_mean=time_mean,
        time_ci=time_ci,
        test_fraction=test_fraction,
        subsample=subsample,
    )


def _aggregate(values: Sequence[float]) -> Tuple[float, Optional[float]]:
    values = [value for value in values if not math.isnan(value)]
    if not values:
        return math.nan, None
    try:
        return gaussian_ci(values)
    except CIUndefined:
        return float(values[0]), None


def sweep(records: Sequence[RunRecord], meta: pd.DataFrame, policies: Sequence[Policy],
          repeats: Optional[int] = None, test_fraction: Optional[float] = None,
          seed: Optional[int] = None, subsamples: Sequence[float] = (1.0,)) -> List[EvaluationReport]:
    """Evaluate every policy under every subsample fraction with the same splits."""
    return [
        evaluate_holdout(records, meta, policy, repeats, test_fraction, seed, subsample)
        for policy in policies
        for subsample in subsamples
    ]


def results_frame(reports: Sequence[EvaluationReport]) -> pd.DataFrame:
    """Tidy per-dataset table: policy, param, repeat, dataset_id, perf_ratio, time_ratio."""
    rows = [
        (report.policy, report.param, outcome.repeat, outcome.dataset_id, outcome.perf_ratio, outcome.time_ratio)
        for report in reports
        for outcome in report.outcomes
    ]
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)
