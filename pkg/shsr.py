"""Sequential hyper-parameter space reduction: fit and apply group filters."""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd

from cart import RegressionTree, describe_tree, predict, predict_many, tree_from_dict, tree_to_dict, tune_and_fit
from config import Config
from errors import FormatError, InvalidValue
from runs import ActiveSets, GroupCatalog, RatioMatrix, TimeMatrix
from version import MODEL_FORMAT

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterStep:
    group_id: str
    model: RegressionTree
    time_saved_at_fit: float
    covered_at_fit: FrozenSet[str]


@dataclass(frozen=True)
class FilterSequence:
    """Greedily selected (group, model) steps plus what is needed to apply them."""

    steps: Tuple[FilterStep, ...]
    threshold: float
    catalog: GroupCatalog
    feature_names: Tuple[str, ...] = ()
    imputation_means: Mapping[str, float] = field(default_factory=dict)

    @property
    def groups(self) -> Tuple[str, ...]:
        return self.catalog.groups

    def to_dict(self) -> Dict:
        return {
            'format': MODEL_FORMAT,
            'threshold': self.threshold,
            'catalog': self.catalog.to_dict(),
            'feature_names': list(self.feature_names),
            'imputation_means': {name: self.imputation_means[name] for name in self.feature_names},
            'steps': [
                {
                    'group_id': step.group_id,
                    'tree': tree_to_dict(step.model),
                    'covered_at_fit': sorted(step.covered_at_fit),
                    'time_saved_at_fit': step.time_saved_at_fit,
                }
                for step in self.steps
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> 'FilterSequence':
        if data.get('format') != MODEL_FORMAT:
            raise FormatError(f"Unsupported model format {data.get('format')!r}; expected {MODEL_FORMAT!r}")
        try:
            steps = tuple(
                FilterStep(
                    group_id=step['group_id'],
                    model=tree_from_dict(step['tree']),
                    time_saved_at_fit=float(step['time_saved_at_fit']),
                    covered_at_fit=frozenset(step['covered_at_fit']),
                )
                for step in data['steps']
            )
            return cls(
                steps=steps,
                threshold=float(data['threshold']),
                catalog=GroupCatalog.from_dict(data['catalog']),
                feature_names=tuple(data['feature_names']),
                imputation_means={name: float(value) for name, value in data['imputation_means'].items()},
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"Malformed model file: {e}") from e


class LeaveOneOutTargets(NamedTuple):
    y: np.ndarray
    usable: Tuple[str, ...]
    excluded: Tuple[str, ...]


class FilterDecision(NamedTuple):
    dropped: Tuple[str, ...]
    kept: Tuple[str, ...]
    safeguard_triggered: bool
    skipped_steps: Tuple[int, ...]


def leave_one_out_targets(P: RatioMatrix, g: str, active_g: Iterable[str]) -> LeaveOneOutTargets:
    """Best ratio each active dataset reaches without group g."""
    datasets = sorted(active_g)
    if not datasets:
        return LeaveOneOutTargets(np.empty(0), (), ())

    others = P.values.drop(index=g).loc[:, datasets]
    best_without = others.max(axis=0, skipna=True)
    usable = tuple(dataset for dataset in datasets if pd.notna(best_without[dataset]))
    excluded = tuple(dataset for dataset in datasets if pd.isna(best_without[dataset]))
    if excluded:
        logger.debug(f"Group {g}: no other group has results on {list(excluded)}; excluded")
    return LeaveOneOutTargets(best_without[list(usable)].to_numpy(dtype=float), usable, excluded)


def _imputed_features(X: pd.DataFrame, datasets: Iterable[str]) -> Tuple[pd.DataFrame, Dict[str, float]]:
    """Meta-features of the given datasets with missing values replaced by column means."""
    datasets = list(datasets)
    missing = [dataset for dataset in datasets if dataset not in X.index]
    if missing:
        raise FormatError(f"Meta-feature table lacks datasets: {missing}")
    frame = X.loc[datasets].astype(float)
    means = frame.mean(axis=0, skipna=True).fillna(0.0)
    return frame.fillna(means), {str(name): float(value) for name, value in means.items()}


class _GroupFit(NamedTuple):
    model: Optional[RegressionTree]
    covered: FrozenSet[str]
    savings: float


def _fit_group(P: RatioMatrix, E: TimeMatrix, features: pd.DataFrame, T: float,
               group: str, active_g: FrozenSet[str], seed: int) -> _GroupFit:
    targets = leave_one_out_targets(P, group, active_g)
    if not targets.usable:
        return _GroupFit(None, frozenset(), 0.0)

    rows = features.loc[list(targets.usable)].to_numpy(dtype=float)
    model = tune_and_fit(rows, targets.y, seed)
    predictions = predict_many(model, rows)
    covered = frozenset(d for d, value in zip(targets.usable, predictions) if value >= T)
    savings = float(sum(E.get(group, d) for d in sorted(covered)))
    return _GroupFit(model, covered, savings)


def fit_shsr(P: RatioMatrix, E: TimeMatrix, X: pd.DataFrame, T: float, active: ActiveSets,
             seed: int, catalog: Optional[GroupCatalog] = None,
             workers: Optional[int] = None) -> FilterSequence:
    """Fit the greedy sequence of group filters.

    X holds one row per dataset and one column per meta-feature. Each iteration
    selects the group whose covered datasets carry the largest summed time, removes
    those datasets from its active set and repeats until nothing can be saved.
    """
    if tuple(P.values.index) != tuple(E.values.index) or tuple(P.values.columns) != tuple(E.values.columns):
        raise FormatError("ratio and time matrices must share row and column ids")
    if not P.values.isna().equals(E.values.isna()):
        raise FormatError("ratio and time matrices must have identical missing cells")
    if T <= 0:
        raise InvalidValue(f"threshold must be positive, got {T}")
    if T > 1:
        logger.warning(f"Threshold {T} > 1 yields an empty filter")

    catalog = catalog or GroupCatalog(groups=P.groups)
    workers = workers or Config.FIT_WORKERS
    features, means = _imputed_features(X, P.datasets)
    feature_names = tuple(str(name) for name in features.columns)
    groups = sorted(P.groups)

    fits: Dict[str, _GroupFit] = {}
    stale = list(groups)
    steps: List[FilterStep] = []

    with ThreadPoolExecutor(max_workers=workers) as pool:
        while True:
            # only groups whose active set changed need a new model
            results = pool.map(lambda g, a=active: _fit_group(P, E, features, T, g, a[g], seed), stale)
            fits.update(zip(stale, results))

            top = max(fits[g].savings for g in groups) if groups else 0.0
            best = next((g for g in groups if fits[g].savings == top), None)
            if best is None:
                break
            chosen = fits[best]
            if chosen.savings <= 0:
                break

            steps.append(FilterStep(best, chosen.model, chosen.savings, chosen.covered))
            logger.info(f"Step {len(steps)}: drop {best} on {len(chosen.covered)} datasets "
                        f"(saves {chosen.savings:.6g}s)")
            active = active.without(best, chosen.covered)
            stale = [best]

    logger.info(f"Fitted filter with {len(steps)} steps at threshold {T}")
    return FilterSequence(
        steps=tuple(steps),
        threshold=T,
        catalog=catalog,
        feature_names=feature_names,
        imputation_means=means,
    )


def _feature_vector(seq: FilterSequence, x_new: Union[Mapping[str, float], pd.Series]) -> np.ndarray:
    vector = []
    for name in seq.feature_names:
        value = x_new.get(name, np.nan) if hasattr(x_new, 'get') else np.nan
        value = np.nan if value is None else float(value)
        vector.append(seq.imputation_means.get(name, 0.0) if np.isnan(value) else value)
    return np.asarray(vector, dtype=float)


def apply_filter(seq: FilterSequence, x_new: Union[Mapping[str, float], pd.Series]) -> FilterDecision:
    """Run the steps in order, dropping a group when its model predicts >= threshold.

    A step that would leave no group to run is skipped and the decision is
    marked safeguard_triggered.
    """
    vector = _feature_vector(seq, x_new)
    kept = list(seq.groups)
    dropped: List[str] = []
    skipped: List[int] = []

    for index, step in enumerate(seq.steps):
        if step.group_id in dropped or step.group_id not in kept:
            continue
        if predict(step.model, vector) < seq.threshold:
            continue
        if len(kept) == 1:
            logger.warning(f"Step {index} would drop the last group {step.group_id}; skipped")
            skipped.append(index)
            continue
        kept.remove(step.group_id)
        dropped.append(step.group_id)

    return FilterDecision(tuple(dropped), tuple(kept), bool(skipped), tuple(skipped))


def kept_configurations(kept: Iterable[str], catalog: GroupCatalog) -> FrozenSet[str]:
    """Configurations none of whose groups were dropped."""
    dropped = set(catalog.groups) - set(kept)
    return frozenset(config for config, groups in catalog.membership.items() if not groups & dropped)


def save_sequence(seq: FilterSequence, extra: Optional[Mapping] = None) -> str:
    """Serialize to JSON text; extra top-level entries (e.g. a manifest) are appended."""
    data = seq.to_dict()
    if extra:
        data.update(extra)
    return json.dumps(data, indent=2) + '\n'


def load_sequence(path: Union[str, Path]) -> FilterSequence:
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path} is not valid JSON: {e}") from e
    return FilterSequence.from_dict(data)


def describe_sequence(seq: FilterSequence) -> str:
    """Human-readable listing of the filter steps and their rules."""
    lines = [f"Filter with {len(seq.steps)} steps over {len(seq.groups)} groups (T = {seq.threshold})"]
    for index, step in enumerate(seq.steps, start=1):
        lines.append(f"{index}. drop {step.group_id} when the prediction is >= {seq.threshold} "
                     f"(covered {len(step.covered_at_fit)} datasets, saved {step.time_saved_at_fit:.6g}s)")
        rules = describe_tree(step.model, seq.feature_names)
        lines.extend('   ' + line for line in rules.splitlines())
    return '\n'.join(lines)
