"""Run-record ingestion and the group-level performance/time matrices."""

import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import Config
from errors import DuplicateRecord, FormatError, InvalidValue

logger = logging.getLogger(__name__)

RUN_COLUMNS = ('dataset_id', 'config_id', 'group_ids', 'performance', 'time_seconds', 'shared_cost_id')
REQUIRED_COLUMNS = RUN_COLUMNS[:5]
GROUP_SEPARATOR = ';'


@dataclass(frozen=True)
class RunRecord:
    """One (dataset, configuration) result produced by an AutoML run."""

    dataset_id: str
    config_id: str
    group_ids: FrozenSet[str]
    performance: float
    time_seconds: float
    shared_cost_id: Optional[str] = None

    def __post_init__(self):
        if not self.group_ids:
            raise InvalidValue(f"{self.dataset_id}/{self.config_id}: group_ids must not be empty")
        if not (math.isfinite(self.performance) and self.performance > 0):
            raise InvalidValue(f"{self.dataset_id}/{self.config_id}: performance must be > 0, got {self.performance}")
        if not (math.isfinite(self.time_seconds) and self.time_seconds >= 0):
            raise InvalidValue(f"{self.dataset_id}/{self.config_id}: time_seconds must be >= 0, got {self.time_seconds}")

    @property
    def key(self) -> Tuple[str, str]:
        return self.dataset_id, self.config_id


@dataclass(frozen=True)
class GroupCatalog:
    """Configuration groups in fixed lexicographic order plus config membership."""

    groups: Tuple[str, ...]
    membership: Mapping[str, FrozenSet[str]] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.groups)) != len(self.groups):
            raise InvalidValue("group ids must be unique")
        ordered = tuple(sorted(self.groups))
        object.__setattr__(self, 'groups', ordered)
        unknown = set().union(*self.membership.values()) - set(ordered) if self.membership else set()
        if unknown:
            raise InvalidValue(f"membership references unknown groups: {sorted(unknown)}")

    @classmethod
    def from_records(cls, records: Iterable[RunRecord]) -> 'GroupCatalog':
        membership: Dict[str, FrozenSet[str]] = {}
        for record in records:
            known = membership.setdefault(record.config_id, record.group_ids)
            if known != record.group_ids:
                raise InvalidValue(
                    f"configuration {record.config_id} declared with groups {sorted(known)} "
                    f"and {sorted(record.group_ids)}"
                )
        groups = sorted(set().union(*membership.values())) if membership else []
        return cls(groups=tuple(groups), membership=membership)

    @property
    def configs(self) -> Tuple[str, ...]:
        return tuple(sorted(self.membership))

    def to_dict(self) -> Dict:
        return {
            'groups': list(self.groups),
            'membership': {config: sorted(groups) for config, groups in sorted(self.membership.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> 'GroupCatalog':
        return cls(
            groups=tuple(data['groups']),
            membership={config: frozenset(groups) for config, groups in data.get('membership', {}).items()},
        )


@dataclass(frozen=True)
class RatioMatrix:
    """G x D performance ratios; rows are group ids, columns dataset ids, NaN is missing."""

    values: pd.DataFrame

    def __post_init__(self):
        present = self.values.to_numpy(dtype=float)
        mask = ~np.isnan(present)
        if np.any((present[mask] <= 0) | (present[mask] > 1 + 1e-12)):
            raise InvalidValue("performance ratios must lie in (0, 1]")
        for dataset in self.values.columns[mask.any(axis=0)]:
            if not math.isclose(self.values[dataset].max(), 1.0, rel_tol=0, abs_tol=1e-12):
                raise InvalidValue(f"ratio column {dataset} has no group attaining 1")

    @property
    def groups(self) -> Tuple[str, ...]:
        return tuple(self.values.index)

    @property
    def datasets(self) -> Tuple[str, ...]:
        return tuple(self.values.columns)

    def present(self, group: str) -> FrozenSet[str]:
        row = self.values.loc[group]
        return frozenset(row.index[row.notna()])


@dataclass(frozen=True)
class TimeMatrix:
    """G x D summed execution times, same ids and missingness as the RatioMatrix."""

    values: pd.DataFrame

    def __post_init__(self):
        present = self.values.to_numpy(dtype=float)
        if np.any(present[~np.isnan(present)] < 0):
            raise InvalidValue("execution times must be >= 0")

    def get(self, group: str, dataset: str) -> float:
        """Time of a (group, dataset) cell; missing cells count as 0."""
        value = self.values.at[group, dataset]
        return 0.0 if pd.isna(value) else float(value)


@dataclass(frozen=True)
class ActiveSets:
    """Per-group sets of datasets still in play."""

    sets: Mapping[str, FrozenSet[str]]

    def __getitem__(self, group: str) -> FrozenSet[str]:
        return self.sets.get(group, frozenset())

    def without(self, group: str, datasets: Iterable[str]) -> 'ActiveSets':
        updated = dict(self.sets)
        updated[group] = self[group] - frozenset(datasets)
        return ActiveSets(updated)

    def total(self) -> int:
        return sum(len(datasets) for datasets in self.sets.values())


def _read_source(source: Union[str, Path, BinaryIO, bytes]) -> pd.DataFrame:
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    try:
        return pd.read_csv(source, dtype=str, keep_default_na=False, encoding='utf-8')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise FormatError(f"Unreadable run-record CSV: {e}") from e


def _parse_float(value: str, column: str, row: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise InvalidValue(f"row {row}: {column} is not a number: {value!r}") from None


def load_run_records(source: Union[str, Path, BinaryIO, bytes]) -> List[RunRecord]:
    """Parse and validate a run-record CSV."""
    frame = _read_source(source)
    columns = [column.strip() for column in frame.columns]

    unknown = [column for column in columns if column not in RUN_COLUMNS]
    if unknown:
        raise FormatError(f"Unknown run-record columns: {unknown}")
    missing = [column for column in REQUIRED_COLUMNS if column not in columns]
    if missing:
        raise FormatError(f"Missing run-record columns: {missing}")
    frame.columns = columns

    records = []
    seen = set()
    for row, item in enumerate(frame.to_dict('records'), start=2):
        groups = frozenset(g.strip() for g in item['group_ids'].split(GROUP_SEPARATOR) if g.strip())
        if not groups:
            raise InvalidValue(f"row {row}: group_ids is empty")
        record = RunRecord(
            dataset_id=item['dataset_id'].strip(),
            config_id=item['config_id'].strip(),
            group_ids=groups,
            performance=_parse_float(item['performance'], 'performance', row),
            time_seconds=_parse_float(item['time_seconds'], 'time_seconds', row),
            shared_cost_id=(item.get('shared_cost_id') or '').strip() or None,
        )
        if record.key in seen:
            raise DuplicateRecord(f"row {row}: duplicate record for {record.key}")
        seen.add(record.key)
        records.append(record)

    logger.info(f"Loaded {len(records)} run records")
    return records


def _exploded(records: Sequence[RunRecord], deduplicate_shared: bool) -> pd.DataFrame:
    """One row per (record, group) with a cost key that collapses shared costs."""
    rows = []
    for record in records:
        cost_key = record.config_id
        if deduplicate_shared and record.shared_cost_id:
            cost_key = f"shared:{record.shared_cost_id}"
        for group in record.group_ids:
            rows.append((group, record.dataset_id, record.config_id, cost_key,
                         record.performance, record.time_seconds))
    return pd.DataFrame(rows, columns=['group', 'dataset', 'config', 'cost_key', 'performance', 'time'])


def run_cost(records: Iterable[RunRecord], deduplicate_shared: bool = True) -> float:
    """Total execution time of a set of records, counting each shared cost once."""
    costs: Dict[str, float] = {}
    for record in records:
        key = record.config_id
        if deduplicate_shared and record.shared_cost_id:
            key = f"shared:{record.shared_cost_id}"
        costs[key] = max(costs.get(key, 0.0), record.time_seconds)
    return float(sum(costs[key] for key in sorted(costs)))


def build_matrices(records: Sequence[RunRecord], catalog: GroupCatalog,
                   datasets: Optional[Iterable[str]] = None,
                   deduplicate_shared: Optional[bool] = None) -> Tuple[RatioMatrix, TimeMatrix]:
    """Build the group-level performance-ratio and execution-time matrices."""
    if deduplicate_shared is None:
        deduplicate_shared = Config.DEDUPLICATE_SHARED_COST

    stray = set().union(*(record.group_ids for record in records)) - set(catalog.groups) if records else set()
    if stray:
        raise InvalidValue(f"records reference groups missing from the catalog: {sorted(stray)}")

    observed = sorted({record.dataset_id for record in records})
    if datasets is not None:
        with_records = set(observed)
        requested = sorted(set(datasets))
        for dataset in requested:
            if dataset not in with_records:
                logger.warning(f"Dataset {dataset} has no run records; skipped")
        observed = [dataset for dataset in requested if dataset in with_records]
        records = records_for(records, observed)

    groups = list(catalog.groups)
    if not records:
        empty_frame = pd.DataFrame(index=pd.Index(groups, dtype=object), columns=pd.Index([], dtype=object), dtype=float)
        return RatioMatrix(empty_frame), TimeMatrix(empty_frame.copy())

    exploded = _exploded(records, deduplicate_shared)
    best_overall = exploded.groupby('dataset')['performance'].max()
    best_in_group = exploded.groupby(['group', 'dataset'])['performance'].max()
    ratios = (best_in_group / best_overall.reindex(best_in_group.index.get_level_values('dataset')).to_numpy())

    cell_costs = exploded.groupby(['group', 'dataset', 'cost_key'])['time'].max()
    times = cell_costs.groupby(level=['group', 'dataset']).sum()

    ratio_frame = ratios.unstack('dataset').reindex(index=groups, columns=observed).astype(float)
    time_frame = times.unstack('dataset').reindex(index=groups, columns=observed).astype(float)
    ratio_frame.index.name = time_frame.index.name = 'group_id'
    ratio_frame.columns.name = time_frame.columns.name = 'dataset_id'

    logger.info(f"Built {len(groups)} x {len(observed)} group matrices "
                f"({int(ratio_frame.notna().sum().sum())} present cells)")
    return RatioMatrix(ratio_frame), TimeMatrix(time_frame)


def init_active(P: RatioMatrix) -> ActiveSets:
    """Every group starts active on the datasets where it has results."""
    return ActiveSets({group: P.present(group) for group in P.groups})


def records_for(records: Iterable[RunRecord], dataset_ids: Iterable[str]) -> List[RunRecord]:
    """Records restricted to a set of datasets, order preserved."""
    wanted = set(dataset_ids)
    return [record for record in records if record.dataset_id in wanted]
