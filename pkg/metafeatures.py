"""Dataset meta-features: simple counts, k-means silhouettes and PCA component counts."""

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Optional, Union

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans
from sklearn.decomposition import PCA
from sklearn.exceptions import ConvergenceWarning
from sklearn.impute import SimpleImputer
from sklearn.metrics import silhouette_score
from sklearn.preprocessing import OneHotEncoder, StandardScaler

from config import Config
from errors import FormatError, InvalidValue

logger = logging.getLogger(__name__)

CLASSIFICATION = 'classification'
REGRESSION = 'regression'

SIMPLE_FEATURES = (
    'n_samples',
    'n_features',
    'samples_to_features',
    'total_missing',
    'total_missing_f',
    'samples_with_any_missing',
    'samples_with_any_missing_f',
    'categorical_features',
    'numerical_features',
    'target_majority_class_instances',
    'target_majority_class_f',
    'target_minority_class_instances',
    'target_minority_class_f',
    'categorical_to_numerical',
)
SILHOUETTE_FEATURES = tuple(f'silhouette_{k}' for k in Config.SILHOUETTE_KS)
PCA_FEATURES = tuple(f'pca_{p}' for p in Config.PCA_PERCENTS)
META_FEATURES = SIMPLE_FEATURES + SILHOUETTE_FEATURES + PCA_FEATURES


@dataclass(frozen=True)
class TabularDataset:
    """Feature columns (NaN = missing), their kinds and an optional target."""

    frame: pd.DataFrame
    categorical: FrozenSet[str] = frozenset()
    target: Optional[pd.Series] = None
    task: Optional[str] = None
    name: str = ''

    def __post_init__(self):
        if len(self.frame) < 1:
            raise InvalidValue(f"dataset {self.name!r} has no rows")
        unknown = set(self.categorical) - set(self.frame.columns)
        if unknown:
            raise InvalidValue(f"categorical columns not in dataset: {sorted(unknown)}")
        if self.target is not None and len(self.target) != len(self.frame):
            raise InvalidValue("target length differs from the feature columns")
        if self.task not in (None, CLASSIFICATION, REGRESSION):
            raise InvalidValue(f"unknown task kind {self.task!r}")

    @property
    def numerical(self) -> list:
        return [column for column in self.frame.columns if column not in self.categorical]


def load_tabular_dataset(path: Union[str, Path], target: Optional[str] = None, task: Optional[str] = None,
                         categorical: Iterable[str] = ()) -> TabularDataset:
    """Read a dataset CSV; non-numeric columns are treated as categorical."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, encoding='utf-8')
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"{path.name}: unreadable dataset CSV: {e}") from e
    target_column = None
    if target is not None:
        if target not in frame.columns:
            raise FormatError(f"{path.name}: target column {target!r} not found")
        target_column = frame.pop(target)

    declared = set(categorical)
    inferred = {column for column in frame.columns if not pd.api.types.is_numeric_dtype(frame[column])}
    return TabularDataset(
        frame=frame,
        categorical=frozenset((declared | inferred) & set(frame.columns)),
        target=target_column,
        task=task if target is not None else None,
        name=path.stem,
    )


def extract_simple(ds: TabularDataset) -> Dict[str, float]:
    """The fourteen simple measures; class measures only for binary classification targets."""
    n_samples, n_features = ds.frame.shape
    missing = ds.frame.isna()
    total_missing = int(missing.to_numpy().sum())
    rows_missing = int(missing.any(axis=1).sum())
    n_categorical = len(ds.categorical)
    n_numerical = n_features - n_categorical

    values = {
        'n_samples': float(n_samples),
        'n_features': float(n_features),
        'samples_to_features': n_samples / n_features if n_features else np.nan,
        'total_missing': float(total_missing),
        'total_missing_f': total_missing / (n_samples * n_features) if n_features else np.nan,
        'samples_with_any_missing': float(rows_missing),
        'samples_with_any_missing_f': rows_missing / n_samples,
        'categorical_features': float(n_categorical),
        'numerical_features': float(n_numerical),
        'target_majority_class_instances': np.nan,
        'target_majority_class_f': np.nan,
        'target_minority_class_instances': np.nan,
        'target_minority_class_f': np.nan,
        # zero numerical features: denominator clamped to 1
        'categorical_to_numerical': n_categorical / max(n_numerical, 1),
    }

    if ds.task == CLASSIFICATION and ds.target is not None:
        counts = ds.target.dropna().value_counts()
        labelled = int(counts.sum())
        if len(counts) > 2:
            logger.warning(f"{ds.name or 'dataset'}: target has {len(counts)} classes; "
                           f"class measures are left missing")
        elif labelled:
            majority = int(counts.max())
            minority = int(counts.min()) if len(counts) > 1 else 0
            values.update({
                'target_majority_class_instances': float(majority),
                'target_majority_class_f': majority / labelled,
                'target_minority_class_instances': float(minority),
                'target_minority_class_f': minority / labelled,
            })
    return values


def encode_for_geometry(ds: TabularDataset) -> np.ndarray:
    """Impute, one-hot encode and standardize; zero-variance columns are dropped."""
    blocks = []
    numerical = ds.numerical
    if numerical:
        numbers = ds.frame[numerical].astype(float)
        numbers = numbers.loc[:, numbers.notna().any(axis=0)]
        if numbers.shape[1]:
            blocks.append(SimpleImputer(strategy='mean').fit_transform(numbers.to_numpy()))

    categorical = sorted(ds.categorical)
    if categorical:
        labels = ds.frame[categorical].astype(object)
        labels = labels.loc[:, labels.notna().any(axis=0)]
        if labels.shape[1]:
            labels = labels.apply(lambda column: column.map(lambda v: v if pd.isna(v) else str(v)))
            imputed = SimpleImputer(strategy='most_frequent').fit_transform(labels.to_numpy())
            encoder = OneHotEncoder(handle_unknown='ignore', sparse_output=False)
            blocks.append(encoder.fit_transform(imputed))

    if not blocks:
        return np.empty((len(ds.frame), 0))
    encoded = np.hstack(blocks).astype(float)
    encoded = encoded[:, encoded.std(axis=0) > 0]
    if encoded.shape[1] == 0:
        return encoded
    return StandardScaler().fit_transform(encoded)


def _silhouette(Z: np.ndarray, k: int, seed: int) -> float:
    if Z.shape[1] == 0:
        return 0.0
    distinct = np.unique(Z, axis=0).shape[0]
    if distinct == 1:
        return 0.0
    if k > distinct:
        return np.nan

    with warnings.catch_warnings():
        warnings.simplefilter('ignore', ConvergenceWarning)
        model = KMeans(n_clusters=k, init='k-means++', n_init=Config.KMEANS_N_INIT,
                       max_iter=Config.KMEANS_MAX_ITER, random_state=seed)
        labels = model.fit_predict(Z)

    n_labels = np.unique(labels).size
    # every point alone in its cluster (or a single cluster): all s(i) are 0
    if n_labels < 2 or n_labels >= Z.shape[0]:
        return 0.0
    return float(silhouette_score(Z, labels, metric='euclidean'))


def _subsample_rows(Z: np.ndarray, seed: int) -> np.ndarray:
    limit = Config.SILHOUETTE_MAX_ROWS
    if Z.shape[0] <= limit:
        return Z
    rng = np.random.default_rng(seed)
    return Z[np.sort(rng.choice(Z.shape[0], size=limit, replace=False))]


def silhouette_index(ds: TabularDataset, k: int, seed: int) -> float:
    """Mean silhouette of k-means on the encoded data; NaN when k exceeds distinct rows."""
    if k < 2:
        raise InvalidValue(f"silhouette needs k >= 2, got {k}")
    return _silhouette(_subsample_rows(encode_for_geometry(ds), seed), k, seed)


def _pca_count(Z: np.ndarray, p: float) -> float:
    if Z.shape[0] < 2:
        return np.nan
    if Z.shape[1] == 0:
        return 1.0
    ratios = PCA(svd_solver='full').fit(Z).explained_variance_ratio_
    if not np.all(np.isfinite(ratios)) or ratios.sum() <= 0:
        return 1.0
    cumulative = np.cumsum(ratios)
    count = int(np.searchsorted(cumulative, p / 100.0 - 1e-9)) + 1
    return float(min(count, Z.shape[1]))


def pca_component_count(ds: TabularDataset, p: float) -> float:
    """Smallest number of principal components explaining at least p% of the variance."""
    if not 0 < p <= 100:
        raise InvalidValue(f"variance percentage must lie in (0, 100], got {p}")
    return _pca_count(encode_for_geometry(ds), p)


def extract_all(ds: TabularDataset, seed: int) -> pd.Series:
    """All 27 meta-features, in table order."""
    values = extract_simple(ds)
    Z = encode_for_geometry(ds)

    sample = _subsample_rows(Z, seed)
    for k, name in zip(Config.SILHOUETTE_KS, SILHOUETTE_FEATURES):
        values[name] = _silhouette(sample, k, seed)
    for p, name in zip(Config.PCA_PERCENTS, PCA_FEATURES):
        values[name] = _pca_count(Z, p)

    logger.debug(f"Extracted meta-features for {ds.name or 'dataset'} ({Z.shape[0]} x {Z.shape[1]} encoded)")
    return pd.Series([values[name] for name in META_FEATURES], index=list(META_FEATURES),
                     name=ds.name or None, dtype=float)


def read_meta_features(source) -> pd.DataFrame:
    """Meta-feature CSV -> table indexed by dataset_id; empty cells are NaN."""
    try:
        frame = pd.read_csv(source, dtype={'dataset_id': str}, encoding='utf-8', float_precision='round_trip')
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"Unreadable meta-feature CSV: {e}") from e
    if 'dataset_id' not in frame.columns:
        raise FormatError("Meta-feature CSV needs a dataset_id column")
    if frame['dataset_id'].duplicated().any():
        duplicated = sorted(frame.loc[frame['dataset_id'].duplicated(), 'dataset_id'])
        raise FormatError(f"Meta-feature CSV repeats datasets: {duplicated}")
    frame = frame.set_index('dataset_id')
    try:
        return frame.astype(float)
    except ValueError as e:
        raise InvalidValue(f"Meta-feature values must be numeric: {e}") from e


def meta_features_csv(table: pd.DataFrame) -> str:
    """Render a meta-feature table as CSV text (dataset_id first, empty cell = missing)."""
    frame = table.copy()
    frame.index.name = 'dataset_id'
    return frame.to_csv(lineterminator='\n')
