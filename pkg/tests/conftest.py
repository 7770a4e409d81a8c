"""Shared corpora for the test suite."""

import numpy as np
import pandas as pd
import pytest

from runs import GroupCatalog, RunRecord, build_matrices

TOY_PERFORMANCE = {
    'A': [1.00, 0.90, 1.00, 0.95],
    'B': [0.98, 1.00, 0.97, 1.00],
    'C': [0.60, 0.70, 0.65, 0.60],
}
TOY_TIME = {'A': 10.0, 'B': 20.0, 'C': 5.0}
TOY_DATASETS = ['d1', 'd2', 'd3', 'd4']


def make_toy_records():
    """Three groups with one configuration each over four datasets."""
    records = []
    for group, performances in TOY_PERFORMANCE.items():
        for dataset, performance in zip(TOY_DATASETS, performances):
            records.append(RunRecord(dataset, f"{group.lower()}1", frozenset({group}),
                                     performance, TOY_TIME[group]))
    return records


def make_synthetic_corpus(n_datasets=40, seed=0):
    """Groups A and B each win on half of the datasets; the expensive group Z never does.

    Meta-feature `s` tells the halves apart, `noise` carries no signal. Per dataset
    the groups cost A 10, B 10 and Z 80 seconds.
    """
    rng = np.random.default_rng(seed)
    datasets = [f"ds{i:02d}" for i in range(n_datasets)]
    signature = [i % 2 for i in range(n_datasets)]
    meta = pd.DataFrame({'s': signature, 'noise': rng.normal(size=n_datasets)},
                        index=pd.Index(datasets, name='dataset_id'), dtype=float)

    records = []
    for dataset, s in zip(datasets, signature):
        tops = {'A': 1.0 if s else 0.9, 'B': 0.9 if s else 1.0, 'Z': 0.8}
        times = {'A': 2.0, 'B': 2.0, 'Z': 16.0}
        for group, top in tops.items():
            for j in range(5):
                records.append(RunRecord(dataset, f"{group.lower()}{j}", frozenset({group}),
                                         round(top - 0.01 * j, 4), times[group]))
    return records, meta


def make_random_corpus(rng, max_groups=4, max_datasets=6):
    """Small corpus with one configuration per group and random gaps."""
    groups = [chr(ord('A') + i) for i in range(int(rng.integers(1, max_groups + 1)))]
    datasets = [f"d{i}" for i in range(int(rng.integers(1, max_datasets + 1)))]
    records = []
    for dataset in datasets:
        present = [group for group in groups if rng.random() < 0.8] or [groups[0]]
        for group in present:
            records.append(RunRecord(dataset, f"c{group}", frozenset({group}),
                                     float(rng.uniform(0.6, 1.0)), float(rng.integers(0, 20))))
    meta = pd.DataFrame({'constant': 1.0}, index=pd.Index(datasets, name='dataset_id'))
    return records, meta


@pytest.fixture
def toy_records():
    return make_toy_records()


@pytest.fixture
def toy_catalog(toy_records):
    return GroupCatalog.from_records(toy_records)


@pytest.fixture
def toy_matrices(toy_records, toy_catalog):
    return build_matrices(toy_records, toy_catalog)


@pytest.fixture
def toy_meta():
    return pd.DataFrame({'constant': [1.0] * 4}, index=pd.Index(TOY_DATASETS, name='dataset_id'))


@pytest.fixture
def synthetic_corpus():
    return make_synthetic_corpus()


TOY_RUNS_CSV = """dataset_id,config_id,group_ids,performance,time_seconds,shared_cost_id
""" + ''.join(
    f"{dataset},{group.lower()}1,{group},{performance},{TOY_TIME[group]:g},\n"
    for group, performances in TOY_PERFORMANCE.items()
    for dataset, performance in zip(TOY_DATASETS, performances)
)


@pytest.fixture
def toy_files(tmp_path):
    """Toy run records and meta-features written as CSV files."""
    runs = tmp_path / 'runs.csv'
    runs.write_text(TOY_RUNS_CSV, encoding='utf-8')
    meta = tmp_path / 'meta.csv'
    meta.write_text('dataset_id,constant\n' + ''.join(f"{d},1.0\n" for d in TOY_DATASETS), encoding='utf-8')
    return runs, meta
