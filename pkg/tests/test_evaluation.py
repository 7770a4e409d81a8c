import logging
import math

import numpy as np
import pytest

from config import Config
from errors import CIUndefined, InvalidValue
from evaluation import (RESULT_COLUMNS, IdentityPolicy, ShsrPolicy, evaluate_holdout, gaussian_ci, results_frame,
                        score_dataset, subsample_results, sweep)
from runs import RunRecord


class _FixedPolicy:
    """Keeps the same configurations on every dataset."""

    name = 'fixed'
    param = '-'

    def __init__(self, kept):
        self.kept = frozenset(kept)

    def fit(self, records, meta, seed):
        return lambda dataset_id, x_new: self.kept


def test_gaussian_ci():
    assert gaussian_ci([1, 1, 1]) == (1.0, 0.0)
    mean, half_width = gaussian_ci([0, 1])
    assert mean == 0.5
    assert half_width == pytest.approx(0.98)
    with pytest.raises(CIUndefined):
        gaussian_ci([0.3])


def test_subsample_results(toy_records):
    assert subsample_results(toy_records, 1.0, seed=0) == toy_records

    ten = toy_records[:10]
    half = subsample_results(ten, 0.5, seed=4)
    assert len(half) == 5
    assert half == subsample_results(ten, 0.5, seed=4)
    assert [ten.index(r) for r in half] == sorted(ten.index(r) for r in half)

    with pytest.raises(InvalidValue):
        subsample_results(ten, 0.0, seed=0)


def test_score_dataset_after_dropping_cheap_group(toy_records):
    on_d1 = [r for r in toy_records if r.dataset_id == 'd1']

    perf_ratio, time_ratio = score_dataset(on_d1, frozenset({'a1', 'b1'}))

    assert perf_ratio == 1.0
    assert time_ratio == pytest.approx(30 / 35)


def test_score_dataset_edge_cases(toy_records):
    on_d2 = [r for r in toy_records if r.dataset_id == 'd2']

    assert score_dataset(on_d2, None) == (1.0, 1.0)
    assert score_dataset(on_d2, frozenset({'a1'})) == (pytest.approx(0.9), pytest.approx(10 / 35))
    perf_ratio, time_ratio = score_dataset(on_d2, frozenset({'unknown'}))
    assert math.isnan(perf_ratio)
    assert time_ratio == 0.0

    free = [RunRecord('d', 'c1', frozenset({'A'}), 1.0, 0.0), RunRecord('d', 'c2', frozenset({'B'}), 0.5, 0.0)]
    assert score_dataset(free, frozenset({'c2'})) == (0.5, 1.0)


def test_nested_kept_sets_are_monotone(synthetic_corpus):
    records, _ = synthetic_corpus
    rng = np.random.default_rng(17)
    by_dataset = {}
    for record in records:
        by_dataset.setdefault(record.dataset_id, []).append(record)
    datasets = sorted(by_dataset)

    for _ in range(100):
        on_dataset = by_dataset[datasets[int(rng.integers(len(datasets)))]]
        configs = sorted(r.config_id for r in on_dataset)
        larger = {c for c in configs if rng.random() < 0.7} or {configs[0]}
        smaller = {c for c in larger if rng.random() < 0.5} or {sorted(larger)[0]}

        perf_small, time_small = score_dataset(on_dataset, frozenset(smaller))
        perf_large, time_large = score_dataset(on_dataset, frozenset(larger))

        assert perf_small <= perf_large
        assert time_small <= time_large


def test_identity_policy_scores_exactly_one(synthetic_corpus):
    records, meta = synthetic_corpus

    report = evaluate_holdout(records, meta, IdentityPolicy(), repeats=20, test_fraction=0.1, seed=0)

    assert [r.perf_ratio for r in report.repeats] == [1.0] * 20
    assert [r.time_ratio for r in report.repeats] == [1.0] * 20
    assert (report.perf_mean, report.perf_ci) == (1.0, 0.0)
    assert (report.time_mean, report.time_ci) == (1.0, 0.0)
    assert all(r.n_test == 4 for r in report.repeats)
    assert len({r.seed for r in report.repeats}) == 20


def test_shsr_on_synthetic_corpus(synthetic_corpus):
    records, meta = synthetic_corpus

    report = evaluate_holdout(records, meta, ShsrPolicy(0.999), repeats=5, test_fraction=0.1, seed=1)

    assert report.perf_mean >= 0.999
    assert report.time_mean <= 0.6
    assert report.time_mean == pytest.approx(0.1)
    assert report.param == '0.999'


def test_partial_results_keep_performance(synthetic_corpus):
    records, meta = synthetic_corpus

    full, partial = sweep(records, meta, [ShsrPolicy(0.999)], repeats=5, test_fraction=0.1, seed=1,
                          subsamples=(1.0, 0.6))

    assert partial.param == '0.999@0.6'
    assert partial.subsample == 0.6
    assert partial.perf_mean >= full.perf_mean - 0.02
    assert all(0 <= outcome.time_ratio <= 1 for outcome in partial.outcomes)


def test_time_ratio_shrinks_with_more_training_results(synthetic_corpus):
    records, meta = synthetic_corpus
    fractions = sorted(Config.SUBSAMPLE_FRACTIONS)

    reports = sweep(records, meta, [ShsrPolicy(0.999)], repeats=5, test_fraction=0.1, seed=4,
                    subsamples=fractions)

    assert [report.subsample for report in reports] == fractions
    for i, smaller in enumerate(reports):
        for larger in reports[i + 1:]:
            low_edge = smaller.time_mean + (smaller.time_ci or 0.0)
            high_edge = larger.time_mean - (larger.time_ci or 0.0)
            assert low_edge >= high_edge - 1e-12, (smaller.param, larger.param)


def test_evaluation_is_reproducible(synthetic_corpus):
    records, meta = synthetic_corpus

    first = evaluate_holdout(records, meta, ShsrPolicy(0.99), repeats=3, seed=12)
    second = evaluate_holdout(records, meta, ShsrPolicy(0.99), repeats=3, seed=12)

    assert first.to_dict() == second.to_dict()
    assert first.outcomes == second.outcomes


def test_toy_holdout_holds_out_one_dataset(toy_records, toy_meta):
    report = evaluate_holdout(toy_records, toy_meta, _FixedPolicy({'a1', 'b1'}), repeats=4, test_fraction=0.1,
                              seed=0)

    assert all(r.n_test == 1 for r in report.repeats)
    assert all(o.perf_ratio == pytest.approx(1.0) for o in report.outcomes if o.dataset_id in ('d1', 'd3'))


def test_empty_kept_set_is_flagged(toy_records, toy_meta, caplog):
    with caplog.at_level(logging.WARNING):
        report = evaluate_holdout(toy_records, toy_meta, _FixedPolicy(set()), repeats=2, seed=0)

    assert all(o.flagged for o in report.outcomes)
    assert all(r.n_flagged == 1 for r in report.repeats)
    assert math.isnan(report.perf_mean)
    assert report.perf_ci is None
    assert 'kept no run configuration' in caplog.text


def test_invalid_protocol_parameters(toy_records, toy_meta):
    with pytest.raises(InvalidValue):
        evaluate_holdout(toy_records, toy_meta, IdentityPolicy(), repeats=0)
    with pytest.raises(InvalidValue):
        evaluate_holdout(toy_records, toy_meta, IdentityPolicy(), test_fraction=1.0)
    with pytest.raises(InvalidValue):
        evaluate_holdout(toy_records, toy_meta.loc[['d1']], IdentityPolicy())


def test_datasets_without_meta_features_are_left_out(toy_records, toy_meta, caplog):
    with caplog.at_level(logging.WARNING):
        report = evaluate_holdout(toy_records, toy_meta.drop(index='d4'), IdentityPolicy(), repeats=3, seed=0)

    assert 'd4' not in {o.dataset_id for o in report.outcomes}
    assert 'no meta-features' in caplog.text


def test_results_frame(toy_records, toy_meta):
    reports = sweep(toy_records, toy_meta, [IdentityPolicy(), _FixedPolicy({'b1'})], repeats=2, seed=0)

    frame = results_frame(reports)

    assert list(frame.columns) == RESULT_COLUMNS
    assert len(frame) == 4
    assert frame['policy'].tolist() == ['identity', 'identity', 'fixed', 'fixed']
