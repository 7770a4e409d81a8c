import json
import logging

import numpy as np
import pandas as pd
import pytest

from errors import FormatError, InvalidValue
from runs import GroupCatalog, RunRecord, build_matrices, init_active
from shsr import (FilterSequence, _fit_group, _imputed_features, apply_filter, describe_sequence, fit_shsr,
                  kept_configurations, leave_one_out_targets, load_sequence, save_sequence)
from tests.conftest import make_random_corpus


def _fit(matrices, meta, T, seed=0, **kwargs):
    P, E = matrices
    return fit_shsr(P, E, meta, T, init_active(P), seed, **kwargs)


def test_leave_one_out_targets(toy_matrices):
    P, _ = toy_matrices

    assert leave_one_out_targets(P, 'A', P.datasets).y.tolist() == pytest.approx([0.98, 1.0, 0.97, 1.0])
    assert leave_one_out_targets(P, 'C', P.datasets).y.tolist() == [1.0, 1.0, 1.0, 1.0]


def test_leave_one_out_excludes_datasets_without_other_groups(toy_records, toy_catalog):
    records = [r for r in toy_records if not (r.dataset_id == 'd4' and r.group_ids != frozenset({'A'}))]
    P, _ = build_matrices(records, toy_catalog)

    targets = leave_one_out_targets(P, 'A', P.present('A'))

    assert targets.usable == ('d1', 'd2', 'd3')
    assert targets.excluded == ('d4',)


def test_toy_sequence_at_099(toy_matrices, toy_meta):
    seq = _fit(toy_matrices, toy_meta, 0.99)

    assert [step.group_id for step in seq.steps] == ['C']
    assert seq.steps[0].time_saved_at_fit == 20.0
    assert seq.steps[0].covered_at_fit == frozenset({'d1', 'd2', 'd3', 'd4'})


def test_toy_sequence_at_095(toy_matrices, toy_meta):
    seq = _fit(toy_matrices, toy_meta, 0.95)

    assert [step.group_id for step in seq.steps] == ['B', 'A', 'C']
    assert [step.time_saved_at_fit for step in seq.steps] == [80.0, 40.0, 20.0]


def test_threshold_above_one_gives_empty_sequence(toy_matrices, toy_meta, caplog):
    with caplog.at_level(logging.WARNING):
        seq = _fit(toy_matrices, toy_meta, 1.01)

    assert seq.steps == ()
    assert 'empty filter' in caplog.text


def test_non_positive_threshold_rejected(toy_matrices, toy_meta):
    with pytest.raises(InvalidValue):
        _fit(toy_matrices, toy_meta, 0.0)


def test_empty_corpus_gives_empty_sequence(toy_meta):
    P, E = build_matrices([], GroupCatalog(groups=('A', 'B')))

    seq = fit_shsr(P, E, toy_meta, 0.99, init_active(P), seed=0)

    assert seq.steps == ()
    assert apply_filter(seq, {}).kept == ('A', 'B')


def test_missing_meta_rows_rejected(toy_matrices, toy_meta):
    with pytest.raises(FormatError):
        _fit(toy_matrices, toy_meta.drop(index='d3'), 0.99)


def test_apply_drops_selected_group(toy_matrices, toy_meta):
    seq = _fit(toy_matrices, toy_meta, 0.99)

    decision = apply_filter(seq, {'constant': 1.0})

    assert decision.dropped == ('C',)
    assert decision.kept == ('A', 'B')
    assert not decision.safeguard_triggered


def test_apply_safeguard_keeps_last_group(toy_matrices, toy_meta, caplog):
    seq = _fit(toy_matrices, toy_meta, 0.95)

    with caplog.at_level(logging.WARNING):
        decision = apply_filter(seq, {'constant': 1.0})

    assert decision.dropped == ('B', 'A')
    assert decision.kept == ('C',)
    assert decision.safeguard_triggered
    assert decision.skipped_steps == (2,)


def test_empty_sequence_keeps_everything(toy_matrices, toy_meta):
    seq = _fit(toy_matrices, toy_meta, 1.01)

    assert apply_filter(seq, pd.Series({'constant': 1.0})).kept == ('A', 'B', 'C')


def test_kept_configurations():
    catalog = GroupCatalog(
        groups=('A', 'B', 'X', 'Y', 'Z'),
        membership={f"{g}{h}": frozenset({g, h}) for g in 'AB' for h in 'XYZ'},
    )

    assert kept_configurations(['B', 'X', 'Y'], catalog) == frozenset({'BX', 'BY'})
    assert kept_configurations(catalog.groups, catalog) == frozenset(catalog.membership)

    lasso = GroupCatalog(groups=('lasso-1', 'svm-rbf'), membership={'c': frozenset({'lasso-1', 'svm-rbf'})})
    assert kept_configurations(['lasso-1'], lasso) == frozenset()


def _brute_force(P, E, T):
    """Greedy selection where every model is the mean of its targets."""
    values = P.values
    active = {g: {d for d in values.columns if pd.notna(values.at[g, d])} for g in values.index}
    steps = []
    while True:
        best = None
        for g in sorted(values.index):
            targets = {}
            for d in sorted(active[g]):
                others = values.loc[values.index != g, d].dropna()
                if len(others):
                    targets[d] = others.max()
            if not targets:
                continue
            mean = float(np.mean(list(targets.values())))
            covered = set(targets) if mean >= T else set()
            savings = sum(E.get(g, d) for d in sorted(covered))
            if best is None or savings > best[2]:
                best = (g, covered, savings)
        if best is None or best[2] <= 0:
            return steps
        steps.append(best)
        active[best[0]] -= best[1]


def test_matches_mean_model_oracle_on_random_corpora():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        records, meta = make_random_corpus(rng)
        catalog = GroupCatalog.from_records(records)
        P, E = build_matrices(records, catalog)
        T = float(rng.choice([0.7, 0.8, 0.9, 0.95, 0.99]))

        seq = fit_shsr(P, E, meta, T, init_active(P), seed=int(rng.integers(1000)), catalog=catalog)
        expected = _brute_force(P, E, T)

        assert [step.group_id for step in seq.steps] == [g for g, _, _ in expected]
        assert [set(step.covered_at_fit) for step in seq.steps] == [covered for _, covered, _ in expected]
        assert [step.time_saved_at_fit for step in seq.steps] == pytest.approx([s for _, _, s in expected])
        assert all(step.time_saved_at_fit > 0 for step in seq.steps)


def test_lower_threshold_covers_more_on_first_iteration():
    rng = np.random.default_rng(77)
    thresholds = (0.7, 0.8, 0.9, 0.95, 0.99)
    for _ in range(30):
        records, meta = make_random_corpus(rng, max_datasets=14)
        meta = meta.assign(signal=rng.normal(size=len(meta)), other=rng.integers(0, 3, size=len(meta)))
        P, E = build_matrices(records, GroupCatalog.from_records(records))
        active = init_active(P)
        features, _ = _imputed_features(meta, P.datasets)
        seed = int(rng.integers(1000))

        for g in P.groups:
            covered = [_fit_group(P, E, features, T, g, active[g], seed).covered for T in thresholds]
            assert all(low >= high for low, high in zip(covered, covered[1:]))

        fits = [fit_shsr(P, E, meta, T, active, seed) for T in thresholds]
        savings = [seq.steps[0].time_saved_at_fit if seq.steps else 0.0 for seq in fits]
        assert all(low >= high for low, high in zip(savings, savings[1:]))


def test_parallel_fit_matches_serial(synthetic_corpus):
    records, meta = synthetic_corpus
    catalog = GroupCatalog.from_records(records)
    P, E = build_matrices(records, catalog)

    serial = fit_shsr(P, E, meta, 0.999, init_active(P), seed=3, catalog=catalog, workers=1)
    parallel = fit_shsr(P, E, meta, 0.999, init_active(P), seed=3, catalog=catalog, workers=4)

    assert save_sequence(serial) == save_sequence(parallel)


def test_synthetic_filter_drops_dominated_group(synthetic_corpus):
    records, meta = synthetic_corpus
    catalog = GroupCatalog.from_records(records)
    P, E = build_matrices(records, catalog)

    seq = fit_shsr(P, E, meta, 0.999, init_active(P), seed=0, catalog=catalog)

    assert seq.steps[0].group_id == 'Z'
    assert len(seq.steps[0].covered_at_fit) == 40
    assert apply_filter(seq, meta.loc['ds00']).kept == ('B',)
    assert apply_filter(seq, meta.loc['ds01']).kept == ('A',)


def test_missing_meta_values_use_fit_means(synthetic_corpus):
    records, meta = synthetic_corpus
    catalog = GroupCatalog.from_records(records)
    P, E = build_matrices(records, catalog)
    seq = fit_shsr(P, E, meta, 0.999, init_active(P), seed=0, catalog=catalog)

    assert seq.imputation_means['s'] == pytest.approx(0.5)
    decision = apply_filter(seq, {'noise': 0.0})
    assert decision.kept


def test_save_load_round_trip(tmp_path, toy_matrices, toy_meta, toy_catalog):
    seq = _fit(toy_matrices, toy_meta, 0.95, catalog=toy_catalog)
    path = tmp_path / 'model.json'
    path.write_text(save_sequence(seq, {'manifest': {'command': 'fit'}}))

    loaded = load_sequence(path)

    assert loaded == seq
    assert json.loads(path.read_text())['format'] == 'shsr-filter/1'
    assert save_sequence(loaded) == save_sequence(seq)


def test_load_rejects_foreign_format(tmp_path):
    path = tmp_path / 'model.json'
    path.write_text(json.dumps({'format': 'other/9', 'steps': []}))
    with pytest.raises(FormatError):
        load_sequence(path)

    path.write_text('{not json')
    with pytest.raises(FormatError):
        load_sequence(path)

    with pytest.raises(FormatError):
        FilterSequence.from_dict({'format': 'shsr-filter/1'})


def test_describe_sequence(toy_matrices, toy_meta):
    text = describe_sequence(_fit(toy_matrices, toy_meta, 0.99))

    assert text.splitlines()[0] == 'Filter with 1 steps over 3 groups (T = 0.99)'
    assert '1. drop C' in text
    assert 'predict 1' in text


def test_fit_is_deterministic(synthetic_corpus):
    records, meta = synthetic_corpus
    catalog = GroupCatalog.from_records(records)
    P, E = build_matrices(records, catalog)

    first = fit_shsr(P, E, meta, 0.99, init_active(P), seed=5, catalog=catalog)
    second = fit_shsr(P, E, meta, 0.99, init_active(P), seed=5, catalog=catalog)

    assert save_sequence(first) == save_sequence(second)


def test_single_group_corpus_never_drops_everything():
    records = [RunRecord(f"d{i}", 'c', frozenset({'A'}), 1.0, 1.0) for i in range(6)]
    catalog = GroupCatalog.from_records(records)
    P, E = build_matrices(records, catalog)
    meta = pd.DataFrame({'constant': 1.0}, index=[f"d{i}" for i in range(6)])

    seq = fit_shsr(P, E, meta, 0.5, init_active(P), seed=0)

    assert seq.steps == ()
    assert apply_filter(seq, {'constant': 1.0}).kept == ('A',)
