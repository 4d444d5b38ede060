import csv
import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afibshift.errors import StratificationError, ValidationError
from afibshift.preprocess import (SplitSpec, fit_length, kfold_split, largest_remainder, padding_report,
                                  prepare_inputs, standardize, stratified_split, write_padding_report)
from afibshift.signal_io import Dataset, LabeledSignal, generate_synthetic_dataset


def make_dataset(counts, length=10):
    recs = []
    for label, n in zip("NAO~", counts):
        for i in range(n):
            recs.append(LabeledSignal(f"{label}{i}", np.arange(1, length + 1, dtype=np.int16), label))
    return Dataset(recs)


def test_standardize_examples():
    np.testing.assert_allclose(standardize([2, 4, 6]), [-1.224744871391589, 0, 1.224744871391589], atol=1e-12)
    assert standardize([5, 5, 5]).tolist() == [0, 0, 0]


def test_standardize_moments(np_rng):
    x = np_rng.integers(-2000, 2000, 1000)
    z = standardize(x)
    mu = sum(z) / len(z)
    var = sum((v - mu) ** 2 for v in z) / len(z)
    assert abs(mu) < 1e-9
    assert abs(var - 1) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=300))
def test_standardize_idempotent(xs):
    once = standardize(xs)
    np.testing.assert_allclose(standardize(once), once, atol=1e-9)


def test_fit_length_examples():
    f = fit_length([1, 2, 3], 5)
    assert f.values.tolist() == [1, 2, 3, 0, 0] and f.was_padded and not f.was_trimmed
    f = fit_length(list(range(1, 8)), 5)
    assert f.values.tolist() == [1, 2, 3, 4, 5] and f.was_trimmed and not f.was_padded
    f = fit_length([1.0] * 5, 5)
    assert f.values.tolist() == [1.0] * 5 and not f.was_padded and not f.was_trimmed


@given(st.lists(st.floats(-10, 10), max_size=50), st.integers(1, 60))
def test_fit_length_always_exact(xs, n):
    f = fit_length(xs, n)
    assert len(f.values) == n
    assert not (f.was_padded and f.was_trimmed)


def test_prepare_inputs_shape():
    ds = generate_synthetic_dataset(2, (30, 70), seed=0)
    x = prepare_inputs(ds, 50)
    assert x.shape == (8, 1, 50) and x.dtype == np.float32


def test_padding_report_brute_force():
    ds = generate_synthetic_dataset(50, (600, 1200), seed=1)
    L = 900
    rows = {r.label: r for r in padding_report(ds, L)}
    for label in "NAO~":
        lens = [len(r.samples) for r in ds.records if r.label == label]
        assert rows[label].padded_count == sum(1 for n in lens if n < L)
        assert rows[label].total_count == len(lens)
    assert rows["Total"].padded_count == sum(1 for r in ds.records if len(r.samples) < L)
    assert sum(rows[c].padded_share for c in "NAO~") == pytest.approx(100.0, abs=0.01)
    assert sum(rows[c].total_share for c in "NAO~") == pytest.approx(100.0, abs=0.01)


def test_padding_report_nothing_padded():
    ds = generate_synthetic_dataset(3, (100, 120), seed=1)
    rows = padding_report(ds, 100)
    assert all(r.padded_count == 0 for r in rows)


def test_padding_report_table_shape(tmp_path):
    # class sizes and padded counts of the 2017 challenge corpus, rebuilt from lengths
    padded = {"A": 662, "N": 4665, "O": 2081, "~": 272}
    totals = {"A": 758, "N": 5076, "O": 2415, "~": 279}
    recs = []
    for label in "ANO~":
        for i in range(totals[label]):
            n = 9000 if i < padded[label] else 18000
            recs.append(LabeledSignal(f"{label}{i}", np.zeros(n, dtype=np.int16), label))
    rows = {r.label: r for r in padding_report(Dataset(recs), 18000)}
    assert rows["Total"].padded_count == 7680
    assert rows["Total"].total_count == 8528
    assert round(rows["Total"].padded_share, 2) == 90.06
    assert round(rows["A"].padded_share, 2) == 8.62
    out = tmp_path / "padding.csv"
    write_padding_report(list(rows.values()), out, 18000)
    table = list(csv.reader(out.open()))
    assert table[0] == ["", "A", "N", "O", "~", "Total"]
    assert table[1][1:] == ["662", "4665", "2081", "272", "7680"]
    assert table[3][-1] == "90.06%"


def test_split_exact_proportions():
    ds = make_dataset([20, 20, 20, 20])
    tr, va, te = stratified_split(ds, SplitSpec((0.70, 0.15, 0.15), seed=4))
    assert (len(tr), len(va), len(te)) == (56, 12, 12)
    y = ds.labels
    for c in range(4):
        assert [(y[s] == c).sum() for s in (tr, va, te)] == [14, 3, 3]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**64 - 1))
def test_split_is_partition(seed):
    ds = make_dataset([7, 11, 5, 3])
    parts = stratified_split(ds, SplitSpec(seed=seed))
    allidx = np.concatenate(parts)
    assert sorted(allidx.tolist()) == list(range(len(ds)))


def hamilton_oracle(n, fractions):
    """Enumerate every floor/ceil allocation; keep the one whose rounded-up slots carry the
    largest remainders, preferring earlier slots on ties."""
    fr = [Fraction(str(f)) for f in fractions]
    quotas = [n * f for f in fr]
    floors = [q.numerator // q.denominator for q in quotas]
    best, best_key = None, None
    for bumps in itertools.product([0, 1], repeat=len(fr)):
        alloc = [f + b for f, b in zip(floors, bumps)]
        if sum(alloc) != n:
            continue
        rems = sorted((quotas[i] - floors[i] for i in range(len(fr)) if bumps[i]), reverse=True)
        key = (rems, [-i for i in range(len(fr)) if bumps[i]])
        if best_key is None or key > best_key:
            best, best_key = alloc, key
    return best


def test_split_largest_remainder_oracle():
    ds = make_dataset([60, 25, 10, 5])
    spec = SplitSpec((0.70, 0.15, 0.15), seed=1)
    tr, va, te = stratified_split(ds, spec)
    y = ds.labels
    for c, n in enumerate([60, 25, 10, 5]):
        got = [int((y[s] == c).sum()) for s in (tr, va, te)]
        assert got == hamilton_oracle(n, spec.fractions)


@given(st.integers(0, 500), st.sampled_from([(0.7, 0.15, 0.15), (0.6, 0.2, 0.2), (0.5, 0.3, 0.2),
                                              (0.8, 0.1, 0.1)]))
def test_largest_remainder_matches_oracle(n, fr):
    assert largest_remainder(n, fr) == hamilton_oracle(n, fr)


def test_split_too_few():
    with pytest.raises(StratificationError):
        stratified_split(make_dataset([5, 2, 5, 5]))


def test_split_spec_validation():
    with pytest.raises(ValidationError):
        SplitSpec((0.5, 0.3, 0.3))
    with pytest.raises(ValidationError):
        SplitSpec((1.0, 0.0, 0.0))


def test_kfold_exact_division():
    ds = make_dataset([5, 5, 5, 5])
    folds = kfold_split(ds, 5, seed=3)
    y = ds.labels
    for tr, te in folds:
        assert sorted(y[te].tolist()) == [0, 1, 2, 3]
        assert len(np.intersect1d(tr, te)) == 0
    union = np.concatenate([te for _, te in folds])
    assert sorted(union.tolist()) == list(range(20))


def test_kfold_two_folds_balanced():
    ds = make_dataset([3, 3, 2, 2])
    folds = kfold_split(ds, 2, seed=0)
    assert sorted(len(te) for _, te in folds) == [5, 5]
    y = ds.labels
    for _, te in folds:
        for c, n in enumerate([3, 3, 2, 2]):
            assert abs(int((y[te] == c).sum()) - n / 2) <= 0.5


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 1000))
def test_kfold_partition(k, seed):
    ds = make_dataset([9, 8, 7, 6])
    folds = kfold_split(ds, k, seed)
    tests = np.concatenate([te for _, te in folds])
    assert sorted(tests.tolist()) == list(range(len(ds)))
    for tr, te in folds:
        assert sorted(np.concatenate([tr, te]).tolist()) == list(range(len(ds)))


def test_kfold_errors():
    with pytest.raises(StratificationError):
        kfold_split(make_dataset([5, 5, 2, 5]), 3)
    with pytest.raises(ValidationError):
        kfold_split(make_dataset([5, 5, 5, 5]), 1)
