import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afibshift.errors import FormatError, ParseError, ValidationError
from afibshift.signal_io import (LabeledSignal, generate_synthetic_dataset, load_dataset,
                                 load_reference_labels, load_signal, save_dataset, write_signal)


def test_reference_labels(tmp_path):
    p = tmp_path / "REFERENCE.csv"
    p.write_text("A00001,N\nA00002,A")
    assert load_reference_labels(p) == {"A00001": "N", "A00002": "A"}
    assert list(load_reference_labels(p)) == ["A00001", "A00002"]


def test_reference_labels_empty(tmp_path):
    p = tmp_path / "REFERENCE.csv"
    p.write_text("")
    assert load_reference_labels(p) == {}


def test_reference_labels_unknown(tmp_path):
    p = tmp_path / "REFERENCE.csv"
    p.write_text("A00003,X\n")
    with pytest.raises(ValidationError, match="unknown label 'X' at line 1"):
        load_reference_labels(p)


def test_reference_labels_malformed(tmp_path):
    p = tmp_path / "REFERENCE.csv"
    p.write_text("A00001,N\nA00002\n")
    with pytest.raises(ParseError, match="line 2"):
        load_reference_labels(p)


def test_noisy_label_tilde(tmp_path):
    p = tmp_path / "REFERENCE.csv"
    p.write_text("A1,~\n")
    assert load_reference_labels(p) == {"A1": "~"}


def test_csv_signal(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("1,-2,3")
    assert load_signal(p, "csv_int").tolist() == [1, -2, 3]
    p.write_text("4\n5\n-6\n")
    assert load_signal(p, "csv_int").tolist() == [4, 5, -6]


def test_csv_signal_bad_token(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("1,2.5,3")
    with pytest.raises(ParseError):
        load_signal(p, "csv_int")


def test_raw_signal(tmp_path):
    p = tmp_path / "s.bin"
    p.write_bytes(bytes([0x01, 0x00, 0xFF, 0xFF]))
    assert load_signal(p, "raw_i16le").tolist() == [1, -1]


def test_raw_signal_truncated(tmp_path):
    p = tmp_path / "s.bin"
    p.write_bytes(b"\x01\x00\x02")
    with pytest.raises(FormatError, match="truncated sample"):
        load_signal(p, "raw_i16le")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=200))
def test_raw_round_trip(tmp_path_factory, samples):
    p = tmp_path_factory.mktemp("rt") / "s.bin"
    write_signal(p, samples, "raw_i16le")
    assert load_signal(p, "raw_i16le").tolist() == samples


def test_labeled_signal_invariants():
    with pytest.raises(ValidationError):
        LabeledSignal("x", np.array([], dtype=np.int16), "N")
    with pytest.raises(ValidationError):
        LabeledSignal("x", np.array([1], dtype=np.int16), "Z")


def test_synthetic_deterministic():
    a = generate_synthetic_dataset(2, (100, 100), seed=7)
    b = generate_synthetic_dataset(2, (100, 100), seed=7)
    assert a.records == b.records
    blob_a = b"".join(r.samples.tobytes() for r in a)
    blob_b = b"".join(r.samples.tobytes() for r in b)
    assert blob_a == blob_b


def test_synthetic_seed_sensitive():
    a = generate_synthetic_dataset(2, (100, 100), seed=7)
    b = generate_synthetic_dataset(2, (100, 100), seed=8)
    assert any(not np.array_equal(x.samples, y.samples) for x, y in zip(a, b))


def test_synthetic_counts_and_lengths():
    ds = generate_synthetic_dataset(50, (600, 1200), seed=1)
    assert len(ds) == 200
    counts = {}
    for r in ds:
        counts[r.label] = counts.get(r.label, 0) + 1
        assert 600 <= len(r.samples) <= 1200
    assert counts == {"N": 50, "A": 50, "O": 50, "~": 50}
    assert ds.source == "synthetic"
    assert len({r.record_id for r in ds}) == 200


def test_synthetic_bad_args():
    with pytest.raises(ValidationError):
        generate_synthetic_dataset(0, (10, 20))
    with pytest.raises(ValidationError):
        generate_synthetic_dataset(1, (20, 10))


@pytest.mark.parametrize("fmt", ["csv_int", "raw_i16le"])
def test_dataset_dir_round_trip(tmp_path, fmt):
    ds = generate_synthetic_dataset(3, (50, 80), seed=2)
    save_dataset(ds, tmp_path, fmt)
    back = load_dataset(tmp_path)
    assert back.records == ds.records
