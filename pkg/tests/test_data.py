import numpy as np
import pytest

from dozerformer.data import (
    Dataset,
    load_csv,
    sample_windows,
    save_csv,
    split_and_standardize,
    synth_series,
)
from dozerformer.errors import DataFormatError, ParameterError


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_small_csv(tmp_path):
    ds = load_csv(write(tmp_path, "date,a,b\n2020-01-01,1,2\n2020-01-02,3,4.5\n2020-01-03,-1,0\n"))
    assert (ds.T, ds.D) == (3, 2)
    assert ds.columns == ["a", "b"]
    assert ds.values.dtype == np.float64
    assert ds.values.tolist() == [[1, 2], [3, 4.5], [-1, 0]]
    assert ds.timestamps[0] == "2020-01-01"


def test_load_bad_cell_names_row(tmp_path):
    with pytest.raises(DataFormatError, match="row 2, column 1"):
        load_csv(write(tmp_path, "date,a\nx,1\ny,abc\n"))


def test_load_ragged_row(tmp_path):
    with pytest.raises(DataFormatError, match="row 1"):
        load_csv(write(tmp_path, "date,a,b\nx,1\n"))


def test_load_missing_value_rejected(tmp_path):
    with pytest.raises(DataFormatError):
        load_csv(write(tmp_path, "date,a\nx,1\ny,\n"))
    with pytest.raises(DataFormatError):
        load_csv(write(tmp_path, "date,a\nx,nan\n"))


def test_ett_style_header(tmp_path):
    header = "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n"
    rows = "".join(f"2016-07-01 {h:02d}:00:00," + ",".join(str(h + k) for k in range(7)) + "\n" for h in range(5))
    assert load_csv(write(tmp_path, header + rows)).D == 7


def test_csv_round_trip(tmp_path):
    ds = synth_series(50, 3, 24, 0.01, 0.1, seed=5)
    save_csv(ds, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv")
    assert np.array_equal(back.values, ds.values)


def test_synth_periodic():
    ds = synth_series(200, 2, 24, 0.0, 0.0, seed=0)
    assert np.max(np.abs(ds.values[24:] - ds.values[:-24])) <= 1e-12


def test_synth_deterministic():
    a = synth_series(100, 3, 24, 0.01, 0.1, seed=7)
    b = synth_series(100, 3, 24, 0.01, 0.1, seed=7)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, synth_series(100, 3, 24, 0.01, 0.1, seed=8).values)


def test_synth_slope():
    ds = synth_series(120, 2, 24, 0.1, 0.0, seed=0)
    np.testing.assert_allclose(ds.values[24:] - ds.values[:-24], 2.4, atol=1e-9)


def test_split_sizes():
    sp = split_and_standardize(Dataset("x", np.arange(20.0).reshape(10, 2)), (0.7, 0.1, 0.2))
    assert (sp.train.T, sp.val.T, sp.test.T) == (7, 1, 2)
    sp = split_and_standardize(Dataset("x", np.arange(20.0).reshape(10, 2)), (0.6, 0.2, 0.2))
    assert (sp.train.T, sp.val.T, sp.test.T) == (6, 2, 2)


def test_standardized_train_and_inverse(rng):
    ds = Dataset("x", rng.normal(loc=5, scale=3, size=(100, 3)))
    sp = split_and_standardize(ds)
    np.testing.assert_allclose(sp.train.values.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(sp.train.values.std(axis=0), 1.0, atol=1e-9)
    np.testing.assert_allclose(sp.scaler.inverse(sp.test.values), ds.values[80:], atol=1e-12)


def test_standardization_uses_train_only():
    ds = synth_series(500, 2, 24, 0.05, 0.0, seed=0)
    sp = split_and_standardize(ds)
    assert np.all(np.abs(sp.test.values.mean(axis=0)) > 0.5)


def test_zero_variance_flagged():
    values = np.column_stack([np.ones(10), np.arange(10.0)])
    sp = split_and_standardize(Dataset("x", values))
    assert sp.scaler.degenerate == [0]
    assert np.all(np.isfinite(sp.train.values))


def test_bad_ratios():
    with pytest.raises(ParameterError):
        split_and_standardize(Dataset("x", np.zeros((10, 1))), (0.5, 0.1, 0.1))


def test_window_counts():
    values = np.arange(10.0)[:, None]
    wins = sample_windows(values, 4, 2)
    assert len(wins) == 5
    assert wins[-1].y[-1, 0] == 9.0
    assert len(sample_windows(np.arange(6.0)[:, None], 4, 2)) == 1
    assert len(sample_windows(np.arange(20.0)[:, None], 4, 2, stride=3)) == (20 - 6) // 3 + 1


def test_window_adjacency():
    wins = sample_windows(np.arange(30.0)[:, None], 5, 3, stride=2)
    for w in wins:
        assert w.x[0, 0] == w.origin
        assert w.y[0, 0] == w.x[-1, 0] + 1


def test_short_series_gives_no_windows(caplog):
    assert sample_windows(np.zeros((5, 1)), 4, 2) == []
    assert "shorter" in caplog.text


def test_windows_stay_inside_splits():
    ds = Dataset("x", np.arange(300.0)[:, None])
    sp = split_and_standardize(ds)
    for part, (lo, hi) in zip((sp.train, sp.val, sp.test), sp.bounds):
        raw = sp.scaler.inverse(part.values)
        for w in sample_windows(part, 12, 6):
            idx = np.concatenate([sp.scaler.inverse(w.x), sp.scaler.inverse(w.y)])[:, 0]
            assert np.all((idx >= lo - 1e-9) & (idx < hi + 1e-9))
        assert raw.shape[0] == hi - lo
