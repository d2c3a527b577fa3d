import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srforecast.dataset import (
    TimeSeries,
    build_windows,
    fit_normalizer,
    format_series,
    read_series,
    split_series,
    write_series,
)


def series(T, d=1, seed=0):
    return TimeSeries(np.random.default_rng(seed).standard_normal((T, d)), 0.3, "test")


@pytest.mark.parametrize("T, lengths", [(10, (6, 2, 2)), (11, (6, 2, 3))])
def test_split_lengths(T, lengths):
    parts = split_series(series(T))
    assert tuple(len(p) for p in parts) == lengths


def test_split_reassembles(rng):
    ts = series(37, 2)
    parts = split_series(ts)
    assert np.array_equal(np.concatenate([p.values for p in parts]), ts.values)


def test_split_rejects_short_segments():
    with pytest.raises(ValueError, match="fewer than"):
        split_series(series(10), min_length=3)
    with pytest.raises(ValueError):
        split_series(series(10), (0.5, 0.5, 0.1))


def test_windows_small_example():
    ts = TimeSeries(np.arange(1.0, 6.0), 1.0, "ramp")  # rows 1..5 in 1-based indexing
    ds = build_windows(ts, 2, 1)
    assert len(ds) == 3
    assert np.array_equal(ds.windows[0, :, 0], [1.0, 2.0])
    assert ds.targets[0, 0] == 3.0


def test_windows_markov_case():
    ds = build_windows(series(9), 1, 1)
    assert len(ds) == 8


def test_windows_too_short():
    with pytest.raises(ValueError, match="at least k \\+ l = 12"):
        build_windows(series(11), 10, 2)


@settings(max_examples=40, deadline=None)
@given(T=st.integers(3, 40), k=st.integers(1, 5), l=st.integers(1, 4), d=st.integers(1, 3))
def test_window_target_alignment(T, k, l, d):
    if T < k + l:
        return
    ts = series(T, d, seed=T)
    ds = build_windows(ts, k, l)
    assert len(ds) == T - l - k + 1
    for t in range(len(ds)):
        end = ds.index_map[t]
        assert np.array_equal(ds.windows[t], ts.values[end - k + 1 : end + 1])
        assert np.array_equal(ds.targets[t], ts.values[end + l])


def test_normalizer_population_std():
    nz = fit_normalizer(TimeSeries(np.array([1.0, 2.0, 3.0]), 1.0, "x"))
    assert nz.mean[0] == 2.0
    assert abs(nz.std[0] - np.sqrt(2.0 / 3.0)) < 1e-15


def test_normalizer_standardises_training_split(rng):
    ts = TimeSeries(rng.standard_normal((500, 3)) * [1, 5, 0.1] + [100, -3, 7], 1.0, "x")
    nz = fit_normalizer(ts)
    z = nz.apply(ts.values)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.std(axis=0) - 1) < 1e-9)
    assert np.max(np.abs(nz.invert(z) - ts.values)) < 1e-12


def test_normalizer_removes_shift(rng):
    base = rng.standard_normal((50, 1))
    a = fit_normalizer(TimeSeries(base, 1.0, "a")).apply(base)
    b = fit_normalizer(TimeSeries(base + 1000.0, 1.0, "b")).apply(base + 1000.0)
    assert np.allclose(a, b, atol=1e-10)


def test_normalizer_rejects_constant_component():
    ts = TimeSeries(np.column_stack([np.arange(5.0), np.ones(5)]), 1.0, "x")
    with pytest.raises(ValueError, match="component 1"):
        fit_normalizer(ts)


def test_normalizer_has_no_leakage(rng):
    ts = TimeSeries(rng.standard_normal((100, 2)), 1.0, "x")
    train, val, test = split_series(ts)
    stats = fit_normalizer(train)
    perturbed = TimeSeries(np.concatenate([train.values, val.values * 50 + 3, test.values - 9]), 1.0, "x")
    train2, _, _ = split_series(perturbed)
    again = fit_normalizer(train2)
    assert np.array_equal(stats.mean, again.mean) and np.array_equal(stats.std, again.std)


def test_series_file_round_trip(tmp_path, rng):
    ts = TimeSeries(rng.standard_normal((20, 3)) * 1e3, 0.2, "lorenz96-paper")
    path = tmp_path / "s.txt"
    write_series(ts, path)
    back = read_series(path)
    assert np.array_equal(back.values, ts.values)
    assert back.dt_record == 0.2 and back.origin == "lorenz96-paper"
    assert path.read_text().splitlines()[0] == "3 0.2 lorenz96-paper"
    assert format_series(back) == path.read_text()


def test_series_file_header_mismatch(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 0.1 x\n1 2 3\n")
    with pytest.raises(ValueError, match="d=2"):
        read_series(path)


def test_series_rejects_nonfinite():
    with pytest.raises(ValueError):
        TimeSeries(np.array([1.0, np.nan]), 1.0, "x")
