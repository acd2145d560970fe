from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wattchain.energy_data import (Dataset, EmptySeries, MalformedRow,
                                   NegativeValue, NoOverlap,
                                   NonMonotonicTimestamp, PowerSample,
                                   PowerSeries, SeriesKind, WeatherRecord,
                                   build_dataset, format_iso, load_power_csv,
                                   load_weather_csv, parse_iso, resample,
                                   write_power_csv)

from conftest import DAY, make_series


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoadPowerCsv:
    def test_header_only_gives_empty_series(self, tmp_path):
        path = write(tmp_path / "p.csv", "timestamp,value_w\n")
        series = load_power_csv(path, "n1", SeriesKind.GENERATION)
        assert series.samples == []
        assert series.interval_s == 0.0

    def test_two_rows_infer_interval(self, tmp_path):
        path = write(tmp_path / "p.csv",
                     "timestamp,value_w\n"
                     "2020-04-23T09:00:00Z,8000\n"
                     "2020-04-23T09:05:00Z,7900\n")
        series = load_power_csv(path, "n1", SeriesKind.GENERATION)
        assert len(series.samples) == 2
        assert series.interval_s == 300.0
        assert series.samples[0].value_w == 8000.0

    def test_negative_value_rejected(self, tmp_path):
        path = write(tmp_path / "p.csv",
                     "timestamp,value_w\n2020-04-23T09:00:00Z,-5\n")
        with pytest.raises(NegativeValue) as err:
            load_power_csv(path, "n1", SeriesKind.GENERATION)
        assert err.value.line_no == 2

    def test_duplicate_timestamp_rejected(self, tmp_path):
        path = write(tmp_path / "p.csv",
                     "timestamp,value_w\n"
                     "2020-04-23T09:00:00Z,1\n"
                     "2020-04-23T09:00:00Z,2\n")
        with pytest.raises(NonMonotonicTimestamp) as err:
            load_power_csv(path, "n1", SeriesKind.GENERATION)
        assert err.value.line_no == 3

    def test_out_of_order_rejected(self, tmp_path):
        path = write(tmp_path / "p.csv",
                     "timestamp,value_w\n"
                     "2020-04-23T09:05:00Z,1\n"
                     "2020-04-23T09:00:00Z,2\n")
        with pytest.raises(NonMonotonicTimestamp):
            load_power_csv(path, "n1", SeriesKind.GENERATION)

    def test_malformed_row(self, tmp_path):
        path = write(tmp_path / "p.csv",
                     "timestamp,value_w\n2020-04-23T09:00:00Z,abc\n")
        with pytest.raises(MalformedRow) as err:
            load_power_csv(path, "n1", SeriesKind.GENERATION)
        assert err.value.line_no == 2

    def test_bad_header(self, tmp_path):
        path = write(tmp_path / "p.csv", "time,watts\n")
        with pytest.raises(MalformedRow):
            load_power_csv(path, "n1", SeriesKind.GENERATION)

    def test_round_trip(self, tmp_path):
        series = make_series([0, 1500, 8000.5, 230])
        path = tmp_path / "rt.csv"
        write_power_csv(series, str(path))
        reloaded = load_power_csv(str(path), "n1", SeriesKind.GENERATION)
        assert reloaded.samples == series.samples
        assert reloaded.interval_s == series.interval_s
        # a second write reproduces the file byte for byte
        text = path.read_text()
        write_power_csv(reloaded, str(path))
        assert path.read_text() == text


class TestResample:
    def test_identity_on_uniform_series(self):
        series = make_series([10, 20, 30, 40], interval_s=300)
        out = resample(series, 300)
        assert out.samples == series.samples

    def test_linear_midpoint(self):
        series = PowerSeries("n1", SeriesKind.GENERATION, [
            PowerSample(DAY, 0.0),
            PowerSample(DAY + timedelta(seconds=600), 1000.0),
        ], interval_s=600)
        out = resample(series, 300)
        assert [s.value_w for s in out.samples] == [0.0, 500.0, 1000.0]

    def test_full_day_grid_has_286_steps(self):
        # 00:00:00 through 23:45:00 at five-minute spacing
        series = make_series(range(286), interval_s=300)
        out = resample(series, 300)
        assert len(out.samples) == 286
        assert format_iso(out.samples[-1].timestamp) == "2020-04-23T23:45:00Z"

    def test_long_gap_fills_zero_for_generation(self):
        series = PowerSeries("n1", SeriesKind.GENERATION, [
            PowerSample(DAY, 100.0),
            PowerSample(DAY + timedelta(seconds=3600), 200.0),
        ], interval_s=3600)
        out = resample(series, 300)
        # interior points sit in a gap wider than two intervals
        assert out.samples[0].value_w == 100.0
        assert all(s.value_w == 0.0 for s in out.samples[1:-1])
        assert out.samples[-1].value_w == 200.0

    def test_long_gap_holds_for_consumption(self):
        series = PowerSeries("n1", SeriesKind.CONSUMPTION, [
            PowerSample(DAY, 100.0),
            PowerSample(DAY + timedelta(seconds=3600), 200.0),
        ], interval_s=3600)
        out = resample(series, 300)
        assert all(s.value_w == 100.0 for s in out.samples[1:-1])

    def test_empty_series_rejected(self):
        empty = PowerSeries("n1", SeriesKind.GENERATION, [], 0.0)
        with pytest.raises(EmptySeries):
            resample(empty, 300)

    @given(st.lists(st.floats(min_value=0, max_value=1e6), min_size=2, max_size=40),
           st.sampled_from([60, 300, 900]))
    @settings(max_examples=50, deadline=None)
    def test_idempotent(self, values, interval):
        series = make_series(values, interval_s=120)
        once = resample(series, interval)
        twice = resample(once, interval)
        assert twice.samples == once.samples


class TestBuildDataset:
    def _weather(self, n, start=DAY, interval_s=86400):
        return [WeatherRecord(start + timedelta(seconds=i * interval_s),
                              500.0 + i % 400, 28.0, 70.0, 0.5)
                for i in range(n)]

    def test_601_row_join(self):
        weather = self._weather(640)
        target = make_series(range(601), interval_s=86400)
        dataset, dropped = build_dataset(weather, target)
        assert len(dataset) == 601
        assert dataset.features.shape == (601, 4)
        assert dropped == 640 - 601

    def test_357_row_join(self):
        weather = self._weather(357)
        target = make_series(range(400), interval_s=86400)
        dataset, dropped = build_dataset(weather, target)
        assert len(dataset) == 357
        assert dropped == 400 - 357

    def test_disjoint_ranges_raise(self):
        weather = self._weather(5)
        target = make_series([1, 2, 3], start=DAY + timedelta(days=400),
                             interval_s=86400)
        with pytest.raises(NoOverlap):
            build_dataset(weather, target)

    @given(st.integers(min_value=1, max_value=30), st.integers(min_value=1, max_value=30),
           st.integers(min_value=0, max_value=10))
    @settings(max_examples=50, deadline=None)
    def test_row_count_bounded(self, n_weather, n_target, offset):
        weather = self._weather(n_weather)
        target = make_series(range(n_target), start=DAY + timedelta(days=offset),
                             interval_s=86400)
        try:
            dataset, _ = build_dataset(weather, target)
        except NoOverlap:
            return
        assert len(dataset) <= min(n_weather, n_target)


class TestWeatherCsv:
    def test_load_and_validate(self, tmp_path):
        path = write(tmp_path / "w.csv",
                     "timestamp,irradiance_wm2,air_temp_c,rel_humidity_pct,rainfall_mm\n"
                     "2020-04-23T00:00:00Z,0,24.5,88,0\n"
                     "2020-04-23T00:05:00Z,0,24.4,88.5,0.2\n")
        records = load_weather_csv(path)
        assert len(records) == 2
        assert records[1].rainfall_mm == 0.2

    def test_humidity_range_enforced(self, tmp_path):
        path = write(tmp_path / "w.csv",
                     "timestamp,irradiance_wm2,air_temp_c,rel_humidity_pct,rainfall_mm\n"
                     "2020-04-23T00:00:00Z,0,24.5,140,0\n")
        with pytest.raises(MalformedRow):
            load_weather_csv(path)

    def test_negative_irradiance_rejected(self, tmp_path):
        path = write(tmp_path / "w.csv",
                     "timestamp,irradiance_wm2,air_temp_c,rel_humidity_pct,rainfall_mm\n"
                     "2020-04-23T00:00:00Z,-1,24.5,80,0\n")
        with pytest.raises(NegativeValue):
            load_weather_csv(path)


def test_parse_iso_accepts_z_and_offset():
    assert parse_iso("2020-04-23T09:03:46Z") == parse_iso("2020-04-23T09:03:46+00:00")
    assert format_iso(parse_iso("2020-04-23T09:03:46Z")) == "2020-04-23T09:03:46Z"


def test_dataset_rejects_mismatched_rows():
    with pytest.raises(ValueError):
        Dataset(features=np.zeros((3, 4)), targets=np.zeros(2))
