import json
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exposure_aae import dataprep as dp
from exposure_aae.errors import SchemaError, ValidationError
from exposure_aae.schema import FEATURE_NAMES, N_FEATURES, RAW_REQUIRED


def raw_frame(n=12, participant="p1", period="P1_summer", start="2023-07-03T00:00:00Z", **cols):
    ts = pd.date_range(start, periods=n, freq="1h")
    base = {
        "participant_id": participant, "period": period, "timestamp": ts, "lat": 51.5, "lon": -0.19,
        "br_avg": 15.0, "br_std": 1.0, "activity_level": 2.0, "step_count": 10.0,
        "temperature": 20.0, "humidity": 60.0, "pm2_5_local": 12.0,
    }
    base.update(cols)
    return pd.DataFrame(base)


def feature_frame(n, n_groups=1, seed=0):
    rng = np.random.default_rng(seed)
    frames = []
    for g in range(n_groups):
        f = raw_frame(n, participant=f"p{g}")
        for name in FEATURE_NAMES:
            f[name] = rng.uniform(0, 1, n)
        frames.append(f)
    return pd.concat(frames, ignore_index=True)


# -- temperature ----------------------------------------------------------------

def test_temperature_clamps_january_outlier():
    f = raw_frame(3, start="2024-01-10T00:00:00Z", temperature=[40.0, 20.0, -12.0])
    out, n = dp.clean_temperature(f)
    assert out["temperature"].tolist() == [35.0, 20.0, -5.0]
    assert n == 2


def test_temperature_clean_idempotent():
    f = raw_frame(4, temperature=[40.0, 36.0, 1.0, -9.0])
    once, _ = dp.clean_temperature(f)
    twice, n = dp.clean_temperature(once)
    pd.testing.assert_frame_equal(once, twice)
    assert n == 0


# -- breathing rate -----------------------------------------------------------

def test_br_replaced_by_group_median():
    f = raw_frame(4, br_avg=[10.0, 12.0, 14.0, 5.0])
    out, n = dp.clean_breathing_rate(f)
    assert out["br_avg"].tolist() == [10.0, 12.0, 14.0, 12.0]
    assert out["br_imputed"].tolist() == [False, False, False, True]
    assert n == 1


def test_br_threshold_is_strict():
    f = raw_frame(3, br_avg=[8.0, 9.0, 20.0])
    out, n = dp.clean_breathing_rate(f)
    assert out["br_avg"].tolist() == [8.0, 9.0, 20.0] and n == 0


def test_br_group_without_valid_values():
    with pytest.raises(ValidationError):
        dp.clean_breathing_rate(raw_frame(3, br_avg=[5.0, 6.0, 7.0]))


def brute_force_br_clean(frame):
    """Row-by-row oracle: sort in-range values of the row's group, take the middle."""
    out = []
    for _, row in frame.iterrows():
        if row.br_avg >= 8:
            out.append(row.br_avg)
            continue
        vals = sorted(r.br_avg for _, r in frame.iterrows()
                      if r.participant_id == row.participant_id and r.period == row.period and r.br_avg >= 8)
        m = len(vals)
        out.append(vals[m // 2] if m % 2 else 0.5 * (vals[m // 2 - 1] + vals[m // 2]))
    return out


@given(st.lists(st.floats(3, 30), min_size=2, max_size=12), st.lists(st.floats(3, 30), min_size=2, max_size=12))
@settings(max_examples=40, deadline=None)
def test_br_clean_matches_brute_force(a, b):
    a[0], b[0] = 20.0, 9.0  # each group keeps one in-range value
    f = pd.concat([raw_frame(len(a), participant="a", br_avg=a),
                   raw_frame(len(b), participant="b", period="P2_winter", br_avg=b)], ignore_index=True)
    out, _ = dp.clean_breathing_rate(f)
    np.testing.assert_allclose(out["br_avg"].to_numpy(), brute_force_br_clean(f), atol=0)
    again, n = dp.clean_breathing_rate(out)
    pd.testing.assert_frame_equal(out, again)
    assert n == 0


def test_br_median_not_pooled_across_periods():
    f = pd.concat([raw_frame(3, br_avg=[10.0, 10.0, 4.0]),
                   raw_frame(3, period="P2_winter", br_avg=[20.0, 20.0, 20.0])], ignore_index=True)
    out, _ = dp.clean_breathing_rate(f)
    assert out["br_avg"].iloc[2] == 10.0


# -- interpolation ------------------------------------------------------------

def env_samples(times, **cols):
    return pd.DataFrame({"participant_id": "p1", "period": "P1_summer",
                         "timestamp": pd.to_datetime(times, utc=True), **cols})


def test_interpolation_linear_midpoint():
    s = env_samples(["2023-07-03T09:00Z", "2023-07-03T10:00Z"], pm2_5=[10.0, 20.0])
    out = dp.interpolate_pollution(s, columns=["pm2_5"])
    assert len(out) == 61
    row = out[out["timestamp"] == pd.Timestamp("2023-07-03T09:30Z")]
    assert row["pm2_5"].item() == pytest.approx(15.0, abs=1e-12)


def test_interpolation_single_value_constant():
    s = env_samples(["2023-07-03T09:00Z"], pm2_5=[7.5])
    out = dp.interpolate_pollution(s, columns=["pm2_5"])
    assert out["pm2_5"].tolist() == [7.5]


def test_interpolation_leading_gap_gets_group_mean():
    s = env_samples(["2023-07-03T08:00Z", "2023-07-03T09:00Z", "2023-07-03T10:00Z"], pm2_5=[np.nan, 9.0, 15.0])
    out = dp.interpolate_pollution(s, columns=["pm2_5"])
    mean = np.mean([9.0, 15.0])
    first_hour = out[out["timestamp"] < pd.Timestamp("2023-07-03T09:00Z")]["pm2_5"]
    assert np.all(first_hour == mean) and mean == 12.0


def test_interpolation_empty_input():
    with pytest.raises(ValidationError):
        dp.interpolate_pollution(env_samples([], pm2_5=[]), columns=["pm2_5"])


def test_fill_env_gaps_on_own_timestamps():
    f = raw_frame(4)
    for c in dp.ENV_NAMES:
        f[c] = 1.0
    f["no2"] = [np.nan, 2.0, np.nan, 4.0]
    out = dp.fill_env_gaps(f)
    assert out["no2"].tolist() == [3.0, 2.0, 3.0, 4.0]


# -- scaling ------------------------------------------------------------------

def test_scaler_pm25_midpoint_and_unclipped_test_value():
    train = pd.DataFrame({"pm2_5": [0.0, 500.0, 125.0]})
    params = dp.fit_scaler(train, features=["pm2_5"])
    assert dp.transform(pd.DataFrame({"pm2_5": [250.0]}), params)["pm2_5"].item() == 0.5
    assert dp.transform(pd.DataFrame({"pm2_5": [600.0]}), params)["pm2_5"].item() == pytest.approx(1.2, abs=1e-15)


def test_scaler_round_trip(tmp_path):
    f = feature_frame(50)
    f[list(FEATURE_NAMES)] = f[list(FEATURE_NAMES)] * 100 - 20
    params = dp.fit_scaler(f)
    back = dp.inverse_transform(dp.transform(f, params), params)
    err = np.abs(back[list(FEATURE_NAMES)].to_numpy() - f[list(FEATURE_NAMES)].to_numpy()).max()
    assert err < 1e-12
    params.save(tmp_path / "scaler.json")
    body = json.loads((tmp_path / "scaler.json").read_text())
    assert set(body["pm2_5"]) == {"min", "max"}
    loaded = dp.ScalerParams.load(tmp_path / "scaler.json")
    np.testing.assert_array_equal(loaded.mins, params.mins)
    assert loaded.features == FEATURE_NAMES


def test_scaler_train_values_in_unit_interval():
    f = feature_frame(40, seed=3)
    scaled = dp.transform(f, dp.fit_scaler(f))[list(FEATURE_NAMES)].to_numpy()
    assert scaled.min() >= 0.0 and scaled.max() <= 1.0


def test_scaler_constant_feature_degenerate():
    params = dp.fit_scaler(pd.DataFrame({"x": [3.0, 3.0]}), features=["x"])
    assert params.degenerate.tolist() == [True]
    assert dp.transform(pd.DataFrame({"x": [3.0, 9.0]}), params)["x"].tolist() == [0.0, 0.0]


def test_scaler_ignores_non_training_data():
    f = feature_frame(30)
    train, val, test = dp.split(f)
    a = dp.fit_scaler(train)
    val2 = val.copy()
    val2[list(FEATURE_NAMES)] = 1e6
    b = dp.fit_scaler(dp.split(pd.concat([train, val2, test]))[0])
    np.testing.assert_array_equal(a.mins, b.mins)
    np.testing.assert_array_equal(a.maxs, b.maxs)


# -- cyclical -----------------------------------------------------------------

def test_cyclical_quarter_cycle():
    s, c = dp.cyclical_pair([6.0], 24.0)
    assert s[0] == pytest.approx(1.0, abs=1e-15) and c[0] == pytest.approx(0.0, abs=1e-15)


def test_cyclical_periodicity():
    s0, c0 = dp.cyclical_pair([0.0], 24.0)
    s24, c24 = dp.cyclical_pair([24.0], 24.0)
    assert s0[0] == pytest.approx(s24[0], abs=1e-15) and c0[0] == pytest.approx(c24[0], abs=1e-15)


def test_encode_cyclical_unit_circle():
    out = dp.encode_cyclical(raw_frame(200))
    np.testing.assert_allclose(out["hour_sin"] ** 2 + out["hour_cos"] ** 2, 1.0, atol=1e-15)
    np.testing.assert_allclose(out["dow_sin"] ** 2 + out["dow_cos"] ** 2, 1.0, atol=1e-15)
    midnight = out[out["timestamp"].dt.hour == 0]
    assert np.all(np.abs(midnight["hour_cos"] - 1.0) < 1e-15)


# -- heart rate ---------------------------------------------------------------

def test_heart_rate_no_noise():
    out = dp.derive_heart_rate(raw_frame(3), noise_fraction=0.0)
    assert out["heart_rt"].tolist() == [60.0, 60.0, 60.0]


def test_heart_rate_noise_bounds():
    out = dp.derive_heart_rate(raw_frame(500, br_avg=np.linspace(8, 30, 500)), seed=4)
    ratio = out["heart_rt"] / out["br_avg"]
    assert ratio.min() >= 3.6 and ratio.max() <= 4.4
    at15 = dp.derive_heart_rate(raw_frame(200), seed=1)["heart_rt"]
    assert at15.min() >= 54.0 and at15.max() <= 66.0


def test_heart_rate_noise_independent_of_group_order():
    a = raw_frame(20, participant="a")
    b = raw_frame(20, participant="b")
    ab = dp.derive_heart_rate(pd.concat([a, b], ignore_index=True), seed=9)
    ba = dp.derive_heart_rate(pd.concat([b, a], ignore_index=True), seed=9)
    pick = lambda f, p: f[f.participant_id == p]["heart_rt"].to_numpy()
    np.testing.assert_array_equal(pick(ab, "a"), pick(ba, "a"))


# -- windows ------------------------------------------------------------------

def test_windows_paper_example_shape():
    assert dp.build_windows(feature_frame(100)).shape == (93, 8, 29)


def test_windows_single():
    assert dp.build_windows(feature_frame(8)).shape == (1, 8, 29)


def test_windows_overlap_rows():
    w = dp.build_windows(feature_frame(20)).data
    for i in range(len(w) - 1):
        np.testing.assert_array_equal(w[i, 1:], w[i + 1, :7])


def test_windows_skip_short_group():
    f = pd.concat([feature_frame(12), feature_frame(5).assign(participant_id="short")], ignore_index=True)
    with pytest.warns(UserWarning):
        w = dp.build_windows(f)
    assert w.shape == (5, 8, 29)
    assert set(w.participant) == {"p0"}


def test_windows_do_not_cross_groups():
    w = dp.build_windows(feature_frame(10, n_groups=3))
    assert w.shape == (9, 8, 29)
    assert list(w.participant) == ["p0"] * 3 + ["p1"] * 3 + ["p2"] * 3


@given(st.integers(8, 60), st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_window_averaging_reconstructs_series(t, seed):
    f = feature_frame(t, seed=seed)
    w = dp.build_windows(f)
    assert len(w) == t - 8 + 1
    back = dp.windows_to_series(w.data)
    assert np.abs(back - f[list(FEATURE_NAMES)].to_numpy()).max() < 1e-12


# -- split --------------------------------------------------------------------

def test_split_80_20():
    train, test = dp.split(feature_frame(100), (0.8, 0.2))
    assert len(train) == 80 and len(test) == 20
    assert train["timestamp"].max() < test["timestamp"].min()


def test_split_1000_rows_transfer():
    train, test = dp.split(feature_frame(1000), dp.TRANSFER_SPLIT)
    assert (len(train), len(test)) == (800, 200)


def test_split_70_15_15_rounding():
    assert dp.split_sizes(10, (0.7, 0.15, 0.15)) == [7, 1, 2]
    parts = dp.split(feature_frame(10))
    assert [len(p) for p in parts] == [7, 1, 2]


@given(st.integers(7, 300))
def test_split_is_partition(n):
    f = feature_frame(n)
    parts = dp.split(f)
    assert sum(len(p) for p in parts) == n
    seen = pd.concat(parts)["timestamp"]
    assert seen.is_unique


def test_split_empty_part_is_error():
    with pytest.raises(ValidationError):
        dp.split(feature_frame(3))


# -- IO / pipeline ------------------------------------------------------------

def test_read_records_missing_column(tmp_path):
    f = raw_frame(3).drop(columns=["humidity"])
    f.to_csv(tmp_path / "r.csv", index=False)
    with pytest.raises(SchemaError, match="humidity"):
        dp.read_records(tmp_path / "r.csv")


def test_schema_has_29_unique_features():
    assert N_FEATURES == 29 and len(set(FEATURE_NAMES)) == 29
    assert set(RAW_REQUIRED) <= set(dp.ID_COLUMNS) | {"lat", "lon"} | set(FEATURE_NAMES)


def test_prepare_reports_paper_window_shape():
    f = raw_frame(100, br_avg=np.linspace(9, 20, 100), temperature=np.linspace(-10, 40, 100))
    for c in dp.ENV_NAMES:
        f[c] = np.linspace(1, 2, 100)
    prep = dp.prepare(f)
    assert prep.counts["windows"] == [93, 8, 29]
    assert prep.features["temperature"].max() == 35.0
    assert prep.scaler.fitted_on == "train"
    assert prep.counts["rows_train"] == 70
    scaled = prep.part("train")[list(FEATURE_NAMES)].to_numpy()
    assert scaled.min() >= 0 and scaled.max() <= 1
