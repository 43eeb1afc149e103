import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exposure_aae import dataprep as dp
from exposure_aae.errors import ConfigError
from exposure_aae.schema import ENV_NAMES, FEATURE_NAMES, RAW_REQUIRED
from exposure_aae.synthgen import RANGES, GeneratorConfig, generate_cohort, response_oracle

SMALL = dict(n_participants=2, days_per_period=2)


def quiet(**kw):
    noise = {k: 0.0 for k in ("br_avg", "br_std", "activity_level", "step_count", "temperature", "humidity",
                              "pm2_5_local")}
    return GeneratorConfig(noise_std=noise, **kw)


def test_zero_sensitivity_zero_noise_is_constant_baseline():
    cfg = quiet(pollution_sensitivity=0.0, activity_sensitivity=0.0, baseline_spread=0.0, **SMALL)
    frame, truth = generate_cohort(cfg)
    assert np.all(frame["br_avg"] == cfg.baseline_br)
    assert np.all(truth.frame["br_star"] == cfg.baseline_br)


def test_doubling_pm_raises_br_by_sensitivity():
    cfg = GeneratorConfig(pollution_sensitivity=0.035, activity_sensitivity=0.0, baseline_spread=0.0, pm_ref=1e-3)
    f = pd.DataFrame({"participant_id": "S01", "period": "P1_summer",
                      "timestamp": pd.date_range("2023-07-03", periods=3, freq="1h", tz="UTC"),
                      "pm2_5": [10.0, 40.0, 80.0], "activity_level": [0.0, 3.0, 6.0]})
    doubled = f.assign(pm2_5=2 * f["pm2_5"])
    base, high = response_oracle(f, cfg), response_oracle(doubled, cfg)
    rel = high["br_star"] / base["br_star"] - 1.0
    # closed form: (1 + s)^(log2(1 + 2p/r) - log2(1 + p/r)) - 1
    r, s, p = cfg.pm_ref, 0.035, f["pm2_5"].to_numpy()
    expected = (1 + s) ** (np.log2(1 + 2 * p / r) - np.log2(1 + p / r)) - 1
    np.testing.assert_allclose(rel, expected, rtol=1e-12)
    assert np.all(np.abs(rel - 0.035) < 1e-4)
    np.testing.assert_allclose(high["hr_star"] / base["hr_star"] - 1.0, rel, rtol=1e-12)


def test_baseline_exposure_gives_baseline():
    cfg = GeneratorConfig(baseline_spread=0.0)
    f = pd.DataFrame({"participant_id": ["S01"], "period": ["P1_summer"],
                      "timestamp": pd.to_datetime(["2023-07-03T00:00Z"]), "pm2_5": [0.0], "activity_level": [0.0]})
    assert response_oracle(f, cfg)["br_star"].item() == cfg.baseline_br


def test_seed_determinism_bytes(tmp_path):
    a, _ = generate_cohort(GeneratorConfig(seed=3, **SMALL))
    b, _ = generate_cohort(GeneratorConfig(seed=3, **SMALL))
    dp.write_frame(a, tmp_path / "a.csv")
    dp.write_frame(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c, _ = generate_cohort(GeneratorConfig(seed=4, **SMALL))
    assert not a["br_avg"].equals(c["br_avg"])


@given(st.integers(0, 10_000))
@settings(max_examples=8, deadline=None)
def test_values_within_table_ranges(seed):
    frame, truth = generate_cohort(GeneratorConfig(seed=seed, **SMALL))
    for col, (lo, hi) in RANGES.items():
        assert frame[col].between(lo, hi).all(), col
    assert np.all(truth.frame["hr_star"] == 4.0 * truth.frame["br_star"])


def test_oracle_reproduces_ground_truth_exactly():
    cfg = GeneratorConfig(seed=11, **SMALL)
    frame, truth = generate_cohort(cfg)
    again = response_oracle(frame, cfg)
    assert np.abs(again["br_star"] - truth.frame["br_star"]).max() <= 1e-12


def test_records_have_raw_schema_and_fill_29_features():
    frame, _ = generate_cohort(GeneratorConfig(**SMALL))
    assert set(RAW_REQUIRED) | set(ENV_NAMES) <= set(frame.columns)
    prep = dp.prepare(frame)
    assert set(FEATURE_NAMES) <= set(prep.features.columns)
    assert not prep.features[list(FEATURE_NAMES)].isna().any().any()


def test_heart_rate_ratio_on_generated_rows():
    frame, _ = generate_cohort(GeneratorConfig(seed=5))
    prep = dp.prepare(frame)
    ratio = prep.features["heart_rt"] / prep.features["br_avg"]
    assert ratio.min() >= 3.6 and ratio.max() <= 4.4


@pytest.mark.parametrize("kw", [dict(baseline_br=9.0), dict(baseline_br=29.0), dict(n_participants=0),
                                dict(sample_interval_minutes=7), dict(noise_std={"bogus": 1.0})])
def test_invalid_config_rejected(kw):
    with pytest.raises(ConfigError):
        generate_cohort(GeneratorConfig(**kw))


def test_ground_truth_sidecar(tmp_path):
    _, truth = generate_cohort(GeneratorConfig(**SMALL))
    truth.save(tmp_path / "gt.json")
    import json
    body = json.loads((tmp_path / "gt.json").read_text())
    assert body["response"]["hr_over_br"] == 4.0
    assert len(body["records"]) == len(truth.frame)
