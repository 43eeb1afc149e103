"""Synthetic cohorts with a planted, analytic exposure-response function.

Breathing rate responds to PM2.5 through a per-doubling multiplicative
sensitivity and to activity linearly::

    br* = baseline * (1 + s_p) ** log2(1 + pm2_5 / pm_ref) * (1 + s_a * activity / 10)

so doubling PM2.5 (with ``pm2_5 >> pm_ref``) raises ``br*`` by ``s_p``.
Heart-rate ground truth is ``4 * br*``. Observed channels add seeded
Gaussian noise and are clipped to the documented feature ranges.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError
from .schema import ENV_NAMES, GROUP_KEYS, PERIODS

RANGES = {
    "br_avg": (8.0, 30.0),
    "br_std": (0.0, 5.0),
    "activity_level": (0.0, 10.0),
    "step_count": (0.0, 120.0),
    "temperature": (-5.0, 40.0),
    "humidity": (0.0, 100.0),
    "pm2_5_local": (0.0, 500.0),
    "pm2_5": (0.0, 500.0),
}

PERIOD_STARTS = {"P1_summer": "2023-07-03T00:00:00Z", "P2_winter": "2024-01-08T00:00:00Z"}
HOME = (51.5072, -0.1900)  # west London


def _default_noise() -> dict:
    return {"br_avg": 0.25, "br_std": 0.1, "activity_level": 0.15, "step_count": 2.0,
            "temperature": 0.5, "humidity": 2.0, "pm2_5_local": 0.15}


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_participants: int = 5
    days_per_period: int = 7
    periods: tuple[str, ...] = PERIODS
    sample_interval_minutes: int = 60
    baseline_br: float = 14.0
    baseline_spread: float = 1.0
    pollution_sensitivity: float = 0.035
    activity_sensitivity: float = 0.3
    pm_ref: float = 1.0
    pm_level: float = 12.0
    pm_day_sigma: float = 0.55
    pollution_amplitude: float = 0.35
    spike_rate_per_hour: float = 0.01
    activity_amplitude: float = 1.0
    temp_outlier_rate: float = 0.01
    noise_std: dict = field(default_factory=_default_noise)

    def validate(self) -> "GeneratorConfig":
        lo, hi = RANGES["br_avg"]
        if self.n_participants < 1 or self.days_per_period < 1:
            raise ConfigError("n_participants and days_per_period must be >= 1")
        if self.sample_interval_minutes < 1 or 1440 % self.sample_interval_minutes:
            raise ConfigError("sample_interval_minutes must divide a day")
        if self.baseline_spread < 0 or not (lo <= self.baseline_br - 3 * self.baseline_spread
                                            and self.baseline_br + 3 * self.baseline_spread <= hi):
            raise ConfigError(f"baseline_br {self.baseline_br} +/- 3*{self.baseline_spread} leaves [{lo}, {hi}]")
        if self.pm_ref <= 0 or self.pm_level <= 0:
            raise ConfigError("pm_ref and pm_level must be > 0")
        if self.pollution_sensitivity <= -1 or self.activity_sensitivity < -1:
            raise ConfigError("sensitivities out of range")
        if not 0 <= self.temp_outlier_rate <= 1 or not 0 <= self.spike_rate_per_hour <= 1:
            raise ConfigError("rates must lie in [0, 1]")
        bad = [p for p in self.periods if p not in PERIODS]
        if bad:
            raise ConfigError(f"unknown periods {bad}")
        unknown = set(self.noise_std) - set(_default_noise())
        if unknown or any(v < 0 for v in self.noise_std.values()):
            raise ConfigError(f"bad noise_std entries {sorted(unknown) or self.noise_std}")
        return self

    @property
    def participant_ids(self) -> list[str]:
        return [f"S{i + 1:02d}" for i in range(self.n_participants)]

    def baselines(self) -> dict[str, float]:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 7919]))
        draws = self.baseline_br + self.baseline_spread * np.clip(rng.standard_normal(self.n_participants), -3, 3)
        return dict(zip(self.participant_ids, draws.tolist()))


@dataclass
class GroundTruth:
    frame: pd.DataFrame  # participant_id, period, timestamp, br_star, hr_star
    baselines: dict
    config: GeneratorConfig

    def to_json(self) -> dict:
        rec = self.frame.copy()
        rec["timestamp"] = rec["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%SZ")
        return {
            "response": {
                "form": "baseline * (1 + s_p) ** log2(1 + pm2_5 / pm_ref) * (1 + s_a * activity / 10)",
                "pollution_sensitivity": self.config.pollution_sensitivity,
                "activity_sensitivity": self.config.activity_sensitivity,
                "pm_ref": self.config.pm_ref,
                "baselines": self.baselines,
                "hr_over_br": 4.0,
            },
            "config": asdict(self.config),
            "records": rec.to_dict(orient="records"),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def _response(baseline, pm, activity, cfg: GeneratorConfig) -> np.ndarray:
    br = (baseline * (1.0 + cfg.pollution_sensitivity) ** np.log2(1.0 + pm / cfg.pm_ref)
          * (1.0 + cfg.activity_sensitivity * activity / 10.0))
    return np.clip(br, *RANGES["br_avg"])


def response_oracle(frame: pd.DataFrame, config: GeneratorConfig, baselines: dict | None = None) -> pd.DataFrame:
    """Noise-free br*/hr* for every row, from ``pm2_5`` and ``activity_level``."""
    baselines = config.baselines() if baselines is None else baselines
    base = frame["participant_id"].map(baselines).to_numpy(dtype=float)
    br = _response(base, frame["pm2_5"].to_numpy(dtype=float), frame["activity_level"].to_numpy(dtype=float), config)
    out = frame[["participant_id", "period", "timestamp"]].copy()
    out["br_star"] = br
    out["hr_star"] = 4.0 * br
    return out.reset_index(drop=True)


def _ar1(rng, n, corr_steps, sigma):
    """Stationary AR(1) with unit-free correlation length ``corr_steps``."""
    phi = np.exp(-1.0 / corr_steps)
    eps = rng.standard_normal(n) * sigma * np.sqrt(1 - phi**2)
    out = np.empty(n)
    out[0] = rng.standard_normal() * sigma
    for k in range(1, n):
        out[k] = phi * out[k - 1] + eps[k]
    return out


def _bump(h, centre, width):
    d = (h - centre + 12.0) % 24.0 - 12.0
    return np.exp(-0.5 * (d / width) ** 2)


def _group(cfg: GeneratorConfig, p_idx: int, pid: str, baseline: float, period: str) -> pd.DataFrame:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, p_idx, PERIODS.index(period)]))
    steps_per_hour = 60.0 / cfg.sample_interval_minutes
    n = int(cfg.days_per_period * 1440 // cfg.sample_interval_minutes)
    ts = pd.date_range(PERIOD_STARTS[period], periods=n, freq=f"{cfg.sample_interval_minutes}min")
    h = ts.hour.to_numpy() + ts.minute.to_numpy() / 60.0
    weekend = ts.dayofweek.to_numpy() >= 5
    winter = period == "P2_winter"
    noise = {**_default_noise(), **cfg.noise_std}
    corr_day = 24 * steps_per_hour

    # pollution: slowly varying level x diurnal traffic shape x decaying spikes
    level = cfg.pm_level * (1.4 if winter else 1.0) * np.exp(0.2 * rng.standard_normal())
    diurnal = 1.0 + cfg.pollution_amplitude * (_bump(h, 8.5, 1.8) + 0.8 * _bump(h, 18.5, 2.2) - 0.55)
    spikes = np.zeros(n)
    for k in np.flatnonzero(rng.random(n) < cfg.spike_rate_per_hour / steps_per_hour):
        mag = rng.uniform(0.5, 2.0)
        tail = np.arange(n - k)
        spikes[k:] += mag * np.exp(-tail / (3.0 * steps_per_hour))
    pm25 = np.clip(level * np.exp(_ar1(rng, n, corr_day, cfg.pm_day_sigma)) * diurnal * (1.0 + spikes),
                   *RANGES["pm2_5"])
    traffic = np.exp(_ar1(rng, n, corr_day / 2, 0.3)) * (0.7 + 0.6 * _bump(h, 8.5, 1.8) + 0.5 * _bump(h, 18.5, 2.2))
    no2 = np.clip(18.0 * traffic * (1.3 if winter else 1.0) + 0.4 * pm25, 0, 500)
    daylight = np.clip(np.sin(np.pi * (h - 6.0) / 14.0), 0, None) * (0.5 if winter else 1.0)
    env = {
        "pm2_5": pm25,
        "pm10": pm25 * 1.6 * np.exp(0.1 * rng.standard_normal(n)),
        "no2": no2,
        "no": np.clip(0.25 * no2 * traffic, 0, None),
        "o3": np.clip(55.0 + 35.0 * daylight - 0.5 * no2 + 4.0 * rng.standard_normal(n), 0, None),
        "co": 180.0 + 6.0 * pm25 + 20.0 * traffic,
        "so2": np.clip(2.5 * np.exp(_ar1(rng, n, corr_day, 0.3)), 0, None),
        "nh3": np.clip(1.5 * np.exp(_ar1(rng, n, corr_day, 0.4)) * (0.6 if winter else 1.0), 0, None),
    }

    # weather
    t_mean = 6.0 if winter else 19.0
    temp = t_mean + 4.0 * np.cos(2 * np.pi * (h - 15.0) / 24.0) + _ar1(rng, n, corr_day, 2.0)
    wind = np.abs(3.5 + _ar1(rng, n, 12 * steps_per_hour, 1.5)) + 0.3
    rh_api = np.clip(75.0 - 2.0 * (temp - t_mean) + _ar1(rng, n, 12 * steps_per_hour, 6.0), 20, 100)
    a, b = 17.62, 243.12
    gamma = np.log(rh_api / 100.0) + a * temp / (b + temp)
    env.update({
        "temp": temp,
        "feels_like": temp - 0.7 * wind + 0.02 * (rh_api - 70.0),
        "pressure": 1013.0 + _ar1(rng, n, 2 * corr_day, 6.0),
        "humidity_api": rh_api,
        "dew_point": b * gamma / (a - gamma),
        "clouds": np.clip(50.0 + _ar1(rng, n, 12 * steps_per_hour, 30.0), 0, 100),
        "wind_speed": wind,
        "wind_deg": (220.0 + _ar1(rng, n, corr_day, 60.0)) % 360.0,
        "wind_gust": wind * 1.6,
    })

    # local sensor
    t_local = t_mean + 2.0 + 0.6 * (temp - t_mean) + noise["temperature"] * rng.standard_normal(n)
    hot = rng.random(n) < cfg.temp_outlier_rate
    t_local[hot] = rng.uniform(36.0, 40.0, hot.sum())  # sensor trapped against the body
    pm_local = pm25 * np.exp(noise["pm2_5_local"] * rng.standard_normal(n))
    rh_local = rh_api - 8.0 + noise["humidity"] * rng.standard_normal(n)

    # activity and physiology
    shape = 0.3 + cfg.activity_amplitude * (3.2 * _bump(h, 8.0, 1.2) + 2.0 * _bump(h, 13.0, 2.5)
                                            + 2.6 * _bump(h, 18.5, 1.4))
    shape = np.where(weekend, 0.8 * shape, shape) * np.exp(0.1 * rng.standard_normal())
    activity = np.clip(shape + noise["activity_level"] * rng.standard_normal(n), *RANGES["activity_level"])
    steps = np.clip(np.round(8.0 * activity + noise["step_count"] * rng.standard_normal(n)), *RANGES["step_count"])
    br_star = _response(baseline, pm25, activity, cfg)
    br = np.clip(br_star + noise["br_avg"] * rng.standard_normal(n), *RANGES["br_avg"])
    br_std = np.clip(0.8 + 0.15 * activity + noise["br_std"] * rng.standard_normal(n), *RANGES["br_std"])

    jitter = rng.normal(0.0, 0.0002, size=(n, 2))  # ~20 m GPS scatter
    frame = pd.DataFrame({
        "participant_id": pid, "period": period, "timestamp": ts,
        "lat": HOME[0] + 0.01 * p_idx + jitter[:, 0], "lon": HOME[1] + 0.01 * p_idx + jitter[:, 1],
        "br_avg": br, "br_std": br_std, "activity_level": activity, "step_count": steps,
        "temperature": np.clip(t_local, *RANGES["temperature"]),
        "humidity": np.clip(rh_local, *RANGES["humidity"]),
        "pm2_5_local": np.clip(pm_local, *RANGES["pm2_5_local"]),
        **{k: env[k] for k in ENV_NAMES},
        "br_star": br_star,
    })
    return frame


def generate_cohort(config: GeneratorConfig) -> tuple[pd.DataFrame, GroundTruth]:
    """Deterministic synthetic records (raw-record CSV layout) plus ground truth."""
    config.validate()
    baselines = config.baselines()
    groups = [
        _group(config, i, pid, baselines[pid], period)
        for i, pid in enumerate(config.participant_ids)
        for period in config.periods
    ]
    frame = pd.concat(groups, ignore_index=True).sort_values(GROUP_KEYS + ["timestamp"], kind="mergesort")
    frame = frame.reset_index(drop=True)
    truth = frame[["participant_id", "period", "timestamp", "br_star"]].copy()
    truth["hr_star"] = 4.0 * truth["br_star"]
    return frame.drop(columns="br_star"), GroundTruth(truth, baselines, config)
