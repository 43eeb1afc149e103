"""Cleaning, feature engineering, scaling, splitting and windowing.

Frames are pandas DataFrames carrying the identifier columns
(``participant_id``, ``period``, ``timestamp``) plus feature columns. Every
group-wise statistic (medians, means, noise streams) is computed per
(participant, period) group and never pooled across groups.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .errors import SchemaError, ValidationError
from .schema import (
    ENV_NAMES, FEATURE_NAMES, GROUP_KEYS, ID_COLUMNS, PERIODS, POLLUTANT_NAMES, RAW_REQUIRED,
)

log = logging.getLogger(__name__)

TEMP_BOUNDS = (-5.0, 35.0)
BR_MIN_PLAUSIBLE = 8.0
BASE_SPLIT = (0.70, 0.15, 0.15)
TRANSFER_SPLIT = (0.80, 0.20)


# -- IO -----------------------------------------------------------------------

def read_records(path) -> pd.DataFrame:
    """Read a raw-record or feature CSV and validate the required columns."""
    frame = pd.read_csv(path)
    missing = [c for c in RAW_REQUIRED if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column(s): {', '.join(missing)}")
    frame["timestamp"] = pd.to_datetime(frame["timestamp"], utc=True, format="ISO8601")
    frame["participant_id"] = frame["participant_id"].astype(str)
    bad = sorted(set(frame["period"]) - set(PERIODS))
    if bad:
        raise SchemaError(f"{path}: unknown period value(s) {bad}; expected {list(PERIODS)}")
    return sort_groups(frame)


def write_frame(frame: pd.DataFrame, path) -> None:
    out = frame.copy()
    out["timestamp"] = out["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%SZ")
    out.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def sort_groups(frame: pd.DataFrame) -> pd.DataFrame:
    return frame.sort_values(GROUP_KEYS + ["timestamp"], kind="mergesort").reset_index(drop=True)


def _groups(frame: pd.DataFrame):
    return frame.groupby(GROUP_KEYS, sort=True, observed=True)


def group_seed(seed: int, participant: str, period: str) -> np.random.SeedSequence:
    """Per-group seed that does not depend on processing order."""
    return np.random.SeedSequence([int(seed), zlib.crc32(str(participant).encode()), zlib.crc32(str(period).encode())])


# -- cleaning -----------------------------------------------------------------

def clean_temperature(frame: pd.DataFrame, bounds=TEMP_BOUNDS) -> tuple[pd.DataFrame, int]:
    """Clamp local temperature to regional bounds; returns (frame, rows modified)."""
    out = frame.copy()
    lo, hi = bounds
    t = out["temperature"].to_numpy(dtype=float)
    clipped = np.clip(t, lo, hi)
    n = int(np.sum(clipped != t))
    out["temperature"] = clipped
    if n:
        log.info("capped %d temperature readings to [%g, %g]", n, lo, hi)
    return out, n


def clean_breathing_rate(frame: pd.DataFrame, threshold: float = BR_MIN_PLAUSIBLE) -> tuple[pd.DataFrame, int]:
    """Replace ``br_avg < threshold`` by the group median of in-range values.

    Adds (or preserves) a boolean ``br_imputed`` column.
    """
    out = frame.copy()
    flags = out["br_imputed"].to_numpy(dtype=bool) if "br_imputed" in out else np.zeros(len(out), bool)
    br = out["br_avg"].to_numpy(dtype=float).copy()
    n = 0
    for key, idx in _groups(out).indices.items():
        vals = br[idx]
        low = vals < threshold
        if not low.any():
            continue
        ok = vals[~low]
        if ok.size == 0:
            raise ValidationError(f"group {key}: no br_avg values >= {threshold}; group unusable")
        vals[low] = np.median(ok)
        br[idx] = vals
        flags[idx[low]] = True
        n += int(low.sum())
    out["br_avg"] = br
    out["br_imputed"] = flags
    return out, n


# -- pollution interpolation --------------------------------------------------

def _seconds(ts: pd.Series | pd.DatetimeIndex) -> np.ndarray:
    return (pd.DatetimeIndex(ts).asi8 // 10**9).astype(np.float64)


def _interp_fill(times: np.ndarray, values: np.ndarray, grid: np.ndarray, fallback: float | None) -> np.ndarray:
    """Linear interpolation inside the observed span, mean fill outside it."""
    obs = np.isfinite(values)
    if not obs.any():
        if fallback is None or not np.isfinite(fallback):
            raise ValidationError("no observations available to fill feature")
        return np.full(grid.shape, fallback)
    t_obs, v_obs = times[obs], values[obs]
    out = np.interp(grid, t_obs, v_obs)
    outside = (grid < t_obs[0]) | (grid > t_obs[-1])
    out[outside] = v_obs.mean()
    return out


def _period_means(frame: pd.DataFrame, columns) -> dict:
    return {p: frame.loc[frame["period"] == p, list(columns)].mean() for p in frame["period"].unique()}


def interpolate_pollution(samples: pd.DataFrame, freq: str = "1min",
                          columns: Sequence[str] = POLLUTANT_NAMES) -> pd.DataFrame:
    """Resample hourly pollution samples to ``freq`` within each group.

    Gaps between observations are linearly interpolated; leading/trailing
    gaps are filled with the group mean. A feature with no observations in
    a group falls back to the mean of the same period across participants.
    """
    if samples.empty:
        raise ValidationError("interpolate_pollution: empty input")
    columns = [c for c in columns if c in samples.columns]
    samples = sort_groups(samples)
    fallbacks = _period_means(samples, columns)
    pieces = []
    for (pid, period), g in _groups(samples):
        if g.empty:
            raise ValidationError(f"interpolate_pollution: empty group {(pid, period)}")
        grid_ts = pd.date_range(g["timestamp"].iloc[0], g["timestamp"].iloc[-1], freq=freq)
        grid, times = _seconds(grid_ts), _seconds(g["timestamp"])
        piece = pd.DataFrame({"participant_id": pid, "period": period, "timestamp": grid_ts})
        for c in columns:
            piece[c] = _interp_fill(times, g[c].to_numpy(dtype=float), grid, fallbacks[period][c])
        pieces.append(piece)
    return pd.concat(pieces, ignore_index=True)


def fill_env_gaps(frame: pd.DataFrame, columns: Sequence[str] = ENV_NAMES) -> pd.DataFrame:
    """Same rule as :func:`interpolate_pollution` but on the frame's own timestamps."""
    out = frame.copy()
    columns = [c for c in columns if c in out.columns]
    missing = [c for c in ENV_NAMES if c not in out.columns]
    if missing:
        raise SchemaError(f"missing environmental column(s): {', '.join(missing)}")
    fallbacks = _period_means(out, columns)
    for (_, period), idx in _groups(out).indices.items():
        t = _seconds(out["timestamp"].iloc[idx])
        for c in columns:
            vals = out[c].to_numpy(dtype=float)[idx]
            if np.isfinite(vals).all():
                continue
            out.loc[out.index[idx], c] = _interp_fill(t, vals, t, fallbacks[period][c])
    return out


# -- features -----------------------------------------------------------------

def cyclical_pair(values, period: float) -> tuple[np.ndarray, np.ndarray]:
    phase = 2.0 * np.pi * np.asarray(values, dtype=float) / period
    return np.sin(phase), np.cos(phase)


def encode_cyclical(frame: pd.DataFrame) -> pd.DataFrame:
    """Add hour-of-day (period 24) and day-of-week (period 7) sin/cos columns."""
    out = frame.copy()
    ts = out["timestamp"].dt
    hours = ts.hour + ts.minute / 60.0 + ts.second / 3600.0
    out["hour_sin"], out["hour_cos"] = cyclical_pair(hours, 24.0)
    out["dow_sin"], out["dow_cos"] = cyclical_pair(ts.dayofweek, 7.0)
    return out


def derive_heart_rate(frame: pd.DataFrame, noise_fraction: float = 0.10, seed: int = 0) -> pd.DataFrame:
    """``heart_rt = 4 * br_avg * (1 + u)`` with ``u ~ U[-noise_fraction, noise_fraction]``."""
    out = frame.copy()
    br = out["br_avg"].to_numpy(dtype=float)
    hr = 4.0 * br
    if noise_fraction > 0:
        for (pid, period), idx in _groups(out).indices.items():
            rng = np.random.default_rng(group_seed(seed, pid, period))
            hr[idx] = hr[idx] * (1.0 + rng.uniform(-noise_fraction, noise_fraction, size=idx.size))
    out["heart_rt"] = hr
    return out


# -- scaling ------------------------------------------------------------------

@dataclass
class ScalerParams:
    features: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray
    fitted_on: str = "train"
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=float)
        self.maxs = np.asarray(self.maxs, dtype=float)
        if np.any(self.maxs < self.mins):
            raise ValidationError("scaler: max < min for some feature")
        self.degenerate = self.maxs == self.mins

    @property
    def span(self) -> np.ndarray:
        return np.where(self.degenerate, 1.0, self.maxs - self.mins)

    def transform_array(self, x: np.ndarray) -> np.ndarray:
        scaled = (np.asarray(x, dtype=float) - self.mins) / self.span
        return np.where(self.degenerate, 0.0, scaled)

    def inverse_array(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.span + self.mins

    def to_json(self) -> dict:
        body = {n: {"min": float(lo), "max": float(hi)} for n, lo, hi in zip(self.features, self.mins, self.maxs)}
        body["_fitted_on"] = self.fitted_on
        body["_order"] = list(self.features)  # survives writers that sort keys
        return body

    @classmethod
    def from_json(cls, body: dict) -> "ScalerParams":
        names = tuple(k for k in body if not k.startswith("_"))
        if "_order" in body:
            if sorted(body["_order"]) != sorted(names):
                raise ValidationError("scaler: _order does not list the stored features")
            names = tuple(body["_order"])
        elif set(names) <= set(FEATURE_NAMES):
            names = tuple(n for n in FEATURE_NAMES if n in names)
        return cls(names, [body[n]["min"] for n in names], [body[n]["max"] for n in names],
                   fitted_on=body.get("_fitted_on", "train"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ScalerParams":
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_scaler(train: pd.DataFrame, features: Sequence[str] = FEATURE_NAMES, fitted_on: str = "train") -> ScalerParams:
    values = train[list(features)].to_numpy(dtype=float)
    params = ScalerParams(tuple(features), np.nanmin(values, axis=0), np.nanmax(values, axis=0), fitted_on)
    for name in np.asarray(features)[params.degenerate]:
        log.warning("feature %s is constant on %s; scaled to 0", name, fitted_on)
    return params


def transform(frame: pd.DataFrame, params: ScalerParams) -> pd.DataFrame:
    out = frame.copy()
    cols = list(params.features)
    out[cols] = params.transform_array(out[cols].to_numpy(dtype=float))
    return out


def inverse_transform(frame: pd.DataFrame, params: ScalerParams) -> pd.DataFrame:
    out = frame.copy()
    cols = list(params.features)
    out[cols] = params.inverse_array(out[cols].to_numpy(dtype=float))
    return out


# -- splitting ----------------------------------------------------------------

def split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    """Chronological split sizes from floored cumulative boundaries.

    10 rows at 70/15/15 give boundaries 7 and 8, i.e. sizes 7/1/2.
    """
    fractions = np.asarray(fractions, dtype=float)
    if np.any(fractions <= 0) or not math.isclose(fractions.sum(), 1.0, abs_tol=1e-9):
        raise ValidationError(f"split fractions must be positive and sum to 1, got {fractions.tolist()}")
    cum = np.cumsum(fractions)[:-1]
    bounds = [0] + [int(math.floor(c * n + 1e-9)) for c in cum] + [n]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def split(frame: pd.DataFrame, fractions: Sequence[float] = BASE_SPLIT) -> tuple[pd.DataFrame, ...]:
    """Chronological, non-shuffled split applied within each group."""
    parts: list[list[pd.DataFrame]] = [[] for _ in fractions]
    for _, g in _groups(sort_groups(frame)):
        start = 0
        for k, size in enumerate(split_sizes(len(g), fractions)):
            parts[k].append(g.iloc[start : start + size])
            start += size
    out = tuple(pd.concat(p).reset_index(drop=True) if p else frame.iloc[:0] for p in parts)
    for k, part in enumerate(out):
        if part.empty:
            raise ValidationError(f"split {k} is empty ({len(frame)} rows, fractions {list(fractions)})")
    return out


# -- windowing ----------------------------------------------------------------

@dataclass
class WindowTensor:
    data: np.ndarray  # [samples, ntimes, features]
    participant: np.ndarray
    period: np.ndarray
    start: np.ndarray
    features: tuple[str, ...] = FEATURE_NAMES

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self) -> int:
        return self.data.shape[0]


def group_arrays(frame: pd.DataFrame, features: Sequence[str] = FEATURE_NAMES):
    """Yield ``((participant, period), timestamps, values[T, F])`` per group, time-sorted."""
    missing = [c for c in features if c not in frame.columns]
    if missing:
        raise SchemaError(f"missing feature column(s): {', '.join(missing)}")
    for key, g in _groups(sort_groups(frame)):
        ts = g["timestamp"].to_numpy()
        if len(ts) > 1 and not np.all(ts[1:] > ts[:-1]):
            raise ValidationError(f"group {key}: timestamps are not strictly increasing")
        yield key, g["timestamp"].reset_index(drop=True), g[list(features)].to_numpy(dtype=float)


def window_array(values: np.ndarray, ntimes: int, stride: int = 1) -> np.ndarray:
    """[T, F] -> [(T - ntimes)//stride + 1, ntimes, F] (copy)."""
    view = sliding_window_view(values, ntimes, axis=0)[::stride]  # [N, F, ntimes]
    return np.ascontiguousarray(view.transpose(0, 2, 1))


def build_windows(frame: pd.DataFrame, ntimes: int = 8, overlap: int = 7,
                  features: Sequence[str] = FEATURE_NAMES) -> WindowTensor:
    """Stack sliding windows per group; windows never cross group boundaries."""
    stride = ntimes - overlap
    if ntimes < 1 or stride < 1:
        raise ValidationError(f"need ntimes >= 1 and overlap < ntimes, got {ntimes}/{overlap}")
    data, pid, per, start = [], [], [], []
    for (p, q), ts, values in group_arrays(frame, features):
        if len(values) < ntimes:
            warnings.warn(f"group {(p, q)} has {len(values)} rows < {ntimes}; skipped", stacklevel=2)
            continue
        w = window_array(values, ntimes, stride)
        data.append(w)
        pid += [p] * len(w)
        per += [q] * len(w)
        start += list(ts.iloc[: len(values) - ntimes + 1 : stride])
    if not data:
        return WindowTensor(np.zeros((0, ntimes, len(features))), np.array([]), np.array([]), np.array([]),
                            tuple(features))
    return WindowTensor(np.concatenate(data), np.array(pid), np.array(per), np.array(start, dtype=object),
                        tuple(features))


def windows_to_series(windows: np.ndarray) -> np.ndarray:
    """Average stride-1 windows [N, n, F] back into the source series [N + n - 1, F]."""
    n_win, n, f = windows.shape
    total = np.zeros((n_win + n - 1, f))
    count = np.zeros((n_win + n - 1, 1))
    for k in range(n):
        total[k : k + n_win] += windows[:, k, :]
        count[k : k + n_win] += 1
    return total / count


# -- pipeline -----------------------------------------------------------------

@dataclass
class PrepConfig:
    hr_noise_fraction: float = 0.10
    split_fractions: tuple[float, ...] = BASE_SPLIT
    ntimes: int = 8
    overlap: int = 7
    seed: int = 0


@dataclass
class Prepared:
    features: pd.DataFrame  # cleaned, unscaled, with a ``split`` column
    scaler: ScalerParams
    counts: dict

    SPLIT_NAMES = ("train", "validation", "test")

    def part(self, name: str, scaled: bool = True) -> pd.DataFrame:
        part = self.features[self.features["split"] == name].drop(columns="split").reset_index(drop=True)
        return transform(part, self.scaler) if scaled else part


def prepare(raw: pd.DataFrame, config: PrepConfig = PrepConfig()) -> Prepared:
    """clean -> fill env gaps -> cyclical -> heart rate -> split -> fit scaler on train."""
    missing = [c for c in RAW_REQUIRED if c not in raw.columns]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    frame = sort_groups(raw)
    frame, n_temp = clean_temperature(frame)
    frame, n_br = clean_breathing_rate(frame)
    frame = fill_env_gaps(frame)
    frame = encode_cyclical(frame)
    frame = derive_heart_rate(frame, config.hr_noise_fraction, config.seed)
    names = Prepared.SPLIT_NAMES if len(config.split_fractions) == 3 else ("train", "test")
    parts = split(frame, config.split_fractions)
    for name, part in zip(names, parts):
        part["split"] = name
    features = pd.concat(parts, ignore_index=True)
    keep = list(ID_COLUMNS) + ["lat", "lon"] + list(FEATURE_NAMES) + ["br_imputed", "split"]
    features = sort_groups(features[[c for c in keep if c in features.columns]])
    scaler = fit_scaler(features[features["split"] == "train"])
    all_windows = build_windows(features, config.ntimes, config.overlap)
    counts = {
        "rows": int(len(features)),
        "temperature_capped": n_temp,
        "br_replaced": n_br,
        "windows": list(all_windows.shape),
        **{f"rows_{n}": int((features["split"] == n).sum()) for n in names},
    }
    return Prepared(features, scaler, counts)
