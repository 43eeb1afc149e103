"""Environmental API client, fixture mode and geo-temporal joining.

Fixture directory layout (offline mode)::

    <fixture_dir>/air_pollution/<lat>_<lon>_<start>_<end>.json
    <fixture_dir>/weather/<lat>_<lon>_<start>_<end>.json

``lat``/``lon`` use four decimals and ``start``/``end`` are Unix seconds,
exactly the query parameters a live request would send. Each file holds the
raw response body, so fixture and live mode share one parser.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import CredentialError, ParseError, StorageError, TransportError, ValidationError
from .schema import POLLUTANT_NAMES

AIR_PATH = "/data/2.5/air_pollution/history"
WEATHER_PATH = "/data/3.0/onecall/timemachine"
KINDS = {"air_pollution": AIR_PATH, "weather": WEATHER_PATH}

WEATHER_FIELDS = ("temp", "feels_like", "pressure", "humidity", "dew_point", "clouds", "wind_speed",
                  "wind_deg", "wind_gust")
OPTIONAL_WEATHER = ("wind_gust",)
KELVIN_FIELDS = ("temp", "feels_like", "dew_point")
KELVIN_OFFSET = 273.15
# weather payload key -> feature column
WEATHER_COLUMNS = {"humidity": "humidity_api"}

EARTH_RADIUS_M = 6_371_008.8


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (np.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise ValidationError(f"latitude {self.lat} outside [-90, 90]")
        if not (np.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            raise ValidationError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class EnvSample:
    """One provider observation; a field set is None when the endpoint did not report it."""

    timestamp: pd.Timestamp
    location: GeoPoint
    pollutants: dict | None = None  # ug/m3
    weather: dict | None = None  # temperatures in degC; wind_gust may be None

    def __post_init__(self):
        for name, v in (self.pollutants or {}).items():
            if not v >= 0:
                raise ValidationError(f"{name} concentration {v} must be >= 0")
        if self.weather:
            for name in ("humidity", "clouds"):
                v = self.weather.get(name)
                if v is not None and not 0.0 <= v <= 100.0:
                    raise ValidationError(f"{name} {v} outside [0, 100] %")

    def row(self) -> dict:
        out = {"timestamp": self.timestamp, "lat": self.location.lat, "lon": self.location.lon}
        out.update(self.pollutants or {})
        for k, v in (self.weather or {}).items():
            out[WEATHER_COLUMNS.get(k, k)] = np.nan if v is None else v
        return out


@dataclass
class ApiConfig:
    base_url: str = "https://api.openweathermap.org"
    api_key_env: str = "OPENWEATHER_API_KEY"
    timeout: float = 10.0
    retries: int = 3
    backoff: float = 0.5  # seconds; doubled after each failed attempt
    fixture_dir: str | None = None
    requests_per_minute: int = 60

    def __post_init__(self):
        if self.retries < 0 or self.timeout <= 0 or self.backoff < 0 or self.requests_per_minute < 1:
            raise ValidationError("ApiConfig: retries >= 0, timeout > 0, backoff >= 0, requests_per_minute >= 1")
        if self.fixture_dir is None and not self.base_url:
            raise ValidationError("ApiConfig: live mode needs a base_url")

    @property
    def offline(self) -> bool:
        return self.fixture_dir is not None

    def api_key(self) -> str:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise CredentialError(f"API key missing: set the {self.api_key_env} environment variable")
        return key


class RateLimiter:
    """Spaces requests at least ``60 / per_minute`` seconds apart (thread-safe)."""

    def __init__(self, per_minute: int, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 60.0 / per_minute
        self._clock, self._sleep = clock, sleep
        self._next = -np.inf
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            wait = self._next - now
            if wait > 0:
                self._sleep(wait)
                now += wait
            self._next = now + self.interval


# -- parsing ------------------------------------------------------------------

def _load(payload) -> dict:
    if isinstance(payload, dict):
        return payload
    try:
        body = json.loads(payload)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"response is not JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise ParseError("response root must be an object")
    return body


def _number(obj: dict, key: str, where: str, optional: bool = False) -> float | None:
    if key not in obj or obj[key] is None:
        if optional:
            return None
        raise ParseError(f"missing field {where}.{key}")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ParseError(f"field {where}.{key} is not a finite number: {v!r}")
    return float(v)


def _timestamp(obj: dict, where: str) -> pd.Timestamp:
    dt = _number(obj, "dt", where)
    return pd.Timestamp(int(dt), unit="s", tz="UTC")


def _items(body: dict, key: str) -> list:
    items = body.get(key)
    if not isinstance(items, list):
        raise ParseError(f"missing or non-list field {key}")
    return items


def parse_air_quality(payload, point: GeoPoint) -> list[EnvSample]:
    """``{"list": [{"dt": ..., "components": {co, no, ...}}]}`` -> samples; all or nothing."""
    out = []
    for i, item in enumerate(_items(_load(payload), "list")):
        where = f"list[{i}]"
        if not isinstance(item, dict):
            raise ParseError(f"{where} is not an object")
        comp = item.get("components")
        if not isinstance(comp, dict) or not comp:
            raise ParseError(f"empty or missing field {where}.components")
        values = {p: _number(comp, p, f"{where}.components") for p in POLLUTANT_NAMES}
        out.append(EnvSample(_timestamp(item, where), point, pollutants=values))
    return out


def parse_weather(payload, point: GeoPoint) -> list[EnvSample]:
    """``{"data": [{"dt": ..., "temp": K, ...}]}`` -> samples with temperatures in degC."""
    out = []
    for i, item in enumerate(_items(_load(payload), "data")):
        where = f"data[{i}]"
        if not isinstance(item, dict):
            raise ParseError(f"{where} is not an object")
        values = {f: _number(item, f, where, optional=f in OPTIONAL_WEATHER) for f in WEATHER_FIELDS}
        for f in KELVIN_FIELDS:
            values[f] = values[f] - KELVIN_OFFSET
        out.append(EnvSample(_timestamp(item, where), point, weather=values))
    return out


# -- transport ----------------------------------------------------------------

def _epoch(t) -> int:
    ts = pd.Timestamp(t)
    ts = ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")
    return int(ts.timestamp())


def query_params(point: GeoPoint, start, end) -> dict:
    return {"lat": f"{point.lat:.4f}", "lon": f"{point.lon:.4f}", "start": _epoch(start), "end": _epoch(end)}


def fixture_path(fixture_dir, kind: str, point: GeoPoint, start, end) -> Path:
    q = query_params(point, start, end)
    return Path(fixture_dir) / kind / f"{q['lat']}_{q['lon']}_{q['start']}_{q['end']}.json"


def write_fixture(fixture_dir, kind: str, point: GeoPoint, start, end, payload: dict | bytes) -> Path:
    path = fixture_path(fixture_dir, kind, point, start, end)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload if isinstance(payload, bytes) else json.dumps(payload).encode())
    return path


_TRANSIENT = {429, 500, 502, 503, 504}


def _fetch(config: ApiConfig, kind: str, point: GeoPoint, start, end, session=None,
           sleep: Callable[[float], None] = time.sleep, limiter: RateLimiter | None = None) -> bytes:
    if _epoch(end) <= _epoch(start):
        raise ValidationError(f"empty time range {start} .. {end}")
    if config.offline:
        path = fixture_path(config.fixture_dir, kind, point, start, end)
        try:
            return path.read_bytes()
        except OSError as exc:
            raise StorageError(f"fixture not found: {path}") from exc

    import requests  # live mode only

    session = session or requests.Session()
    params = {**query_params(point, start, end), "appid": config.api_key()}
    url = config.base_url.rstrip("/") + KINDS[kind]
    delay, last = config.backoff, "no attempt made"
    for attempt in range(config.retries + 1):
        if limiter is not None:
            limiter.acquire()
        try:
            resp = session.get(url, params=params, timeout=config.timeout)
        except (requests.Timeout, requests.ConnectionError) as exc:
            last = f"{type(exc).__name__}: {exc}"
        else:
            if resp.status_code in (401, 403):
                raise CredentialError(f"{kind} request rejected ({resp.status_code}); check {config.api_key_env}")
            if resp.status_code == 200:
                return resp.content
            if resp.status_code not in _TRANSIENT:
                raise TransportError(f"{kind} request failed with HTTP {resp.status_code}")
            last = f"HTTP {resp.status_code}"
        if attempt < config.retries:
            sleep(delay)
            delay *= 2.0
    raise TransportError(f"{kind} request failed after {config.retries + 1} attempts ({last})")


def fetch_air_quality(config: ApiConfig, point: GeoPoint, time_range: tuple, **kw) -> list[EnvSample]:
    return parse_air_quality(_fetch(config, "air_pollution", point, *time_range, **kw), point)


def fetch_weather(config: ApiConfig, point: GeoPoint, time_range: tuple, **kw) -> list[EnvSample]:
    return parse_weather(_fetch(config, "weather", point, *time_range, **kw), point)


# -- recorded-shape payloads (fixtures from tabular data) ---------------------

def air_payload(frame: pd.DataFrame) -> dict:
    """Provider-shaped air-quality body from rows with timestamp + pollutant columns."""
    return {"list": [
        {"dt": _epoch(r["timestamp"]), "components": {p: float(r[p]) for p in POLLUTANT_NAMES}}
        for _, r in frame.iterrows()
    ]}


def weather_payload(frame: pd.DataFrame) -> dict:
    """Provider-shaped weather body; temperatures written in kelvin."""
    data = []
    for _, r in frame.iterrows():
        item = {"dt": _epoch(r["timestamp"])}
        for f in WEATHER_FIELDS:
            v = r[WEATHER_COLUMNS.get(f, f)]
            if f in OPTIONAL_WEATHER and pd.isna(v):
                continue
            item[f] = float(v) + (KELVIN_OFFSET if f in KELVIN_FIELDS else 0.0)
        data.append(item)
    return {"data": data}


# -- joining ------------------------------------------------------------------

def haversine_m(a: GeoPoint | Sequence[float], b: GeoPoint | Sequence[float]) -> np.ndarray:
    """Great-circle distance in metres; broadcasts over array inputs."""
    lat1, lon1 = (a.lat, a.lon) if isinstance(a, GeoPoint) else a
    lat2, lon2 = (b.lat, b.lon) if isinstance(b, GeoPoint) else b
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp, dl = p2 - p1, np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def samples_frame(samples: Iterable[EnvSample]) -> pd.DataFrame:
    """Samples as rows; air and weather reports at the same time and place are merged."""
    rows = [s.row() for s in samples]
    if not rows:
        return pd.DataFrame(columns=["timestamp", "lat", "lon"])
    frame = pd.DataFrame(rows)
    frame = frame.groupby(["timestamp", "lat", "lon"], sort=True, as_index=False).first()
    return frame.reset_index(drop=True)


def geo_temporal_join(records: pd.DataFrame, samples, max_distance_m: float = 200.0,
                      max_dt: pd.Timedelta = pd.Timedelta(minutes=30)) -> pd.DataFrame:
    """Attach to each record the in-radius sample nearest in time.

    Ties in |dt| go to the earlier sample, then the nearer one. Records with no
    sample inside both gates keep NaN environment values and ``env_matched``
    False; nothing is dropped.
    """
    env = samples if isinstance(samples, pd.DataFrame) else samples_frame(samples)
    env = env.sort_values(["timestamp", "lat", "lon"], kind="mergesort").reset_index(drop=True)
    value_cols = [c for c in env.columns if c not in ("timestamp", "lat", "lon")]
    out = records.copy().reset_index(drop=True)
    n = len(out)
    pick = np.full(n, -1)
    dt_s = np.full(n, np.nan)
    dist = np.full(n, np.nan)
    if len(env):
        et = env["timestamp"].astype("int64").to_numpy()
        elat, elon = env["lat"].to_numpy(float), env["lon"].to_numpy(float)
        rt = pd.to_datetime(out["timestamp"], utc=True).astype("int64").to_numpy()
        rlat, rlon = out["lat"].to_numpy(float), out["lon"].to_numpy(float)
        gate = int(pd.Timedelta(max_dt).value)
        lo = np.searchsorted(et, rt - gate, side="left")
        hi = np.searchsorted(et, rt + gate, side="right")
        for i in range(n):
            if lo[i] == hi[i]:
                continue
            cand = np.arange(lo[i], hi[i])
            d = haversine_m((rlat[i], rlon[i]), (elat[cand], elon[cand]))
            ok = d <= max_distance_m
            if not ok.any():
                continue
            cand, d = cand[ok], d[ok]
            gap = np.abs(et[cand] - rt[i])
            best = np.lexsort((d, et[cand], gap))[0]  # |dt|, then earlier, then nearer
            pick[i], dist[i], dt_s[i] = cand[best], d[best], (et[cand[best]] - rt[i]) / 1e9
    matched = pick >= 0
    for c in value_cols:
        col = np.full(n, np.nan)
        col[matched] = env[c].to_numpy(float)[pick[matched]]
        out[c] = col
    out["env_matched"] = matched
    out["env_dt_s"] = dt_s
    out["env_distance_m"] = dist
    return out


@dataclass
class IngestPlan:
    """Unique (location, period range) queries needed to enrich a record frame."""

    queries: list = field(default_factory=list)  # (GeoPoint, start, end)

    @classmethod
    def from_records(cls, records: pd.DataFrame, decimals: int = 3) -> "IngestPlan":
        ts = pd.to_datetime(records["timestamp"], utc=True)
        keyed = records.assign(_lat=records["lat"].round(decimals), _lon=records["lon"].round(decimals), _ts=ts)
        queries = []
        for (lat, lon), g in keyed.groupby(["_lat", "_lon"], sort=True):
            start = g["_ts"].min().floor("h")
            end = g["_ts"].max().ceil("h") + pd.Timedelta(hours=1)
            queries.append((GeoPoint(float(lat), float(lon)), start, end))
        return cls(queries)


def ingest_records(records: pd.DataFrame, config: ApiConfig, max_distance_m: float = 200.0,
                   max_dt: pd.Timedelta = pd.Timedelta(minutes=30), **kw) -> pd.DataFrame:
    """Fetch air and weather for every planned query, then join onto ``records``."""
    samples: list[EnvSample] = []
    limiter = kw.pop("limiter", None) or (None if config.offline else RateLimiter(config.requests_per_minute))
    for point, start, end in IngestPlan.from_records(records).queries:
        samples += fetch_air_quality(config, point, (start, end), limiter=limiter, **kw)
        samples += fetch_weather(config, point, (start, end), limiter=limiter, **kw)
    return geo_temporal_join(records, samples, max_distance_m, max_dt)
