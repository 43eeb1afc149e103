import json
import socket

import numpy as np
import pandas as pd
import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from exposure_aae import ingest
from exposure_aae.errors import CredentialError, ParseError, StorageError, TransportError, ValidationError
from exposure_aae.ingest import (
    ApiConfig, EnvSample, GeoPoint, RateLimiter, fetch_air_quality, fetch_weather, geo_temporal_join,
    haversine_m, parse_air_quality, parse_weather, write_fixture,
)

POINT = GeoPoint(51.5072, -0.19)
T0 = pd.Timestamp(1700000000, unit="s", tz="UTC")
RANGE = (T0, T0 + pd.Timedelta(hours=3))
COMPONENTS = {"co": 201.9, "no": 0.1, "no2": 14.2, "o3": 60.1, "so2": 2.3, "pm2_5": 12.3, "pm10": 18.0,
              "nh3": 1.1}
WEATHER = {"temp": 285.15, "feels_like": 284.0, "pressure": 1012, "humidity": 81, "dew_point": 282.0,
           "clouds": 40, "wind_speed": 3.2, "wind_deg": 220, "wind_gust": 5.1}


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    def refuse(*a, **k):
        raise AssertionError("network access attempted")
    monkeypatch.setattr(socket.socket, "connect", refuse)


def air_body(**over):
    return {"coord": {"lat": POINT.lat, "lon": POINT.lon},
            "list": [{"dt": 1700000000, "main": {"aqi": 2}, "components": {**COMPONENTS, **over}}]}


def weather_body(**over):
    item = {"dt": 1700000000, **WEATHER, **over}
    return {"lat": POINT.lat, "lon": POINT.lon, "data": [{k: v for k, v in item.items() if v is not None}]}


@pytest.fixture
def fixtures(tmp_path):
    write_fixture(tmp_path, "air_pollution", POINT, *RANGE, air_body())
    write_fixture(tmp_path, "weather", POINT, *RANGE, weather_body())
    return ApiConfig(fixture_dir=str(tmp_path))


class FakeResponse:
    def __init__(self, status, body=b""):
        self.status_code, self.content = status, body


class FakeSession:
    def __init__(self, responses):
        self.responses, self.calls = list(responses), []

    def get(self, url, params=None, timeout=None):
        self.calls.append((url, dict(params), timeout))
        r = self.responses.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def test_fixture_air_quality_parse_fidelity(fixtures):
    (s,) = fetch_air_quality(fixtures, POINT, RANGE)
    assert s.pollutants["pm2_5"] == 12.3
    assert s.timestamp == T0 and s.location == POINT
    assert s.weather is None


def test_fixture_weather_kelvin_to_celsius(fixtures):
    (s,) = fetch_weather(fixtures, POINT, RANGE)
    assert s.weather["temp"] == pytest.approx(12.0, abs=1e-12)
    assert s.weather["dew_point"] == pytest.approx(282.0 - 273.15, abs=1e-12)
    assert s.weather["humidity"] == 81.0


def test_empty_components_is_parse_error():
    body = air_body()
    body["list"].append({"dt": 1700003600, "components": {}})
    with pytest.raises(ParseError, match=r"list\[1\]\.components"):
        parse_air_quality(json.dumps(body), POINT)


def test_missing_component_names_field():
    body = air_body()
    del body["list"][0]["components"]["pm10"]
    with pytest.raises(ParseError, match="pm10"):
        parse_air_quality(body, POINT)


def test_negative_concentration_is_validation_error():
    with pytest.raises(ValidationError):
        parse_air_quality(air_body(no2=-1.0), POINT)


def test_humidity_out_of_range_is_validation_error():
    with pytest.raises(ValidationError):
        parse_weather(weather_body(humidity=101), POINT)


def test_missing_wind_gust_is_absent_not_zero():
    (s,) = parse_weather(weather_body(wind_gust=None), POINT)
    assert s.weather["wind_gust"] is None
    assert np.isnan(s.row()["wind_gust"])


def test_non_numeric_and_non_json():
    with pytest.raises(ParseError, match="temp"):
        parse_weather(weather_body(temp="warm"), POINT)
    with pytest.raises(ParseError):
        parse_air_quality(b"<html>", POINT)
    with pytest.raises(ParseError, match="data"):
        parse_weather({"current": {}}, POINT)


def test_live_and_fixture_agree_on_identical_bytes(fixtures, monkeypatch):
    monkeypatch.setenv("OPENWEATHER_API_KEY", "k")
    raw = ingest.fixture_path(fixtures.fixture_dir, "air_pollution", POINT, *RANGE).read_bytes()
    session = FakeSession([FakeResponse(200, raw)])
    live = fetch_air_quality(ApiConfig(), POINT, RANGE, session=session)
    assert live == fetch_air_quality(fixtures, POINT, RANGE)
    url, params, timeout = session.calls[0]
    assert url.endswith("/air_pollution/history")
    assert set(params) == {"lat", "lon", "start", "end", "appid"}
    assert params["start"] == 1700000000 and params["appid"] == "k"


def test_retry_with_exponential_backoff(monkeypatch):
    monkeypatch.setenv("OPENWEATHER_API_KEY", "k")
    sleeps = []
    body = json.dumps(weather_body()).encode()
    session = FakeSession([requests.Timeout("slow"), FakeResponse(503), FakeResponse(200, body)])
    (s,) = fetch_weather(ApiConfig(retries=3, backoff=0.5), POINT, RANGE, session=session, sleep=sleeps.append)
    assert sleeps == [0.5, 1.0]
    assert s.weather["temp"] == pytest.approx(12.0)


def test_transport_error_after_retries(monkeypatch):
    monkeypatch.setenv("OPENWEATHER_API_KEY", "k")
    session = FakeSession([requests.ConnectionError("down")] * 3)
    with pytest.raises(TransportError, match="3 attempts"):
        fetch_weather(ApiConfig(retries=2), POINT, RANGE, session=session, sleep=lambda s: None)


def test_auth_failure_and_missing_key(monkeypatch):
    monkeypatch.setenv("OPENWEATHER_API_KEY", "k")
    with pytest.raises(CredentialError):
        fetch_weather(ApiConfig(), POINT, RANGE, session=FakeSession([FakeResponse(401)]))
    monkeypatch.delenv("OPENWEATHER_API_KEY")
    with pytest.raises(CredentialError, match="OPENWEATHER_API_KEY"):
        fetch_weather(ApiConfig(), POINT, RANGE, session=FakeSession([]))


def test_missing_fixture_and_empty_range(tmp_path):
    cfg = ApiConfig(fixture_dir=str(tmp_path))
    with pytest.raises(StorageError):
        fetch_weather(cfg, POINT, RANGE)
    with pytest.raises(ValidationError):
        fetch_weather(cfg, POINT, (T0, T0))


@pytest.mark.parametrize("lat,lon", [(91, 0), (-90.5, 0), (0, 181), (float("nan"), 0)])
def test_geopoint_ranges(lat, lon):
    with pytest.raises(ValidationError):
        GeoPoint(lat, lon)


def test_rate_limiter_spacing():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    lim = RateLimiter(120, clock=lambda: now[0], sleep=sleep)
    for _ in range(3):
        lim.acquire()
    assert slept == [0.5, 0.5]


coords = st.tuples(st.floats(-89, 89), st.floats(-179, 179))


@given(coords, coords)
@settings(max_examples=50, deadline=None)
def test_haversine_symmetric_and_zero(a, b):
    assert haversine_m(a, b) == pytest.approx(haversine_m(b, a), rel=1e-12, abs=1e-9)
    assert haversine_m(a, a) == 0.0


def test_haversine_known_distance():
    # one degree of latitude on the mean sphere
    assert haversine_m((0.0, 0.0), (1.0, 0.0)) == pytest.approx(ingest.EARTH_RADIUS_M * np.pi / 180, rel=1e-12)


def offset(point, metres_north):
    return GeoPoint(point.lat + metres_north / (ingest.EARTH_RADIUS_M * np.pi / 180), point.lon)


def env(ts, point=POINT, pm=1.0):
    return EnvSample(pd.Timestamp(ts, tz="UTC"), point, pollutants={**COMPONENTS, "pm2_5": pm})


def records(*times, point=POINT):
    return pd.DataFrame({"timestamp": pd.to_datetime(list(times), utc=True), "lat": point.lat, "lon": point.lon})


def test_join_nearest_time():
    out = geo_temporal_join(records("2024-01-01 10:05"), [env("2024-01-01 10:00", pm=1), env("2024-01-01 11:00", pm=2)])
    assert out["env_matched"].item() and out["pm2_5"].item() == 1.0
    assert out["env_dt_s"].item() == -300.0


def test_join_distance_gate_flags_unmatched():
    out = geo_temporal_join(records("2024-01-01 10:00"), [env("2024-01-01 10:00", offset(POINT, 500))])
    assert len(out) == 1 and not out["env_matched"].item() and np.isnan(out["pm2_5"].item())
    near = geo_temporal_join(records("2024-01-01 10:00"), [env("2024-01-01 10:00", offset(POINT, 150))])
    assert near["env_matched"].item() and near["env_distance_m"].item() == pytest.approx(150.0, rel=1e-6)


def test_join_time_gate():
    out = geo_temporal_join(records("2024-01-01 10:31"), [env("2024-01-01 10:00")])
    assert not out["env_matched"].item()
    out = geo_temporal_join(records("2024-01-01 10:30"), [env("2024-01-01 10:00")])
    assert out["env_matched"].item()


def test_join_tie_goes_to_earlier_sample():
    out = geo_temporal_join(records("2024-01-01 10:30"), [env("2024-01-01 11:00", pm=2), env("2024-01-01 10:00", pm=1)])
    assert out["pm2_5"].item() == 1.0


def test_join_order_independent():
    samples = [env(f"2024-01-01 {h:02d}:00", pm=float(h)) for h in range(6)]
    recs = records(*[f"2024-01-01 {h:02d}:{m:02d}" for h in range(5) for m in (10, 30, 50)])
    a = geo_temporal_join(recs, samples)
    b = geo_temporal_join(recs, samples[::-1])
    pd.testing.assert_frame_equal(a, b)


def test_air_and_weather_rows_merge(fixtures):
    samples = fetch_air_quality(fixtures, POINT, RANGE) + fetch_weather(fixtures, POINT, RANGE)
    frame = ingest.samples_frame(samples)
    assert len(frame) == 1
    assert frame["pm2_5"].item() == 12.3 and frame["humidity_api"].item() == 81.0


def test_payload_builders_round_trip():
    frame = pd.DataFrame({"timestamp": [T0], **{k: [v] for k, v in COMPONENTS.items()},
                          "temp": [12.0], "feels_like": [11.0], "pressure": [1010.0], "humidity_api": [70.0],
                          "dew_point": [6.0], "clouds": [10.0], "wind_speed": [2.0], "wind_deg": [90.0],
                          "wind_gust": [np.nan]})
    (a,) = parse_air_quality(json.dumps(ingest.air_payload(frame)), POINT)
    (w,) = parse_weather(json.dumps(ingest.weather_payload(frame)), POINT)
    assert a.pollutants == COMPONENTS
    assert w.weather["temp"] == pytest.approx(12.0, abs=1e-12) and w.weather["wind_gust"] is None


def test_ingest_records_end_to_end_offline(tmp_path):
    recs = records("2023-11-14 22:20", "2023-11-14 23:10")
    plan = ingest.IngestPlan.from_records(recs)
    (point, start, end), = plan.queries
    hours = pd.date_range(start, end, freq="1h", inclusive="left")
    rows = pd.DataFrame({"timestamp": hours, **{k: float(i + 1) for i, k in enumerate(COMPONENTS)},
                         "temp": 10.0, "feels_like": 9.0, "pressure": 1000.0, "humidity_api": 50.0,
                         "dew_point": 0.0, "clouds": 0.0, "wind_speed": 1.0, "wind_deg": 0.0, "wind_gust": 2.0})
    write_fixture(tmp_path, "air_pollution", point, start, end, ingest.air_payload(rows))
    write_fixture(tmp_path, "weather", point, start, end, ingest.weather_payload(rows))
    out = ingest.ingest_records(recs, ApiConfig(fixture_dir=str(tmp_path)))
    assert out["env_matched"].all()
    assert out["temp"].tolist() == pytest.approx([10.0, 10.0])
    assert list(out["env_dt_s"]) == [-1200.0, -600.0]
