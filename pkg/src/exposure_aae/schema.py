"""The canonical 29-feature layout shared by preprocessing, model and inference."""

from __future__ import annotations

from dataclasses import dataclass

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class Feature:
    name: str
    unit: str
    source: str


PHYSIOLOGICAL = (
    Feature("br_avg", "breaths/min", "RESpeck"),
    Feature("br_std", "breaths/min", "RESpeck"),
    Feature("activity_level", "unitless", "RESpeck"),
    Feature("step_count", "steps/min", "RESpeck"),
    Feature("heart_rt", "beats/min", "derived"),
)
LOCAL_SENSOR = (
    Feature("temperature", "degC", "AIRSpeck"),
    Feature("humidity", "%", "AIRSpeck"),
    Feature("pm2_5_local", "ug/m3", "AIRSpeck"),
)
API_POLLUTANTS = tuple(
    Feature(n, "ug/m3", "OpenWeather") for n in ("co", "no", "no2", "o3", "so2", "pm2_5", "pm10", "nh3")
)
API_WEATHER = (
    Feature("temp", "degC", "OpenWeather"),
    Feature("feels_like", "degC", "OpenWeather"),
    Feature("pressure", "hPa", "OpenWeather"),
    Feature("humidity_api", "%", "OpenWeather"),
    Feature("dew_point", "degC", "OpenWeather"),
    Feature("clouds", "%", "OpenWeather"),
    Feature("wind_speed", "m/s", "OpenWeather"),
    Feature("wind_deg", "deg", "OpenWeather"),
    Feature("wind_gust", "m/s", "OpenWeather"),
)
CYCLICAL = tuple(Feature(n, "unitless", "derived") for n in ("hour_sin", "hour_cos", "dow_sin", "dow_cos"))

FEATURES: tuple[Feature, ...] = PHYSIOLOGICAL + LOCAL_SENSOR + API_POLLUTANTS + API_WEATHER + CYCLICAL
FEATURE_NAMES: tuple[str, ...] = tuple(f.name for f in FEATURES)
N_FEATURES = len(FEATURES)

PHYSIO_NAMES = tuple(f.name for f in PHYSIOLOGICAL)
POLLUTANT_NAMES = tuple(f.name for f in API_POLLUTANTS)
WEATHER_NAMES = tuple(f.name for f in API_WEATHER)
ENV_NAMES = POLLUTANT_NAMES + WEATHER_NAMES
CYCLICAL_NAMES = tuple(f.name for f in CYCLICAL)

# identifier columns carried alongside features in every frame
ID_COLUMNS = ("participant_id", "period", "timestamp")
GROUP_KEYS = ["participant_id", "period"]
PERIODS = ("P1_summer", "P2_winter")

RAW_REQUIRED = ID_COLUMNS + ("lat", "lon", "br_avg", "br_std", "activity_level", "step_count",
                             "temperature", "humidity", "pm2_5_local")

assert N_FEATURES == 29 and len(set(FEATURE_NAMES)) == 29


def feature_index(name: str) -> int:
    return FEATURE_NAMES.index(name)


def indices(names) -> list[int]:
    return [FEATURE_NAMES.index(n) for n in names]
