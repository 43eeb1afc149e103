"""Run configuration: one typed key/value tree shared by every CLI subcommand.

A config file is JSON with these top-level sections::

    {
      "seed": 0,
      "log_level": "INFO",
      "paths":      {"data_dir": ..., "out_dir": ..., "checkpoint": ..., "fixtures": ...},
      "generator":  {GeneratorConfig fields},
      "prep":       {PrepConfig fields},
      "hyperparams":{HyperParams fields},
      "train":      {TrainConfig fields},
      "inpaint":    {InpaintConfig fields},
      "scenario":   {"factors": {"pm2_5": 2.0}, "clamp_pollutants": true},
      "ingest":     {ApiConfig fields except fixture_dir, "max_distance_m", "max_dt_minutes"}
    }

The API key itself is never part of the config; only the name of the
environment variable holding it.

Every leaf is addressable by a dotted key (``train.epochs``), which is what
``--set KEY=VALUE`` overrides use. Unknown keys are rejected and leaf types
are checked against the defaults, so typos fail before any work starts.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .aae import HyperParams
from .dataprep import PrepConfig
from .errors import ConfigError, StorageError
from .inference import InpaintConfig, ScenarioConfig
from .ingest import ApiConfig
from .synthgen import GeneratorConfig
from .training import TrainConfig

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
PATH_KEYS = ("data_dir", "out_dir", "checkpoint", "fixtures")

# sections whose leaves are free-form mappings rather than scalars
_MAPPING_LEAVES = {"generator.noise_std", "scenario.factors", "scenario.linked"}


def _section_defaults(cls) -> dict:
    body = asdict(cls())
    for f in fields(cls):
        if f.name in ("checkpoint_path", "verbose", "seed"):
            body.pop(f.name, None)  # set by the CLI or the top-level seed
    return body


def defaults() -> dict:
    sc = ScenarioConfig()
    tree = {
        "seed": 0,
        "log_level": "INFO",
        "paths": {k: None for k in PATH_KEYS},
        "generator": _section_defaults(GeneratorConfig),
        "prep": _section_defaults(PrepConfig),
        "hyperparams": _section_defaults(HyperParams),
        "train": _section_defaults(TrainConfig),
        "inpaint": _section_defaults(InpaintConfig),
        "scenario": {"factors": dict(sc.factors), "clamp_pollutants": sc.clamp_pollutants,
                     "linked": {k: list(v) for k, v in sc.linked.items()}},
        "ingest": {**{k: v for k, v in asdict(ApiConfig()).items() if k != "fixture_dir"},
                   "max_distance_m": 200.0, "max_dt_minutes": 30.0},
    }
    return json.loads(json.dumps(tree))  # tuples -> lists, as a config file would hold them


def flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict) and name not in _MAPPING_LEAVES:
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _unflatten(flat: dict) -> dict:
    tree: dict = {}
    for key, value in flat.items():
        node = tree
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return tree


def _coerce(key: str, value, default):
    """Check ``value`` against the type of ``default``; ints promote to float."""
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, (list, tuple)):
        if isinstance(value, (list, tuple)):
            return list(value)
    elif isinstance(default, dict):
        if isinstance(value, dict):
            return value
    raise ConfigError(f"config key {key!r}: expected {type(default).__name__}, got {value!r}")


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: flatten(defaults()))

    @classmethod
    def from_tree(cls, tree: dict) -> "RunConfig":
        cfg = cls()
        cfg.update(flatten(tree))
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise StorageError(f"cannot read config {path}: {exc}") from exc
        try:
            tree = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_tree(tree)

    def update(self, flat: dict) -> None:
        unknown = sorted(k for k in flat if k not in self.values)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        for key, value in flat.items():
            self.values[key] = _coerce(key, value, self.values[key])
        self.validate()

    def set_pairs(self, pairs) -> None:
        """Apply ``KEY=VALUE`` overrides; values are parsed as JSON, else kept as strings."""
        flat = {}
        for pair in pairs or ():
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not KEY=VALUE")
            key, raw = pair.split("=", 1)
            try:
                flat[key.strip()] = json.loads(raw)
            except json.JSONDecodeError:
                flat[key.strip()] = raw
        if flat:
            self.update(flat)

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, name: str) -> dict:
        n = len(name) + 1
        return {k[n:]: v for k, v in self.values.items() if k.startswith(name + ".")}

    def tree(self) -> dict:
        return _unflatten(self.values)

    def digest(self) -> str:
        canon = json.dumps(self.tree(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def validate(self) -> None:
        if self.values["log_level"] not in LOG_LEVELS:
            raise ConfigError(f"log_level must be one of {LOG_LEVELS}")
        # constructing each section runs its own invariant checks
        self.generator().validate()
        self.prep()
        self.hyperparams()
        self.train()
        self.inpaint()
        self.scenario()
        self.api()
        if self.values["ingest.max_distance_m"] <= 0 or self.values["ingest.max_dt_minutes"] <= 0:
            raise ConfigError("ingest gates must be > 0")

    # -- typed views ---------------------------------------------------------

    def generator(self) -> GeneratorConfig:
        body = self.section("generator")
        body["periods"] = tuple(body["periods"])
        return GeneratorConfig(**{**body, "seed": self.values["seed"]})

    def prep(self) -> PrepConfig:
        body = self.section("prep")
        body["split_fractions"] = tuple(body["split_fractions"])
        return PrepConfig(**{**body, "seed": self.values["seed"]})

    def hyperparams(self) -> HyperParams:
        body = self.section("hyperparams")
        body["disc_widths"] = tuple(body["disc_widths"])
        return HyperParams(**body)

    def train(self, **extra) -> TrainConfig:
        body = {**self.section("train"), "seed": self.values["seed"], **extra}
        body["freeze_mask"] = tuple(body["freeze_mask"])
        return TrainConfig(**body)

    def inpaint(self) -> InpaintConfig:
        body = self.section("inpaint")
        if body["clamp_mask"] is not None:
            body["clamp_mask"] = tuple(body["clamp_mask"])
        return InpaintConfig(**{**body, "seed": self.values["seed"]})

    def scenario(self) -> ScenarioConfig:
        body = copy.deepcopy(self.section("scenario"))
        linked = {k: tuple(v) for k, v in body["linked"].items()}
        return ScenarioConfig(body["factors"], body["clamp_pollutants"], linked)

    def api(self, fixture_dir=None) -> ApiConfig:
        body = {k: v for k, v in self.section("ingest").items() if k not in ("max_distance_m", "max_dt_minutes")}
        return ApiConfig(**body, fixture_dir=None if fixture_dir is None else str(fixture_dir))
