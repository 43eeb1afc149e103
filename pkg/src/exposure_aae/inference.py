"""Inpainting-based next-step prediction, forecasting, scenarios and evaluation.

A model here is anything with ``reconstruct(x) -> Tensor`` over windows of
shape [batch, 8, features]; trained ``AaeParams`` qualify, and so do simple
stubs in tests.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataprep import ScalerParams
from .errors import DimensionError, NumericalError, ValidationError
from .numerics import Tensor, as_tensor, ops
from .schema import FEATURE_NAMES, N_FEATURES, PHYSIO_NAMES, feature_index, indices

SCENARIO_POLLUTANTS = ("pm2_5", "pm10", "no2", "o3", "co")
# a sustained ambient increase shows up in the wearable's own PM2.5 reading too
LINKED_CHANNELS = {"pm2_5": ("pm2_5_local",)}


def exogenous_mask() -> np.ndarray:
    """Clamp everything except the physiological channels."""
    mask = np.ones(N_FEATURES, dtype=bool)
    mask[indices(PHYSIO_NAMES)] = False
    return mask


@dataclass
class InpaintConfig:
    max_iterations: int = 20
    tolerance: float = 1e-4
    epsilon_std: float = 0.01
    clamp_mask: Sequence[bool] | None = None  # None: clamp exogenous channels
    full_inpaint: bool = False  # ignore clamp_mask, inpaint every channel
    teacher_forcing: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be > 0")
        if self.epsilon_std < 0:
            raise ValidationError("epsilon_std must be >= 0")
        if self.clamp_mask is not None and len(self.clamp_mask) != N_FEATURES:
            raise DimensionError(f"clamp_mask needs {N_FEATURES} entries, got {len(self.clamp_mask)}")

    def mask(self) -> np.ndarray:
        if self.full_inpaint:
            return np.zeros(N_FEATURES, dtype=bool)
        if self.clamp_mask is None:
            return exogenous_mask()
        return np.asarray(self.clamp_mask, dtype=bool)


@dataclass
class ScenarioConfig:
    factors: dict = field(default_factory=lambda: {p: 1.0 for p in SCENARIO_POLLUTANTS})
    clamp_pollutants: bool = True
    linked: dict = field(default_factory=lambda: dict(LINKED_CHANNELS))

    def __post_init__(self):
        unknown = set(self.factors) - set(SCENARIO_POLLUTANTS)
        if unknown:
            raise ValidationError(f"unknown scenario pollutants {sorted(unknown)}")
        bad = {k: v for k, v in self.factors.items() if not (np.isfinite(v) and v > 0)}
        if bad:
            raise ValidationError(f"scenario factors must be > 0, got {bad}")

    @classmethod
    def uniform(cls, factor: float, **kw) -> "ScenarioConfig":
        return cls({p: float(factor) for p in SCENARIO_POLLUTANTS}, **kw)


@dataclass
class InpaintResult:
    level: np.ndarray  # [batch, features]
    iterations: np.ndarray  # [batch]
    deltas: np.ndarray  # final L2 change per sample
    converged: np.ndarray


@dataclass
class ForecastResult:
    scaled: np.ndarray  # [batch, horizon, features]
    unscaled: np.ndarray | None
    iterations: np.ndarray  # [batch, horizon]
    deltas: np.ndarray
    converged: np.ndarray


def _model_output_level(model, window: np.ndarray) -> np.ndarray:
    out = model.reconstruct(window)
    out = out.data if isinstance(out, Tensor) else np.asarray(out)
    return out[:, -1, :]


def inpaint_cycle(model, known: Tensor, guess: Tensor, mask: np.ndarray, clamp_values) -> Tensor:
    """One differentiable reconstruct-and-clamp pass; used by rollout training."""
    window = ops.concat([known, ops.reshape(guess, (guess.shape[0], 1, guess.shape[1]))], axis=1)
    level = model.reconstruct(window)[:, known.shape[1], :]
    return ops.where(np.broadcast_to(mask, level.shape), as_tensor(clamp_values), level)


def inpaint_step(model, known7: np.ndarray, guess8: np.ndarray, config: InpaintConfig | None = None,
                 clamp_values: np.ndarray | None = None) -> InpaintResult:
    """Refine the 8th level by iterating the autoencoder with clamped channels.

    ``clamp_values`` defaults to ``guess8``'s values on the clamped channels.
    Samples stop iterating individually once their change drops below tolerance.
    """
    config = config or InpaintConfig()
    known = np.asarray(known7, dtype=float)
    cur = np.array(guess8, dtype=float)
    if known.ndim == 2:
        known, cur = known[None], cur.reshape(1, -1)
    if known.ndim != 3 or cur.shape != (known.shape[0], known.shape[2]):
        raise DimensionError(f"inpaint_step: known {known.shape} and guess {cur.shape} disagree")
    mask = config.mask()
    clamp = cur.copy() if clamp_values is None else np.array(clamp_values, dtype=float).reshape(cur.shape)
    cur = np.where(mask, clamp, cur)

    n = cur.shape[0]
    iterations = np.zeros(n, dtype=int)
    deltas = np.full(n, np.inf)
    active = np.arange(n)
    for _ in range(config.max_iterations):
        window = np.concatenate([known[active], cur[active, None, :]], axis=1)
        out = _model_output_level(model, window)
        if not np.all(np.isfinite(out)):
            raise NumericalError("inpaint_step: model produced non-finite values")
        new = np.where(mask, clamp[active], out)
        d = np.linalg.norm(new - cur[active], axis=1)
        cur[active] = new
        deltas[active] = d
        iterations[active] += 1
        active = active[d >= config.tolerance]
        if active.size == 0:
            break
    return InpaintResult(cur, iterations, deltas, deltas < config.tolerance)


def forecast(model, series, horizon: int, config: InpaintConfig | None = None,
             scaler: ScalerParams | None = None) -> ForecastResult:
    """Autoregressive multi-step prediction by repeated inpainting.

    ``series`` is scaled, [time, features] or [batch, time, features]. The
    first 7 levels condition the forecast. Clamped channels at each new level
    (and every level under teacher forcing) are read from ``series``, which
    then needs ``7 + horizon`` levels.
    """
    config = config or InpaintConfig()
    if horizon < 1:
        raise ValidationError("forecast: horizon must be >= 1")
    x = np.asarray(series, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != N_FEATURES:
        raise DimensionError(f"forecast expects [batch, time, {N_FEATURES}], got {x.shape}")
    mask = config.mask()
    need = 7 + horizon if (mask.any() or config.teacher_forcing) else 7
    if x.shape[1] < need:
        raise DimensionError(f"forecast: series has {x.shape[1]} levels, needs {need}")

    rng = np.random.default_rng(config.seed)
    b = x.shape[0]
    history = x[:, :7, :].copy()
    out = np.empty((b, horizon, N_FEATURES))
    iters = np.empty((b, horizon), dtype=int)
    deltas = np.empty((b, horizon))
    for t in range(horizon):
        eps = rng.normal(0.0, config.epsilon_std, size=(b, N_FEATURES)) if config.epsilon_std else 0.0
        guess = history[:, -1, :] + eps
        clamp = x[:, 7 + t, :] if mask.any() else guess
        res = inpaint_step(model, history[:, -7:, :], guess, config, clamp_values=clamp)
        out[:, t], iters[:, t], deltas[:, t] = res.level, res.iterations, res.deltas
        nxt = x[:, 7 + t, :] if config.teacher_forcing else res.level
        history = np.concatenate([history[:, 1:, :], nxt[:, None, :]], axis=1)
    unscaled = scaler.inverse_array(out) if scaler is not None else None
    conv = deltas < config.tolerance
    if single:
        return ForecastResult(out[0], None if unscaled is None else unscaled[0], iters[0], deltas[0], conv[0])
    return ForecastResult(out, unscaled, iters, deltas, conv)


@dataclass
class ScenarioResult:
    factors: dict
    baseline: ForecastResult
    perturbed: ForecastResult
    br_delta_pct: float
    hr_delta_pct: float
    n_windows: int

    def to_json(self) -> dict:
        return {"pollutant_factors": self.factors, "br_delta_pct": self.br_delta_pct,
                "hr_delta_pct": self.hr_delta_pct, "n_windows": self.n_windows}


def perturb_series(series: np.ndarray, scenario: ScenarioConfig, scaler: ScalerParams) -> np.ndarray:
    """Scale pollutant channels by their factors in raw units; untouched where factor == 1."""
    out = np.array(series, dtype=float)
    for name, factor in scenario.factors.items():
        if factor == 1.0:
            continue
        for ch in (name, *scenario.linked.get(name, ())):
            j = feature_index(ch)
            raw = out[..., j] * scaler.span[j] + scaler.mins[j]
            out[..., j] = (raw * factor - scaler.mins[j]) / scaler.span[j]
    return out


def _mean_pct_change(base: np.ndarray, pert: np.ndarray) -> float:
    if np.array_equal(base, pert):
        return 0.0
    return float(np.mean(100.0 * (pert - base) / base))


def simulate_scenario(model, baseline_series, scenario: ScenarioConfig, scaler: ScalerParams,
                      horizon: int | None = None, config: InpaintConfig | None = None) -> ScenarioResult:
    """Forecast baseline and pollution-perturbed branches with identical seeds.

    Deltas are mean per-point % changes of inverse-scaled br_avg / heart_rt.
    """
    config = config or InpaintConfig()
    x = np.asarray(baseline_series, dtype=float)
    x = x[None] if x.ndim == 2 else x
    horizon = x.shape[1] - 7 if horizon is None else horizon
    perturbed = perturb_series(x, scenario, scaler)
    mask = config.mask().copy()
    pol = indices([c for p in SCENARIO_POLLUTANTS for c in (p, *scenario.linked.get(p, ()))])
    mask[pol] = scenario.clamp_pollutants
    cfg = InpaintConfig(config.max_iterations, config.tolerance, config.epsilon_std, tuple(mask), False,
                        config.teacher_forcing, config.seed)
    base = forecast(model, x, horizon, cfg, scaler)
    pert = forecast(model, perturbed, horizon, cfg, scaler)
    br, hr = feature_index("br_avg"), feature_index("heart_rt")
    return ScenarioResult(
        dict(scenario.factors), base, pert,
        _mean_pct_change(base.unscaled[..., br], pert.unscaled[..., br]),
        _mean_pct_change(base.unscaled[..., hr], pert.unscaled[..., hr]),
        int(x.shape[0]),
    )


@dataclass
class EvalResult:
    mse: float
    r2_listing: float | None  # None marks an undefined (zero-denominator) value
    r2_standard: float | None
    per_feature_mse: dict
    predicted: np.ndarray
    actual: np.ndarray

    @property
    def r2_discrepancy(self) -> float | None:
        if self.r2_listing is None or self.r2_standard is None:
            return None
        return self.r2_listing - self.r2_standard

    def to_json(self) -> dict:
        return {"mse": self.mse, "r2_listing": self.r2_listing, "r2_standard": self.r2_standard,
                "r2_discrepancy": self.r2_discrepancy, "per_feature_mse": self.per_feature_mse,
                "n": int(self.actual.size)}


def _ratio_r2(num: float, den: float) -> float | None:
    return None if den == 0 else 1.0 - num / den


def evaluate(predicted, actual, features: Sequence[str] | None = None) -> EvalResult:
    """MSE plus both R^2 variants.

    ``r2_listing`` divides by the MSE of the prediction mean against truth;
    ``r2_standard`` is ``1 - SS_res / SS_tot`` about the truth mean.
    """
    p, a = np.asarray(predicted, dtype=float), np.asarray(actual, dtype=float)
    if p.shape != a.shape:
        raise DimensionError(f"evaluate: predicted {p.shape} vs actual {a.shape}")
    if p.size == 0:
        raise ValidationError("evaluate: empty input")
    resid = np.mean((p - a) ** 2)
    listing_den = np.mean((np.mean(p) - a) ** 2)
    ss_tot = np.sum((a - np.mean(a)) ** 2)
    per = {}
    if p.ndim >= 2:
        names = list(features) if features is not None else (
            list(FEATURE_NAMES) if p.shape[-1] == N_FEATURES else [str(i) for i in range(p.shape[-1])])
        if len(names) != p.shape[-1]:
            raise DimensionError(f"evaluate: {len(names)} names for {p.shape[-1]} features")
        err = ((p - a) ** 2).reshape(-1, p.shape[-1]).mean(axis=0)
        per = {n: float(e) for n, e in zip(names, err)}
    return EvalResult(float(resid), _ratio_r2(resid, listing_den), _ratio_r2(np.sum((p - a) ** 2), ss_tot),
                      per, p, a)


def write_eval_json(result: EvalResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n")


def write_predictions_csv(path, timestamps, actual_scaled, predicted_scaled, scaler: ScalerParams | None = None,
                          features: Sequence[str] = FEATURE_NAMES, series_ids=None) -> None:
    """Long format: one row per (series, timestamp, feature)."""
    a = np.asarray(actual_scaled, dtype=float)
    p = np.asarray(predicted_scaled, dtype=float)
    if a.ndim == 2:
        a, p = a[None], p[None]
    ts = np.asarray(timestamps, dtype=object)
    ts = np.broadcast_to(ts, a.shape[:2]) if ts.ndim == 1 else ts
    au = scaler.inverse_array(a) if scaler is not None else np.full_like(a, np.nan)
    pu = scaler.inverse_array(p) if scaler is not None else np.full_like(p, np.nan)
    ids = range(a.shape[0]) if series_ids is None else series_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "timestamp", "feature", "actual_scaled", "predicted_scaled", "actual", "predicted"])
        for i, sid in enumerate(ids):
            for t in range(a.shape[1]):
                for j, name in enumerate(features):
                    w.writerow([sid, ts[i, t], name, repr(float(a[i, t, j])), repr(float(p[i, t, j])),
                                repr(float(au[i, t, j])), repr(float(pu[i, t, j]))])
