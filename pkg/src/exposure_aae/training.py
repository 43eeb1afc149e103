"""Adversarial training loop, rollout loss, fine-tuning and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import aae
from .aae import AaeParams, HyperParams
from .dataprep import ScalerParams, build_windows
from .errors import CheckpointVersionError, ConfigError, DimensionError, NumericalError, ParseError, StorageError
from .inference import exogenous_mask, inpaint_cycle
from .numerics import Tape, Tensor, adam_step, generator_loss, init_adam, mse_loss, ops
from .schema import FEATURE_NAMES, N_FEATURES, SCHEMA_VERSION

FINE_TUNE_TRAINABLE = ("dec_tconv1", "dec_tconv2")
DEFAULT_FREEZE = tuple(n for n in aae.LAYER_ORDER if n not in FINE_TUNE_TRAINABLE)


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    rollout_depth: int = 3
    rollout_weight: float = 1.0
    rollout_start_epoch: int = 5  # 1-based; earlier epochs train on reconstruction only
    rollout_batch_size: int | None = 16  # None: same as batch_size
    gen_learning_rate: float = 1e-3
    disc_learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    checkpoint_path: str | None = None
    freeze_mask: tuple[str, ...] = ()
    clamp_exogenous: bool = True  # rollout inpaints physiology only
    # "joint": one Adam step on L_rec + lambda * L_gen. "separate": the
    # generator term drives its own Adam state on the encoder, so the two
    # objectives are normalised independently before being applied.
    adv_update: str = "separate"
    adv_learning_rate: float | None = 1e-4  # "separate" only; None: gen_learning_rate
    divergence_factor: float = 10.0
    divergence_patience: int = 3
    verbose: bool = False

    def __post_init__(self):
        self.freeze_mask = tuple(self.freeze_mask)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.rollout_depth < 1:
            raise ConfigError("rollout_depth must be >= 1")
        if self.batch_size < 1 or (self.rollout_batch_size is not None and self.rollout_batch_size < 1):
            raise ConfigError("batch sizes must be >= 1")
        if self.rollout_weight < 0:
            raise ConfigError("rollout_weight must be >= 0")
        unknown = sorted(set(self.freeze_mask) - set(aae.LAYER_ORDER))
        if unknown:
            raise ConfigError(f"freeze_mask names unknown layers {unknown}; valid: {aae.LAYER_ORDER}")
        if not (self.gen_learning_rate > 0 and self.disc_learning_rate > 0):
            raise ConfigError("learning rates must be > 0")
        if self.adv_learning_rate is not None and not self.adv_learning_rate > 0:
            raise ConfigError("adv_learning_rate must be > 0")
        if self.adv_update not in ("joint", "separate"):
            raise ConfigError("adv_update must be 'joint' or 'separate'")

    @property
    def trainable(self) -> tuple[str, ...]:
        return tuple(n for n in aae.LAYER_ORDER if n not in self.freeze_mask)


@dataclass
class TrainData:
    windows: np.ndarray  # [N, 8, F] scaled training windows
    sequences: np.ndarray  # [M, 8 + depth, F] contiguous training runs for rollout
    validation: np.ndarray  # [V, 8, F]


def make_train_data(train: pd.DataFrame, validation: pd.DataFrame | None = None, ntimes: int = 8,
                    rollout_depth: int = 3) -> TrainData:
    """Windows and rollout sequences from scaled, split frames."""
    w = build_windows(train, ntimes, ntimes - 1).data
    seq = build_windows(train, ntimes + rollout_depth, ntimes + rollout_depth - 1).data
    v = build_windows(validation, ntimes, ntimes - 1).data if validation is not None else np.zeros((0,) + w.shape[1:])
    if len(w) == 0:
        raise DimensionError("no training windows; groups are shorter than the window length")
    return TrainData(w, seq, v)


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    initial_train_rec: float = float("nan")
    initial_val_mse: float | None = None
    best_epoch: int | None = None
    final_val_mse: float | None = None
    wall_time: float = 0.0
    trainable: tuple[str, ...] = ()

    COLUMNS = ("epoch", "rec", "gen_adv", "disc", "rollout", "total", "train_rec", "val_mse", "seconds")

    @property
    def final_train_rec(self) -> float:
        return self.epochs[-1]["train_rec"] if self.epochs else float("nan")

    def to_json(self, timings: bool = True) -> dict:
        """Plain dict; ``timings=False`` drops wall-clock fields for reproducible files."""
        body = asdict(self)
        body["trainable"] = list(self.trainable)
        body["final_train_rec"] = self.final_train_rec
        if not timings:
            body.pop("wall_time")
            body["epochs"] = [{k: v for k, v in row.items() if k != "seconds"} for row in body["epochs"]]
        return body

    def save_json(self, path, timings: bool = True) -> None:
        Path(path).write_text(json.dumps(self.to_json(timings), indent=2) + "\n")

    def save_csv(self, path, timings: bool = True) -> None:
        cols = [c for c in self.COLUMNS if timings or c != "seconds"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for row in self.epochs:
                w.writerow({k: row.get(k) for k in cols})


# -- losses -------------------------------------------------------------------

def reconstruction_mse(model, windows: np.ndarray, batch_size: int = 256) -> float:
    """Mean squared reconstruction error over all windows (inference mode)."""
    if len(windows) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(windows), batch_size):
        x = windows[i : i + batch_size]
        total += float(np.sum((model.reconstruct(x).data - x) ** 2))
    return total / windows.size


def rollout_loss(model, sequences, depth: int, mask: np.ndarray | None = None) -> Tensor:
    """Mean next-level error over ``depth`` autoregressive inpainting cycles.

    Each cycle conditions on the previous 7 levels (real, then predicted),
    starts from the previous level as its guess with clamped channels set to
    the truth, and scores only the non-clamped channels.
    """
    seq = np.asarray(sequences.data if isinstance(sequences, Tensor) else sequences, dtype=float)
    if seq.ndim != 3 or seq.shape[1] < 8 + depth:
        raise DimensionError(f"rollout_loss needs [batch, >= {8 + depth}, features], got {seq.shape}")
    mask = np.zeros(seq.shape[2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    free = (~mask).astype(float)
    if not free.any():
        raise ConfigError("rollout_loss: every channel is clamped")
    scale = 1.0 / (seq.shape[0] * free.sum())
    known = Tensor(seq[:, 1:8, :])
    prev = Tensor(seq[:, 7, :])
    losses = []
    for k in range(depth):
        truth = seq[:, 8 + k, :]
        guess = ops.where(np.broadcast_to(mask, truth.shape), Tensor(truth), prev)
        pred = inpaint_cycle(model, known, guess, mask, truth)
        err = ops.mul(ops.square(ops.sub(pred, Tensor(truth))), Tensor(free))
        losses.append(ops.mul(ops.sum(err), scale))
        known = ops.concat([known[:, 1:, :], ops.reshape(pred, (pred.shape[0], 1, pred.shape[1]))], axis=1)
        prev = pred
    total = losses[0]
    for term in losses[1:]:
        total = ops.add(total, term)
    return ops.mul(total, 1.0 / depth)


def _generator_adv(d_fake: Tensor, convention: str) -> Tensor:
    if convention == "standard":
        return generator_loss(d_fake)
    # encoder samples carry the "real" label; the encoder tries to look like the prior
    return generator_loss(ops.sub(1.0, d_fake))


# -- loop ---------------------------------------------------------------------

@dataclass
class _Optimizers:
    gen_names: tuple[str, ...]
    disc_names: tuple[str, ...]
    enc_names: tuple[str, ...]
    gen: object
    disc: object
    reg: object  # encoder state for the generator term under "separate"


def _make_optimizers(params: AaeParams, config: TrainConfig) -> _Optimizers:
    gen = tuple(n for n in aae.GENERATOR_LAYERS if n in config.trainable)
    disc = tuple(n for n in aae.DISCRIMINATOR_LAYERS if n in config.trainable)
    enc = tuple(n for n in aae.ENCODER_LAYERS if n in config.trainable)

    def opt(names, lr):
        if not names:
            return None
        return init_adam(params.parameters(names), lr, config.beta1, config.beta2, config.epsilon)

    reg_lr = config.adv_learning_rate or config.gen_learning_rate
    reg = opt(enc, reg_lr) if config.adv_update == "separate" else None
    return _Optimizers(gen, disc, enc, opt(gen, config.gen_learning_rate), opt(disc, config.disc_learning_rate), reg)


def _check_finite(value: float, what: str, epoch: int, batch: int) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"{what} loss is {value} at epoch {epoch}, batch {batch}; epoch aborted")


def train_epoch(params: AaeParams, data: TrainData, config: TrainConfig, epoch: int = 1,
                optimizers: _Optimizers | None = None, rng: np.random.Generator | None = None):
    """One pass over shuffled batches: generator step, then discriminator step.

    Returns ``(params, losses)`` with batch-averaged loss components.
    """
    optimizers = optimizers or _make_optimizers(params, config)
    rng = rng or np.random.default_rng(config.seed)
    hp = params.hp
    lam = hp.lambda_adv
    use_rollout = (config.rollout_weight > 0 and epoch >= config.rollout_start_epoch
                   and len(data.sequences) > 0)
    mask = exogenous_mask() if config.clamp_exogenous else np.zeros(N_FEATURES, dtype=bool)
    rb = config.rollout_batch_size or config.batch_size
    gen_params = params.parameters(optimizers.gen_names)
    disc_params = params.parameters(optimizers.disc_names)
    enc_params = params.parameters(optimizers.enc_names)
    sums = dict(rec=0.0, gen_adv=0.0, disc=0.0, rollout=0.0, total=0.0)

    order = rng.permutation(len(data.windows))
    n_batches = 0
    for bi, start in enumerate(range(0, len(order), config.batch_size)):
        x = data.windows[order[start : start + config.batch_size]]
        separate = lam > 0 and optimizers.reg is not None
        params.zero_grad()
        with Tape() as tape:
            z = params.encode(x)
            rec = mse_loss(params.decode(z), x)
            data_loss = rec
            if use_rollout:
                pick = rng.choice(len(data.sequences), size=min(rb, len(data.sequences)), replace=False)
                roll = rollout_loss(params, data.sequences[pick], config.rollout_depth, mask)
                data_loss = ops.add(data_loss, ops.mul(roll, config.rollout_weight))
            loss = data_loss
            if lam > 0:
                g_adv = ops.mul(_generator_adv(params.discriminate(z), hp.adv_sign_convention), lam)
                loss = ops.add(loss, g_adv)
        _check_finite(loss.item(), "generator", epoch, bi)
        if optimizers.gen is not None:
            tape.backward(data_loss if separate else loss)
            gen_grads = [p.grad for p in gen_params]
            if separate:
                # generator-term gradients at the same weights, before any step
                for p in gen_params:
                    p.grad = None
                for node in tape.nodes:
                    node.output.grad = None
                tape.backward(g_adv)
                adam_step(enc_params, [p.grad for p in enc_params], optimizers.reg)
            adam_step(gen_params, gen_grads, optimizers.gen)
        sums["rec"] += rec.item()
        sums["total"] += loss.item()
        if lam > 0:
            sums["gen_adv"] += g_adv.item() / lam
        if use_rollout:
            sums["rollout"] += roll.item()

        if lam > 0 and optimizers.disc is not None:
            params.zero_grad()
            z_fake = z.detach()
            z_prior = aae.sample_prior(len(x), hp.latent_dim, rng)
            with Tape() as tape:
                d_loss = aae.adversarial_terms(params.discriminate(z_prior), params.discriminate(z_fake),
                                               hp.adv_sign_convention)
            _check_finite(d_loss.item(), "discriminator", epoch, bi)
            tape.backward(d_loss)
            adam_step(disc_params, [p.grad for p in disc_params], optimizers.disc)
            sums["disc"] += d_loss.item()
        n_batches += 1
    params.zero_grad()
    return params, {k: v / max(n_batches, 1) for k, v in sums.items()}


class TrainingDiverged(NumericalError):
    def __init__(self, message: str, report: TrainReport):
        super().__init__(message)
        self.report = report


def train(data: TrainData, config: TrainConfig | None = None, hp: HyperParams | None = None,
          params: AaeParams | None = None, scaler: ScalerParams | None = None):
    """Run ``config.epochs`` epochs; returns the best-validation parameters and a report."""
    config = config or TrainConfig()
    params = params or aae.init_params(hp or HyperParams(), seed=config.seed)
    if not config.trainable:
        raise ConfigError("freeze_mask covers every layer; nothing to train")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    optimizers = _make_optimizers(params, config)
    has_val = len(data.validation) > 0
    report = TrainReport(trainable=config.trainable)
    report.initial_train_rec = reconstruction_mse(params, data.windows)
    report.initial_val_mse = reconstruction_mse(params, data.validation) if has_val else None
    best, best_score = params.copy(), np.inf
    strikes = 0
    t0 = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        te = time.perf_counter()
        params, losses = train_epoch(params, data, config, epoch, optimizers, rng)
        train_rec = reconstruction_mse(params, data.windows)
        val = reconstruction_mse(params, data.validation) if has_val else None
        row = {"epoch": epoch, **losses, "train_rec": train_rec, "val_mse": val,
               "seconds": time.perf_counter() - te}
        report.epochs.append(row)
        if config.verbose:
            print(" ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()),
                  flush=True)
        score = val if has_val else train_rec
        if score < best_score:
            best, best_score, report.best_epoch = params.copy(), score, epoch
            if config.checkpoint_path:
                save_checkpoint(best, config.checkpoint_path, scaler=scaler)
        strikes = strikes + 1 if train_rec > config.divergence_factor * report.initial_train_rec else 0
        if strikes >= config.divergence_patience:
            report.wall_time = time.perf_counter() - t0
            raise TrainingDiverged(
                f"training diverged: reconstruction loss above {config.divergence_factor}x its initial value "
                f"for {strikes} consecutive epochs (epoch {epoch})", report)
    report.wall_time = time.perf_counter() - t0
    report.final_val_mse = reconstruction_mse(best, data.validation) if has_val else None
    best.metadata["train"] = {"epochs": config.epochs, "seed": config.seed, "best_epoch": report.best_epoch}
    return best, report


def fine_tune(pretrained: AaeParams, data: TrainData, config: TrainConfig | None = None,
              scaler: ScalerParams | None = None):
    """Train only the unfrozen layer groups of a copy of ``pretrained``."""
    config = config or TrainConfig(epochs=20, gen_learning_rate=1e-4, disc_learning_rate=1e-4,
                                   freeze_mask=DEFAULT_FREEZE, rollout_start_epoch=1)
    if not config.freeze_mask:
        config = TrainConfig(**{**asdict(config), "freeze_mask": DEFAULT_FREEZE})
    params, report = train(data, config, params=pretrained.copy(), scaler=scaler)
    params.metadata["fine_tuned"] = {"trainable": list(config.trainable), "epochs": config.epochs}
    return params, report


# -- checkpoints --------------------------------------------------------------

MAGIC = b"EXAAECK\x00"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: list(o) if isinstance(o, tuple) else str(o)))


def save_checkpoint(params: AaeParams, path, scaler: ScalerParams | None = None) -> None:
    """Magic, little-endian u64 header length, JSON header, then raw <f8 tensors."""
    metadata = dict(params.metadata)
    metadata["hyperparams"] = asdict(params.hp)
    if scaler is not None:
        metadata["scaler"] = scaler.to_json()
    entries, blobs, offset = [], [], 0
    for name, t in params.named_tensors():
        blob = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": "<f8", "offset": offset,
                        "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    header = {
        "format_version": FORMAT_VERSION,
        "schema_version": SCHEMA_VERSION,
        "features": list(FEATURE_NAMES),
        "metadata": _jsonable(metadata),
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(MAGIC + _LEN.pack(len(head)) + head + payload)
        tmp.replace(path)
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint_header(path) -> dict:
    return _read(path)[0]


def _read(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise ParseError(f"{path}: truncated header")
    (n,) = _LEN.unpack(raw[8:16])
    if 16 + n > len(raw):
        raise ParseError(f"{path}: truncated header ({len(raw) - 16} of {n} bytes)")
    try:
        header = json.loads(raw[16 : 16 + n])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt header: {exc}") from exc
    return header, raw[16 + n :]


def load_checkpoint(path) -> AaeParams:
    """Inverse of :func:`save_checkpoint`; validates versions, sizes and checksum."""
    header, payload = _read(path)
    if header.get("format_version") != FORMAT_VERSION or header.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format {header.get('format_version')}/schema {header.get('schema_version')} "
            f"is incompatible with format {FORMAT_VERSION}/schema {SCHEMA_VERSION}")
    entries = header.get("tensors", [])
    expected = sum(e["nbytes"] for e in entries)
    if len(payload) != expected:
        raise ParseError(f"{path}: payload has {len(payload)} bytes, header declares {expected}")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise ParseError(f"{path}: payload checksum mismatch")
    meta = header["metadata"]
    try:
        hp = HyperParams(**meta["hyperparams"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: bad hyperparameter block: {exc}") from exc
    layers = {n: {} for n in aae.LAYER_ORDER}
    for e in entries:
        layer, key = e["name"].split(".", 1)
        if layer not in layers or e["dtype"] != "<f8":
            raise ParseError(f"{path}: unexpected tensor {e['name']} ({e['dtype']})")
        arr = np.frombuffer(payload, dtype="<f8", count=int(np.prod(e["shape"])), offset=e["offset"])
        layers[layer][key] = Tensor(arr.astype(np.float64).reshape(e["shape"]), requires_grad=True, name=e["name"])
    reference = aae.init_params(hp, zero=True)
    for name, t in reference.named_tensors():
        layer, key = name.split(".", 1)
        got = layers[layer].get(key)
        if got is None or got.shape != t.shape:
            raise ParseError(f"{path}: tensor {name} missing or misshapen")
    return AaeParams(hp, layers, meta)


def checkpoint_scaler(path) -> ScalerParams | None:
    body = read_checkpoint_header(path)["metadata"].get("scaler")
    return ScalerParams.from_json(body) if body else None


def select_layers(names: Sequence[str]) -> tuple[str, ...]:
    unknown = sorted(set(names) - set(aae.LAYER_ORDER))
    if unknown:
        raise ConfigError(f"unknown layer names {unknown}")
    return tuple(names)
