"""Command-line entry point: ``exposure-aae <command> [options]``.

Commands
    gen-data   synthetic cohort -> raw.csv, ground_truth.json
    prep       raw.csv -> features.csv (with split column), scaler.json, prep_summary.json
    train      prepared data -> model.ckpt, train_report.{json,csv}
    finetune   checkpoint + personal prepared data -> finetuned.ckpt, finetune_report.{json,csv}, finetune_eval.json
    predict    checkpoint + prepared data -> predictions.csv, eval.json
    simulate   checkpoint + prepared data -> scenario.json
    evaluate   two CSV files -> eval.json
    ingest     record CSV + API/fixtures -> joined CSV
    replay     rerun a manifest and compare output digests

Every command except ``replay`` writes ``manifest-<command>.json`` next to its
outputs: the resolved config and its sha256, the seed, library versions, and
sha256 digests of every input and output file.

Exit codes: 0 success, 2 configuration or validation error, 3 I/O or
transport error, 4 numerical error, 1 replay mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from . import dataprep as dp
from .config import RunConfig
from .errors import AaeError, ConfigError, CredentialError, NumericalError, StorageError, TransportError
from .inference import (
    SCENARIO_POLLUTANTS, ScenarioConfig, evaluate, forecast, simulate_scenario, write_eval_json,
    write_predictions_csv,
)
from .schema import FEATURE_NAMES, PHYSIO_NAMES, indices
from .synthgen import generate_cohort

log = logging.getLogger("exposure_aae")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3, 4
MANIFEST_VERSION = 1


# -- helpers ------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _need_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise StorageError(f"{what} {p} does not exist or is not a file")
    return p


def _need_dir(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"{what} is required")
    p = Path(path)
    if not p.is_dir():
        raise StorageError(f"{what} {p} does not exist or is not a directory")
    return p


def _out_dir(path) -> Path:
    if path is None:
        raise ConfigError("an output directory is required (--out or paths.out_dir)")
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create output directory {p}: {exc}") from exc
    if not os.access(p, os.W_OK):
        raise StorageError(f"output directory {p} is not writable")
    return p


def _write_json(path, body) -> None:
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _load_prepared(data_dir: Path, scaler=None):
    """features.csv + scaler.json from a ``prep`` directory; ``scaler`` overrides the stored one."""
    feats = _need_file(data_dir / "features.csv", "prepared features")
    frame = pd.read_csv(feats)
    frame["timestamp"] = pd.to_datetime(frame["timestamp"], utc=True, format="ISO8601")
    frame["participant_id"] = frame["participant_id"].astype(str)
    if scaler is None:
        scaler = dp.ScalerParams.load(_need_file(data_dir / "scaler.json", "scaler"))
    return frame, scaler, [feats, data_dir / "scaler.json"]


def _part(frame: pd.DataFrame, name: str, scaler) -> pd.DataFrame:
    if "split" not in frame.columns:
        raise ConfigError("features.csv has no split column; run prep first")
    part = frame[frame["split"] == name].drop(columns="split").reset_index(drop=True)
    if part.empty:
        raise ConfigError(f"split {name!r} is empty; available: {sorted(frame['split'].unique())}")
    return dp.transform(part, scaler)


def segments(frame: pd.DataFrame, horizon: int):
    """Non-overlapping forecast targets: 7 conditioning levels then ``horizon`` predicted ones.

    Returns (series [N, 7 + horizon, F], target timestamps [N, horizon], ids).
    """
    length = 7 + horizon
    data, stamps, ids = [], [], []
    for (pid, period), ts, values in dp.group_arrays(frame):
        for start in range(0, len(values) - length + 1, horizon):
            data.append(values[start : start + length])
            stamps.append([t.strftime("%Y-%m-%dT%H:%M:%SZ") for t in ts.iloc[start + 7 : start + length]])
            ids.append(f"{pid}/{period}/{start}")
    if not data:
        raise ConfigError(f"no group is long enough for a horizon of {horizon}")
    return np.stack(data), np.array(stamps, dtype=object), ids


def whole_groups(frame: pd.DataFrame):
    """Every group of ``frame`` truncated to the shortest group length."""
    groups = [values for _, _, values in dp.group_arrays(frame)]
    n = min(len(g) for g in groups)
    if n < 8:
        raise ConfigError(f"groups need at least 8 levels for a scenario, shortest has {n}")
    return np.stack([g[:n] for g in groups])


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args, cfg: RunConfig, io: dict) -> None:
    out = _out_dir(args.out or cfg["paths.out_dir"])
    raw, truth = generate_cohort(cfg.generator())
    dp.write_frame(raw, out / "raw.csv")
    truth.save(out / "ground_truth.json")
    io["outputs"] += [out / "raw.csv", out / "ground_truth.json"]
    br = raw["br_avg"]
    print(f"rows={len(raw)} participants={raw['participant_id'].nunique()} "
          f"br_avg=[{br.min():.2f}, {br.max():.2f}] mean={br.mean():.3f}")


def cmd_prep(args, cfg: RunConfig, io: dict) -> None:
    src = _need_file(args.input or cfg["paths.data_dir"], "--input")
    out = _out_dir(args.out or cfg["paths.out_dir"])
    io["inputs"].append(src)
    prep_cfg = cfg.prep()
    if args.split:
        fractions = tuple(float(x) for x in args.split.split(","))
        prep_cfg = dp.PrepConfig(**{**prep_cfg.__dict__, "split_fractions": fractions})
    prepared = dp.prepare(dp.read_records(src), prep_cfg)
    dp.write_frame(prepared.features, out / "features.csv")
    prepared.scaler.save(out / "scaler.json")
    _write_json(out / "prep_summary.json", prepared.counts)
    io["outputs"] += [out / "features.csv", out / "scaler.json", out / "prep_summary.json"]
    c = prepared.counts
    print(f"rows={c['rows']} windows={c['windows']} temperature_capped={c['temperature_capped']} "
          f"br_replaced={c['br_replaced']}")


def _train_data(frame, scaler, cfg):
    from .training import make_train_data

    val = frame[frame["split"] == "validation"]
    return make_train_data(_part(frame, "train", scaler),
                           dp.transform(val.drop(columns="split"), scaler) if len(val) else None,
                           rollout_depth=cfg["train.rollout_depth"])


def cmd_train(args, cfg: RunConfig, io: dict) -> None:
    from .training import save_checkpoint, train

    data_dir = _need_dir(args.data or cfg["paths.data_dir"], "--data")
    out = _out_dir(args.out or cfg["paths.out_dir"])
    frame, scaler, inputs = _load_prepared(data_dir)
    io["inputs"] += inputs
    if args.epochs:
        cfg.set_pairs([f"train.epochs={args.epochs}"])
    data = _train_data(frame, scaler, cfg)
    params, report = train(data, cfg.train(verbose=cfg["log_level"] == "DEBUG"), cfg.hyperparams(), scaler=scaler)
    save_checkpoint(params, out / "model.ckpt", scaler=scaler)
    report.save_json(out / "train_report.json", timings=False)
    report.save_csv(out / "train_report.csv", timings=False)
    io["outputs"] += [out / "model.ckpt", out / "train_report.json", out / "train_report.csv"]
    io["timing"]["train_seconds"] = report.wall_time
    print(f"epochs={len(report.epochs)} initial_rec={report.initial_train_rec:.6g} "
          f"final_rec={report.final_train_rec:.6g} best_epoch={report.best_epoch} val_mse={report.final_val_mse}")


def _test_mse(model, frame: pd.DataFrame) -> float:
    from .training import reconstruction_mse

    return reconstruction_mse(model, dp.build_windows(frame).data)


def cmd_finetune(args, cfg: RunConfig, io: dict) -> None:
    from .training import DEFAULT_FREEZE, checkpoint_scaler, fine_tune, load_checkpoint, make_train_data, \
        save_checkpoint

    ckpt = _need_file(args.checkpoint or cfg["paths.checkpoint"], "--checkpoint")
    data_dir = _need_dir(args.data or cfg["paths.data_dir"], "--data")
    out = _out_dir(args.out or cfg["paths.out_dir"])
    base = load_checkpoint(ckpt)
    # personal data is scaled into the pretrained model's units
    scaler = checkpoint_scaler(ckpt)
    frame, scaler, inputs = _load_prepared(data_dir, scaler)
    io["inputs"] += [ckpt] + inputs
    overrides = {"train.freeze_mask": list(cfg["train.freeze_mask"]) or list(DEFAULT_FREEZE)}
    if args.epochs:
        overrides["train.epochs"] = args.epochs
    cfg.update(overrides)
    train_part, test_part = _part(frame, "train", scaler), _part(frame, "test", scaler)
    # no validation part: the best epoch is picked on training loss so the test split stays unseen
    data = make_train_data(train_part, None, rollout_depth=cfg["train.rollout_depth"])
    tuned, report = fine_tune(base, data, cfg.train(verbose=cfg["log_level"] == "DEBUG"), scaler=scaler)
    save_checkpoint(tuned, out / "finetuned.ckpt", scaler=scaler)
    report.save_json(out / "finetune_report.json", timings=False)
    report.save_csv(out / "finetune_report.csv", timings=False)
    before, after = _test_mse(base, test_part), _test_mse(tuned, test_part)
    _write_json(out / "finetune_eval.json", {"pretrained_test_mse": before, "finetuned_test_mse": after,
                                             "trainable": list(report.trainable)})
    io["outputs"] += [out / "finetuned.ckpt", out / "finetune_report.json", out / "finetune_report.csv",
                      out / "finetune_eval.json"]
    io["timing"]["train_seconds"] = report.wall_time
    print(f"pretrained_test_mse={before:.6g} finetuned_test_mse={after:.6g}")


def _model_and_data(args, cfg, io):
    from .training import checkpoint_scaler, load_checkpoint

    ckpt = _need_file(args.checkpoint or cfg["paths.checkpoint"], "--checkpoint")
    data_dir = _need_dir(args.data or cfg["paths.data_dir"], "--data")
    model = load_checkpoint(ckpt)
    frame, scaler, inputs = _load_prepared(data_dir, checkpoint_scaler(ckpt))
    io["inputs"] += [ckpt] + inputs
    return model, _part(frame, args.split, scaler), scaler


def cmd_predict(args, cfg: RunConfig, io: dict) -> None:
    out = _out_dir(args.out or cfg["paths.out_dir"])
    model, part, scaler = _model_and_data(args, cfg, io)
    series, stamps, ids = segments(part, args.horizon)
    result = forecast(model, series, args.horizon, cfg.inpaint(), scaler)
    actual = series[:, 7:]
    write_predictions_csv(out / "predictions.csv", stamps, actual, result.scaled, scaler, FEATURE_NAMES, ids)
    free = indices(PHYSIO_NAMES)
    ev = evaluate(result.scaled[..., free], actual[..., free], PHYSIO_NAMES)
    body = ev.to_json()
    body.update({"horizon": args.horizon, "n_series": len(ids), "converged_fraction": float(result.converged.mean()),
                 "max_iterations_used": int(result.iterations.max())})
    _write_json(out / "eval.json", body)
    io["outputs"] += [out / "predictions.csv", out / "eval.json"]
    print(f"series={len(ids)} horizon={args.horizon} mse={ev.mse:.6g} "
          f"br_avg_mse={ev.per_feature_mse['br_avg']:.6g} converged={result.converged.mean():.3f}")


def cmd_simulate(args, cfg: RunConfig, io: dict) -> None:
    out = _out_dir(args.out or cfg["paths.out_dir"])
    model, part, scaler = _model_and_data(args, cfg, io)
    scenario = cfg.scenario()
    if args.factor is not None:
        names = args.pollutant or list(SCENARIO_POLLUTANTS)
        scenario = ScenarioConfig({**scenario.factors, **{p: args.factor for p in names}},
                                  scenario.clamp_pollutants, scenario.linked)
    series = whole_groups(part)
    res = simulate_scenario(model, series, scenario, scaler, config=cfg.inpaint())
    body = res.to_json()
    body["horizon"] = int(series.shape[1] - 7)
    _write_json(out / "scenario.json", body)
    io["outputs"].append(out / "scenario.json")
    print(f"br_delta_pct={res.br_delta_pct:.4f} hr_delta_pct={res.hr_delta_pct:.4f} n_windows={res.n_windows}")


def _read_table(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: unreadable CSV: {exc}") from exc


def cmd_evaluate(args, cfg: RunConfig, io: dict) -> None:
    out = _out_dir(args.out or cfg["paths.out_dir"])
    pred_path = _need_file(args.predicted, "--predicted")
    pred = _read_table(pred_path)
    io["inputs"].append(pred_path)
    if args.actual is None:
        # a predictions.csv carries both columns
        if not {"actual_scaled", "predicted_scaled", "feature"} <= set(pred.columns):
            raise ConfigError("--actual is required unless --predicted is a predictions.csv")
        if args.columns:
            pred = pred[pred["feature"].isin(args.columns)]
        feats = sorted(pred["feature"].unique())
        wide = lambda col: pred.pivot_table(index=["series", "timestamp"], columns="feature", values=col)[feats]
        p, a = wide("predicted_scaled").to_numpy(), wide("actual_scaled").to_numpy()
    else:
        act_path = _need_file(args.actual, "--actual")
        act = _read_table(act_path)
        io["inputs"].append(act_path)
        feats = args.columns or [c for c in FEATURE_NAMES if c in pred.columns and c in act.columns]
        missing = [c for c in feats if c not in pred.columns or c not in act.columns]
        if missing or not feats:
            raise ConfigError(f"columns missing from an input: {missing or 'no shared feature columns'}")
        if len(pred) != len(act):
            raise ConfigError(f"row counts differ: {len(pred)} predicted vs {len(act)} actual")
        p, a = pred[feats].to_numpy(dtype=float), act[feats].to_numpy(dtype=float)
    ev = evaluate(p, a, feats)
    write_eval_json(ev, out / "eval.json")
    io["outputs"].append(out / "eval.json")
    print(f"mse={ev.mse:.6g} r2_listing={ev.r2_listing} r2_standard={ev.r2_standard}")


def cmd_ingest(args, cfg: RunConfig, io: dict) -> None:
    from .ingest import ingest_records

    src = _need_file(args.records, "--records")
    fixtures = args.fixtures or cfg["paths.fixtures"]
    if fixtures is not None:
        _need_dir(fixtures, "--fixtures")
    out = _out_dir(args.out or cfg["paths.out_dir"])
    records = pd.read_csv(src)
    missing = [c for c in ("timestamp", "lat", "lon") if c not in records.columns]
    if missing:
        raise ConfigError(f"{src}: missing column(s) {', '.join(missing)}")
    records["timestamp"] = pd.to_datetime(records["timestamp"], utc=True, format="ISO8601")
    io["inputs"].append(src)
    joined = ingest_records(records, cfg.api(fixtures), cfg["ingest.max_distance_m"],
                            pd.Timedelta(minutes=cfg["ingest.max_dt_minutes"]))
    dp.write_frame(joined, out / "ingested.csv")
    io["outputs"].append(out / "ingested.csv")
    print(f"records={len(joined)} matched={int(joined['env_matched'].sum())} "
          f"mode={'fixtures' if fixtures else 'live'}")


COMMANDS = {
    "gen-data": cmd_gen_data, "prep": cmd_prep, "train": cmd_train, "finetune": cmd_finetune,
    "predict": cmd_predict, "simulate": cmd_simulate, "evaluate": cmd_evaluate, "ingest": cmd_ingest,
}


# -- manifest and replay ------------------------------------------------------

def versions() -> dict:
    return {"exposure_aae": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "pandas": pd.__version__}


def _digests(paths) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                out[str(f)] = sha256_file(f)
        elif p.is_file():
            out[str(p)] = sha256_file(p)
    return out


def write_manifest(path, command: str, args: argparse.Namespace, cfg: RunConfig, io: dict) -> dict:
    body = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "args": {k: v for k, v in vars(args).items() if k not in ("func", "config", "set")},
        "config": cfg.tree(),
        "config_sha256": cfg.digest(),
        "seed": cfg["seed"],
        "versions": versions(),
        "inputs": _digests(io["inputs"]),
        "outputs": _digests(io["outputs"]),
        "timing": io["timing"],
    }
    _write_json(path, body)
    return body


def cmd_replay(args) -> int:
    path = _need_file(args.manifest, "manifest")
    try:
        body = json.loads(path.read_text())
        command, stored = body["command"], body["args"]
        cfg = RunConfig.from_tree(body["config"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: not a manifest: {exc}") from exc
    if command not in COMMANDS:
        raise ConfigError(f"{path}: unknown command {command!r}")
    ns = argparse.Namespace(**stored)
    old_out = Path(stored.get("out") or body["config"]["paths"]["out_dir"])
    if args.out:
        ns.out = args.out
    io = {"inputs": [], "outputs": [], "timing": {}}
    COMMANDS[command](ns, cfg, io)
    new_out = Path(ns.out or cfg["paths.out_dir"])
    expected = {str(Path(k).relative_to(old_out)) if Path(k).is_relative_to(old_out) else k: v
                for k, v in body["outputs"].items()}
    got = {str(Path(k).relative_to(new_out)) if Path(k).is_relative_to(new_out) else k: v
           for k, v in _digests(io["outputs"]).items()}
    bad = sorted(k for k in expected if got.get(k) != expected[k])
    for k in bad:
        print(f"MISMATCH {k}")
    print(f"replay {command}: {len(expected) - len(bad)}/{len(expected)} outputs identical")
    return EXIT_MISMATCH if bad else EXIT_OK


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exposure-aae", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    common.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    add("gen-data", "generate a synthetic cohort")
    p = add("prep", "clean, encode, split and scale raw records")
    p.add_argument("--input", help="raw records CSV")
    p.add_argument("--split", help="comma-separated chronological split fractions, e.g. 0.8,0.2")
    p = add("train", "train the adversarial autoencoder")
    p.add_argument("--data", help="directory written by prep")
    p.add_argument("--epochs", type=int)
    p = add("finetune", "fine-tune the last two decoder layers on personal data")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="prep directory with train/test splits")
    p.add_argument("--epochs", type=int)
    for name, text in (("predict", "forecast held-out series by inpainting"),
                       ("simulate", "pollution scenario simulation")):
        p = add(name, text)
        p.add_argument("--checkpoint")
        p.add_argument("--data", help="directory written by prep")
        p.add_argument("--split", default="test")
        if name == "predict":
            p.add_argument("--horizon", type=int, default=1)
        else:
            p.add_argument("--factor", type=float, help="multiplicative factor for the chosen pollutants")
            p.add_argument("--pollutant", action="append", choices=SCENARIO_POLLUTANTS,
                           help="pollutant to scale (repeatable; default all)")
    p = add("evaluate", "MSE and R^2 between two CSV files")
    p.add_argument("--predicted", required=True)
    p.add_argument("--actual")
    p.add_argument("--columns", nargs="+")
    p = add("ingest", "enrich records with air quality and weather")
    p.add_argument("--records", required=True, help="CSV with timestamp, lat, lon")
    p.add_argument("--fixtures", help="offline fixture directory (no network)")
    p = sub.add_parser("replay", help="rerun a manifest and compare output digests")
    p.add_argument("manifest")
    p.add_argument("--out", help="write replayed outputs here instead of the original directory")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.set_pairs(args.set)
    flat = {}
    if args.seed is not None:
        flat["seed"] = args.seed
    if args.log_level:
        flat["log_level"] = args.log_level
    if flat:
        cfg.update(flat)
    return cfg


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (StorageError, TransportError, CredentialError, OSError)):
        return EXIT_IO
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
            return cmd_replay(args)
        cfg = resolve_config(args)
        logging.basicConfig(level=cfg["log_level"], format="%(levelname)s %(name)s: %(message)s")
        io = {"inputs": [], "outputs": [], "timing": {}}
        COMMANDS[args.command](args, cfg, io)
        out = Path(args.out or cfg["paths.out_dir"])
        write_manifest(out / f"manifest-{args.command}.json", args.command, args, cfg, io)
        return EXIT_OK
    except (AaeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
