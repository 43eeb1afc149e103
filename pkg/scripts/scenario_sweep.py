#!/usr/bin/env python3
"""Sweep pollution factors on held-out cohorts and compare with the generator oracle.

The model is driven with whole groups of fresh cohorts (same generator
settings, other seeds), scaled with the scaler stored in the checkpoint.

    python scripts/scenario_sweep.py model.ckpt --seeds 1,2 --factors 1.2,1.5,2.0
"""

import argparse

import numpy as np

from exposure_aae import dataprep as dp
from exposure_aae.inference import SCENARIO_POLLUTANTS, ScenarioConfig, simulate_scenario
from exposure_aae.synthgen import GeneratorConfig, generate_cohort, response_oracle
from exposure_aae.training import checkpoint_scaler, load_checkpoint


def floats(text):
    return [float(v) for v in text.split(",")]


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint")
    ap.add_argument("--seeds", default="1,2", help="comma-separated cohort seeds")
    ap.add_argument("--factors", type=floats, default=[1.2, 1.5, 2.0])
    ap.add_argument("--pollutant", action="append", choices=SCENARIO_POLLUTANTS,
                    help="pollutant to scale (repeatable; default pm2_5 and pm10)")
    return ap.parse_args(argv)


def held_out(seed, scaler):
    gen = GeneratorConfig(seed=seed)
    raw, truth = generate_cohort(gen)
    feats = dp.prepare(raw).features.drop(columns="split")
    groups = list(dp.group_arrays(dp.transform(feats, scaler)))
    n = min(len(v) for _, _, v in groups)
    series, rows = [], []
    for (pid, period), _, values in groups:
        series.append(values[:n])
        part = feats[(feats.participant_id == pid) & (feats.period == period)].sort_values("timestamp")
        rows.append(part.iloc[7:n].reset_index(drop=True))
    return gen, truth.baselines, np.stack(series), rows


def oracle_pct(gen, baselines, rows, factor):
    out = []
    for part in rows:
        base = response_oracle(part, gen, baselines)["br_star"].to_numpy()
        high = part.copy()
        high["pm2_5"] = high["pm2_5"] * factor
        out.append(100 * (response_oracle(high, gen, baselines)["br_star"].to_numpy() - base) / base)
    return float(np.mean(np.concatenate(out)))


def main(argv=None) -> None:
    args = parse_args(argv)
    model, scaler = load_checkpoint(args.checkpoint), checkpoint_scaler(args.checkpoint)
    if scaler is None:
        raise SystemExit("checkpoint carries no scaler; retrain with the current version")
    pollutants = args.pollutant or ["pm2_5", "pm10"]
    print("seed factor br_delta_pct hr_delta_pct oracle_br_pct")
    for seed in (int(s) for s in args.seeds.split(",")):
        gen, baselines, series, rows = held_out(seed, scaler)
        for f in args.factors:
            res = simulate_scenario(model, series, ScenarioConfig({p: f for p in pollutants}), scaler)
            print(f"{seed} {f:g} {res.br_delta_pct:.3f} {res.hr_delta_pct:.3f} {oracle_pct(gen, baselines, rows, f):.3f}",
                  flush=True)


if __name__ == "__main__":
    main()
