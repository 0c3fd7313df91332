"""Shared setup for the ablation scripts: an 8-variable synthetic corpus and a small base model."""

import argparse

from periodnet.ablation import ablation_run, format_table, write_results
from periodnet.data import Dataset, synth_series
from periodnet.model import ModelConfig
from periodnet.train import TrainConfig


def run(arms, description: str, default_out: str, T: int = 24) -> None:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--out", default=default_out)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-steps", type=int, default=300)
    ap.add_argument("--noise", type=float, default=0.1)
    args = ap.parse_args()

    frame = synth_series(1200, ((8, 1.0, 0.0), (24, 0.6, 0.0)), noise_std=args.noise, seed=args.seed, n_vars=8)
    ds = Dataset.from_frame(frame)
    base = ModelConfig(C=8, L=96, T=T, D=16, P=8)
    tcfg = TrainConfig(max_epochs=20, max_steps=args.max_steps, seed=args.seed)
    rows = ablation_run(arms, base, tcfg, ds, model_seed=args.seed)
    meta = write_results(rows, args.out, {"seed": args.seed, "base_config": base.to_dict()})
    print(format_table(rows))
    print(f"results {args.out}\nmetadata {meta}")
