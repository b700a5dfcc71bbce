#!/usr/bin/env python3
"""Arm comparison on the default toy world.

Trains vqa_only, joint_multitask and joint_svlr per seed, scores the
genome-only model with the zero-shot rule, and builds the transfer grid.
Writes study.txt, arms.csv and grid_seed<k>.csv under --out.

    python3 scripts/run_study.py --out runs/study --seeds 0 1 2 3 4
"""
import argparse
import csv
import logging
from pathlib import Path

from svlr.experiments import MAIN_ARMS, run_study
from svlr.synthworld import WorldSpec
from svlr.trainer import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--steps", type=int, default=RunConfig.steps)
    ap.add_argument("--keep-runs", action="store_true", help="also write per-run checkpoints and metrics")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = RunConfig(steps=args.steps)
    study = run_study(seeds=args.seeds, base=base, out_dir=out / "runs" if args.keep_runs else None)

    spec = WorldSpec()
    rare = study.cell_deltas(spec.planted_common_qa, spec.planted_rare)
    common = study.cell_deltas(spec.planted_common_qa, spec.planted_common_rec)
    lines = [study.summary(),
             f"rare-rec/common-qa delta per seed {[round(x, 4) for x in rare]}",
             f"common-both delta per seed       {[round(x, 4) for x in common]}",
             "seconds " + ", ".join(f"{k} {v:.0f}" for k, v in study.seconds.items())]
    (out / "study.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))

    with open(out / "arms.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", *MAIN_ARMS, "zero_shot"])
        for i, seed in enumerate(study.seeds):
            w.writerow([seed, *(study.vqa_acc[a][i] for a in MAIN_ARMS), study.zero_shot_acc[i]])
    for seed, g in zip(study.seeds, study.grids):
        (out / f"grid_seed{seed}.csv").write_text(g.to_csv())


if __name__ == "__main__":
    main()
