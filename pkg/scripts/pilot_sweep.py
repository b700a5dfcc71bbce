#!/usr/bin/env python3
"""Small grid over world and run settings, used to pick the toy defaults.

Each --world / --run entry is a ``key=value`` override; repeat a key with a
comma list to sweep it, e.g.

    python3 scripts/pilot_sweep.py --world feature_noise=0.2,0.3,0.5 --run lr=1e-3,3e-3 --seeds 0 1

Prints one CSV row per (setting, arm) with mean VQA-val accuracy and the
recognition metrics of the last evaluation.
"""
import argparse
import csv
import itertools
import sys
from dataclasses import replace

import numpy as np

from svlr import config
from svlr.synthworld import WorldSpec, generate
from svlr.trainer import RunConfig, encode_corpus, run_arm


def _grid(pairs):
    keys = [p.split("=", 1)[0] for p in pairs]
    values = [p.split("=", 1)[1].split(",") for p in pairs]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)] or [{}]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--world", nargs="*", default=[])
    ap.add_argument("--run", nargs="*", default=[])
    ap.add_argument("--arms", default="vqa_only,joint_multitask,joint_svlr")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()

    w = csv.writer(sys.stdout)
    w.writerow(["world", "run", "arm", "vqa_val_acc", "obj_top1", "atr_acc"])
    for wk in _grid(args.world):
        spec = config.apply_pairs(WorldSpec(), wk)
        for rk in _grid(args.run):
            base = config.apply_pairs(RunConfig(), rk)
            rows = {a: [] for a in args.arms.split(",")}
            for seed in args.seeds:
                corpus = generate(replace(spec, seed=seed))
                enc = encode_corpus(corpus)
                for arm in rows:
                    m = run_arm(replace(base, arm=arm, seed=seed, eval_every=base.steps), corpus, enc=enc).metrics[-1]
                    rows[arm].append((m["vqa_val_acc"], m["obj_top1"], m["atr_acc"]))
            for arm, vals in rows.items():
                mean = np.mean(vals, axis=0)
                w.writerow([";".join(f"{k}={v}" for k, v in wk.items()), ";".join(f"{k}={v}" for k, v in rk.items()),
                            arm, *(f"{x:.4f}" for x in mean)])
                sys.stdout.flush()


if __name__ == "__main__":
    main()
