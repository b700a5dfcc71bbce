#!/usr/bin/env python3
"""Train joint_svlr on the default world and print the nearest neighbours of
each planted synonym and its category word, in base space and learned space."""
import argparse
from dataclasses import replace

from svlr.evalkit import nn_probe
from svlr.synthworld import WorldSpec, generate
from svlr.trainer import RunConfig, run_arm


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--k", type=int, default=3)
    args = ap.parse_args()

    corpus = generate(replace(WorldSpec(), seed=args.seed))
    model = run_arm(RunConfig(arm="joint_svlr", seed=args.seed, eval_every=RunConfig.steps), corpus).model
    words = [w for pair in corpus.synonyms.items() for w in pair]
    res = nn_probe(model, words, k=args.k)
    for w in words:
        for space in ("base", "svlr"):
            nbrs = ", ".join(f"{n} {d:.3f}" for n, d in res[space][w])
            print(f"{w:12s} {space:5s} {nbrs}")


if __name__ == "__main__":
    main()
