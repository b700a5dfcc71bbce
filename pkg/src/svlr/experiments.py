"""The arm comparison on the synthetic world: every arm, several seeds,
plus the zero-shot check and the frequency-binned transfer grid. One call
produces everything the scripts and the acceptance tests need."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evalkit
from .synthworld import WorldSpec, generate
from .trainer import RunConfig, encode_corpus, run_arm

log = logging.getLogger(__name__)

MAIN_ARMS = ("vqa_only", "joint_multitask", "joint_svlr")


@dataclass
class Study:
    seeds: list[int]
    vqa_acc: dict[str, list[float]] = field(default_factory=dict)    # arm -> per-seed val accuracy
    zero_shot_acc: list[float] = field(default_factory=list)
    chance: float = 0.0
    grids: list[evalkit.TransferGrid] = field(default_factory=list)
    seconds: dict[str, float] = field(default_factory=dict)

    def mean(self, arm: str) -> float:
        return float(np.mean(self.vqa_acc[arm]))

    def cell_deltas(self, qa_freq: float, rec_freq: float) -> list[float]:
        """Per-seed mean delta of the grid cell holding classes with these frequencies."""
        out = []
        for g in self.grids:
            cell = g.cell_of(qa_freq, rec_freq)
            if cell is not None:
                out.append(cell.delta)
        return out

    def summary(self) -> str:
        lines = [f"seeds {self.seeds}"]
        for arm, v in self.vqa_acc.items():
            lines.append(f"{arm:16s} mean {np.mean(v):.4f}  per-seed {[round(x, 4) for x in v]}")
        if self.zero_shot_acc:
            lines.append(f"{'zero_shot':16s} mean {np.mean(self.zero_shot_acc):.4f}  chance {self.chance:.4f}")
        return "\n".join(lines)


def run_study(seeds=(0, 1, 2, 3, 4), base: RunConfig | None = None, spec: WorldSpec | None = None,
              arms=MAIN_ARMS, zero_shot: bool = True, grid: bool = True, out_dir=None) -> Study:
    """Train each arm per seed on the default toy world.

    The genome-only model serves twice: scored with the zero-shot rule for the
    zero-shot check, and as the baseline of the transfer grid. The grid's joint
    model is joint_svlr trained with the transfer-to-recognition weights
    (direction "vr"), since the grid measures recognition gains.
    """
    base = base or RunConfig()
    spec = spec or WorldSpec()
    study = Study(list(seeds), {a: [] for a in arms})
    need_genome = zero_shot or grid
    for seed in seeds:
        corpus = generate(replace(spec, seed=seed))
        enc = encode_corpus(corpus)
        study.chance = 1.0 / spec.options_per_question
        for arm in arms:
            t0 = time.perf_counter()
            cfg = replace(base, arm=arm, seed=seed, eval_every=base.steps)
            sub = Path(out_dir) / f"{arm}_seed{seed}" if out_dir else None
            arts = run_arm(cfg, corpus, sub, enc=enc)
            study.vqa_acc[arm].append(arts.metrics[-1]["vqa_val_acc"])
            study.seconds[arm] = study.seconds.get(arm, 0.0) + time.perf_counter() - t0
            log.info("seed %d %s val %.4f", seed, arm, study.vqa_acc[arm][-1])
        if need_genome:
            t0 = time.perf_counter()
            cfg = replace(base, arm="genome_only", seed=seed, eval_every=base.steps)
            sub = Path(out_dir) / f"genome_only_seed{seed}" if out_dir else None
            genome = run_arm(cfg, corpus, sub, enc=enc).model
            study.seconds["genome_only"] = study.seconds.get("genome_only", 0.0) + time.perf_counter() - t0
            if zero_shot:
                study.zero_shot_acc.append(evalkit.accuracy_on_batch(genome, enc.qa["val"], zero_shot=True))
            if grid:
                t0 = time.perf_counter()
                cfg = replace(base, arm="joint_svlr", direction="vr", seed=seed, eval_every=base.steps)
                sub = Path(out_dir) / f"joint_svlr_vr_seed{seed}" if out_dir else None
                joint = run_arm(cfg, corpus, sub, enc=enc).model
                study.seconds["joint_svlr_vr"] = study.seconds.get("joint_svlr_vr", 0.0) + time.perf_counter() - t0
                study.grids.append(evalkit.transfer_grid(genome, joint, corpus))
    return study
