"""One test per acceptance criterion. Each prints a PASS/FAIL line; the lines
are repeated in the terminal summary (see conftest.py)."""
import time

import numpy as np
import pytest

import oracles as O
from helpers import random_instance, tiny_encoded
from svlr import autodiff as ad
from svlr.evalkit import spearman
from svlr.experiments import run_study
from svlr.gradcheck import run_suite
from svlr.recognition import attribute_loss, hypernym_closure, object_loss
from svlr.synthworld import WorldSpec
from svlr.trainer import RunConfig, lr_at, run_arm, subset_qa, subset_regions
from svlr.vqa import (answer_loss, attention_scores, extract_mentions, forward, image_representation,
                      zero_shot_score)

VERDICTS: list[str] = []


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)


# ---------------------------------------------------------- 1: gradient suite

def test_c1_gradient_suite():
    t0 = time.perf_counter()
    failures, total = [], 0
    for seed in range(20):
        for r in run_suite(seed):
            total += 1
            if not r.ok:
                failures.append(f"seed {seed} {r.name} err {r.max_err:.3g}")
    secs = time.perf_counter() - t0
    ok = not failures and secs < 120
    verdict(1, ok, f"{total} checks over 20 seeds, {len(failures)} failed, {secs:.1f}s")
    assert not failures, failures[:10]
    assert secs < 120


# --------------------------------------------------------- 2: oracle equality

def test_c2_oracle_equivalence():
    t0 = time.perf_counter()
    worst = {k: 0.0 for k in ("object_loss", "attribute_loss", "answer_loss", "attention_scores",
                              "image_representation", "zero_shot_score")}
    for i in range(100):
        mode = "svlr" if i % 4 else "multitask"
        corpus, m, rng = random_instance(i, mode)
        enc = tiny_encoded(i % 5)
        rb = subset_regions(enc.recognition["train"], rng.choice(30, 6, replace=False))
        qb = subset_qa(enc.qa["train"], rng.choice(12, 4, replace=False))
        worst["object_loss"] = max(worst["object_loss"], abs(object_loss(m, rb).item() - O.object_loss(m, rb)))
        worst["attribute_loss"] = max(worst["attribute_loss"],
                                      abs(attribute_loss(m, rb).item() - O.attribute_loss(m, rb)))
        with ad.no_grad():
            S = forward(m, qb, train=False).scores.data
        ref = O.answer_loss_from_scores(S.tolist(), qb.correct.tolist())
        worst["answer_loss"] = max(worst["answer_loss"], abs(answer_loss(m, qb, 1.0, train=False).item() - ref))

        q = corpus.qa["train"][int(rng.integers(len(corpus.qa["train"])))]
        img = corpus.images[q.image_id]
        o = int(rng.integers(len(q.options)))
        nouns, adjs = extract_mentions(q, o)
        a = attention_scores(m, img.features, nouns, adjs)
        worst["attention_scores"] = max(worst["attention_scores"],
                                        np.abs(a.weights - O.attention(m, img.features, nouns, adjs)).max())
        v = image_representation(m, img.features, a)
        worst["image_representation"] = max(worst["image_representation"],
                                            np.abs(v - O.image_representation(m, img.features, a.weights)).max())
        worst["zero_shot_score"] = max(worst["zero_shot_score"],
                                       abs(zero_shot_score(m, q, o, img) - O.zero_shot_score(m, q, o, img)))
    secs = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-6 and secs < 60
    verdict(2, ok, "max abs err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {secs:.1f}s")
    assert max(worst.values()) <= 1e-6, worst
    assert secs < 60


# ------------------------------------------------ 3-5: the multi-seed study

@pytest.fixture(scope="module")
def study():
    t0 = time.perf_counter()
    s = run_study(seeds=(0, 1, 2, 3, 4))
    s.seconds["total"] = time.perf_counter() - t0
    print(s.summary())
    return s


@pytest.mark.slow
def test_c3_transfer_direction(study):
    svlr, multi, vqa = study.mean("joint_svlr"), study.mean("joint_multitask"), study.mean("vqa_only")
    secs = study.seconds["total"]
    ok = svlr >= multi >= vqa and svlr - vqa >= 0.02 and secs < 900
    verdict(3, ok, f"joint_svlr {svlr:.4f} >= joint_multitask {multi:.4f} >= vqa_only {vqa:.4f}, "
                   f"gap {100 * (svlr - vqa):.1f} pts, {secs:.0f}s")
    assert svlr >= multi >= vqa
    assert svlr - vqa >= 0.02
    assert secs < 900


@pytest.mark.slow
def test_c4_zero_shot(study):
    acc, chance = float(np.mean(study.zero_shot_acc)), study.chance
    secs = study.seconds["genome_only"]
    ok = acc >= 1.5 * chance and secs < 300
    verdict(4, ok, f"zero-shot {acc:.4f} vs 1.5 x chance {1.5 * chance:.4f}, {secs:.0f}s")
    assert acc >= 1.5 * chance
    assert secs < 300


@pytest.mark.slow
def test_c5_transfer_grid(study):
    g0 = study.grids[0]
    w = WorldSpec()
    rare = study.cell_deltas(qa_freq=w.planted_common_qa, rec_freq=w.planted_rare)
    common = study.cell_deltas(qa_freq=w.planted_common_qa, rec_freq=w.planted_common_rec)
    assert len(rare) == 5 and len(common) == 5, g0.to_csv()
    mr, mc = float(np.mean(rare)), float(np.mean(common))
    ok = mr > 0 and abs(mc) < abs(mr)
    verdict(5, ok, f"rare-rec/common-qa delta {mr:+.4f}, common-both delta {mc:+.4f}")
    assert mr > 0
    assert abs(mc) < abs(mr)


# ---------------------------------------------------------- 6: invariants

def test_c6_invariants():
    t0 = time.perf_counter()
    checks = {}
    corpus, m, rng = random_instance(0)
    X = corpus.images[corpus.qa["train"][0].image_id].features
    w = attention_scores(m, X, {"dog"}, {"red"}).weights
    checks["attention normalized"] = abs(w.sum() - 1) < 1e-12 and w.min() >= 0
    rb = subset_regions(tiny_encoded(0).recognition["train"], np.arange(10))
    qb = subset_qa(tiny_encoded(0).qa["train"], np.arange(6))
    checks["losses nonnegative"] = min(object_loss(m, rb).item(), attribute_loss(m, rb).item(),
                                       answer_loss(m, qb).item()) >= 0
    onto = corpus.ontology
    parents = {c: list(onto.parents.get(c, ())) for c in onto.objects}
    checks["closure = reachability"] = all(
        hypernym_closure([c], onto) == O.closure_by_reachability([c], parents) for c in onto.objects)
    checks["lr schedule"] = (lr_at(0), lr_at(24000), lr_at(48000)) == (1e-3, 5e-4, 2.5e-4)
    a, b = rng.random(196), rng.random(196)
    checks["spearman"] = (spearman(a, b) == spearman(b, a) and spearman(a, a) == 1.0
                          and spearman(a, -a) == -1.0)
    cfg = RunConfig(arm="joint_svlr", steps=20, eval_every=10, hidden=5, embed=4, bimodal=6,
                    region_batch=8, question_batch=4)
    checks["bit-identical reruns"] = run_arm(cfg, corpus).metrics_csv() == run_arm(cfg, corpus).metrics_csv()
    secs = time.perf_counter() - t0
    bad = [k for k, v in checks.items() if not v]
    verdict(6, not bad and secs < 60, f"{len(checks) - len(bad)}/{len(checks)} invariants hold, {secs:.1f}s")
    assert not bad, bad
    assert secs < 60


# ------------------------------------------------------ 7: grad isolation

def test_c7_gradient_isolation():
    t0 = time.perf_counter()
    problems = []
    for i in range(10):
        for mode in ("svlr", "multitask"):
            corpus, m, rng = random_instance(i, mode)
            rb = subset_regions(tiny_encoded(i % 5).recognition["train"], rng.choice(30, 8, replace=False))
            m.zero_grad()
            ad.backward(object_loss(m, rb))
            if any(p.grad is not None for p in m.group("fa").values()):
                problems.append(f"{mode} {i}: object loss reached f_a")
            m.zero_grad()
            ad.backward(attribute_loss(m, rb))
            if any(p.grad is not None for p in m.group("fo").values()):
                problems.append(f"{mode} {i}: attribute loss reached f_o")
            if mode == "multitask":
                m.zero_grad()
                ad.backward(ad.add(object_loss(m, rb), attribute_loss(m, rb)))
                if any(p.grad is not None for p in m.group("g").values()):
                    problems.append(f"{i}: recognition loss reached g in multitask mode")
    secs = time.perf_counter() - t0
    verdict(7, not problems and secs < 30, f"{len(problems)} leaks over 20 models, {secs:.1f}s")
    assert not problems, problems
    assert secs < 30
