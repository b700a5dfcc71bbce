from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import spearmanr

import oracles as O
from helpers import TINY, random_model, tiny_corpus
from svlr.evalkit import (GRID, SWEEP_THRESHOLDS, UndefinedCorrelationError, attention_sweep, box_mask,
                          center_baseline, nn_probe, probe_to_csv, rankdata, spearman, sweep_to_csv,
                          threshold_sweep, to_heatmap14, transfer_grid, vqa_accuracy)
from svlr.model import MissingWordError
from svlr.synthworld import generate

FULL = box_mask((0, 0, 14, 14))
LEFT, RIGHT = box_mask((0, 0, 14, 7)), box_mask((0, 7, 14, 14))

boxes = st.tuples(st.integers(0, 13), st.integers(0, 13)).flatmap(
    lambda rc: st.tuples(st.just(rc[0]), st.just(rc[1]), st.integers(rc[0] + 1, 14), st.integers(rc[1] + 1, 14)))


# ------------------------------------------------------------------ heatmaps

def test_heatmap_examples():
    np.testing.assert_allclose(to_heatmap14([1.0], [FULL]), np.full((14, 14), 1 / 196), atol=1e-15)
    h = to_heatmap14([0.75, 0.25], [LEFT, RIGHT])
    np.testing.assert_allclose(h[:, :7], 0.75 / 98, atol=1e-15)
    np.testing.assert_allclose(h[:, 7:], 0.25 / 98, atol=1e-15)
    with pytest.raises(ValueError):
        to_heatmap14([1.0], [np.zeros((14, 14), bool)])
    with pytest.raises(ValueError):
        to_heatmap14([1.0, 0.0], [FULL])


@given(st.lists(st.tuples(st.floats(0.01, 1.0), boxes), min_size=1, max_size=5))
def test_heatmap_matches_cell_loop(regions):
    w = [r[0] for r in regions]
    masks = [box_mask(r[1]) for r in regions]
    h = to_heatmap14(w, masks)
    assert h.shape == (GRID, GRID) and abs(h.sum() - 1) < 1e-12 and h.min() >= 0
    np.testing.assert_allclose(h, O.heatmap(w, masks), atol=1e-12)


# ----------------------------------------------------------------- spearman

def test_spearman_examples():
    a = np.arange(196.0).reshape(14, 14)
    assert spearman(a, a) == 1.0
    assert spearman(a, -a) == -1.0
    with pytest.raises(UndefinedCorrelationError):
        spearman(a, np.ones((14, 14)))
    assert rankdata([3.0, 1.0, 3.0, 2.0]).tolist() == [3.5, 1.0, 3.5, 2.0]


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=3, max_size=40))
def test_spearman_matches_references(pairs):
    a = np.array([p[0] for p in pairs], float)
    b = np.array([p[1] for p in pairs], float)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        with pytest.raises(UndefinedCorrelationError):
            spearman(a, b)
        return
    r = spearman(a, b)
    assert r == pytest.approx(spearman(b, a), abs=1e-12)
    assert r == pytest.approx(O.spearman_textbook(a, b), abs=1e-9)
    assert r == pytest.approx(spearmanr(a, b).statistic, abs=1e-9)
    assert -1.0 <= r <= 1.0


def test_center_baseline_shape():
    c = center_baseline()
    assert c.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(c, np.rot90(c), atol=1e-15)
    np.testing.assert_allclose(c, c.T, atol=1e-15)
    assert c[6, 6] == c.max() and c[0, 0] == c.min()


# -------------------------------------------------------------------- sweep

def _maps(rng, n):
    return [to_heatmap14(rng.random(3) + 0.01, [box_mask(b) for b in ((0, 0, 7, 14), (3, 3, 10, 10), (5, 0, 14, 9))])
            for _ in range(n)]


def test_sweep_thresholds_nest():
    rng = np.random.default_rng(0)
    refs, model = _maps(rng, 20), _maps(rng, 20)
    center = center_baseline()
    pts = threshold_sweep({"m": model}, refs, center, [-2.0, -0.1, 0.3, 1.0])
    assert pts[0].n == 0 and pts[0].means["m"] is None
    assert [p.n for p in pts] == sorted(p.n for p in pts)
    assert pts[-1].n == 20
    full = np.mean([spearman(m, r) for m, r in zip(model, refs)])
    assert pts[-1].means["m"] == pytest.approx(full, abs=1e-12)
    with pytest.raises(ValueError):
        threshold_sweep({"m": model[:3]}, refs, center, [1.0])


def test_sweep_csv_and_grid_of_thresholds():
    assert SWEEP_THRESHOLDS[0] == -0.4 and SWEEP_THRESHOLDS[-1] == 1.0 and len(SWEEP_THRESHOLDS) == 15
    assert "-0.0" not in [repr(t) for t in SWEEP_THRESHOLDS]
    corpus = tiny_corpus(0)
    pts = attention_sweep(random_model(corpus), corpus, limit=6)
    text = sweep_to_csv(pts).splitlines()
    assert text[0] == "threshold,n,center,model" and len(text) == 16
    assert pts[-1].n == 6


# -------------------------------------------------------------------- probe

def test_probe_excludes_self_and_ranks_everything():
    corpus = tiny_corpus(0)
    m = random_model(corpus)
    V = len(m.vocab.words)
    res = nn_probe(m, ["dog"], k=V - 1)
    for space in ("base", "svlr"):
        lst = res[space]["dog"]
        assert len(lst) == V - 1 and "dog" not in [w for w, _ in lst]
        d = [x for _, x in lst]
        assert d == sorted(d) and all(0 <= x <= 2 + 1e-12 for x in d)
    assert probe_to_csv(res).startswith("space,query,rank,neighbor,cosine_distance\n")
    with pytest.raises(MissingWordError):
        nn_probe(m, ["zebra-unicorn"])


def test_probe_distance_matches_loop():
    corpus = tiny_corpus(1)
    m = random_model(corpus)
    E = m.vocab.base - m.vocab.base.mean(axis=0)
    i = m.vocab.words.index("dog")
    for w, d in nn_probe(m, ["dog"], k=4)["base"]["dog"]:
        j = m.vocab.words.index(w)
        cos = O.dot(E[i], E[j]) / (O.dot(E[i], E[i]) * O.dot(E[j], E[j])) ** 0.5
        assert d == pytest.approx(1 - cos, abs=1e-12)


# ----------------------------------------------------------- transfer grid

def test_transfer_grid_identical_models_have_zero_delta():
    corpus = tiny_corpus(2)
    m = random_model(corpus)
    g = transfer_grid(m, m, corpus)
    assert all(cell.delta == 0.0 for cell in g.cells.values())
    assert sum(c.count for c in g.cells.values()) + len(g.excluded) == len(corpus.ontology.leaves)
    assert g.to_csv().startswith("qa_bin_lo,qa_bin_hi,rec_bin_lo,rec_bin_hi,n_classes,baseline_acc,delta\n")


def test_transfer_grid_records_unseen_classes():
    corpus = tiny_corpus(0)
    seen = {o for r in corpus.recognition["test"] for o in r.objects}
    g = transfer_grid(random_model(corpus), random_model(corpus, seed=9), corpus)
    assert set(g.excluded) == set(corpus.ontology.leaves) - seen


def test_transfer_grid_rejects_mismatched_models():
    a = tiny_corpus(0)
    b = generate(replace(TINY, n_families=3))
    with pytest.raises(ValueError):
        transfer_grid(random_model(a), random_model(b), a)


# ---------------------------------------------------------------- accuracy

def test_vqa_accuracy_with_oracle_and_constant_scorers():
    corpus = tiny_corpus(0)
    val = corpus.qa["val"]
    assert vqa_accuracy(None, corpus, predict_fn=lambda b: b.correct.copy())["overall"] == 1.0
    zero = vqa_accuracy(None, corpus, predict_fn=lambda b: np.zeros(len(b.correct), int))
    assert zero["overall"] == pytest.approx(np.mean([q.correct == 0 for q in val]))
    acc = vqa_accuracy(random_model(corpus), corpus)
    assert 0.0 <= acc["overall"] <= 1.0 and len(acc) > 1


@pytest.mark.slow
def test_planted_synonyms_are_mutual_nearest_after_joint_training():
    from svlr.synthworld import WorldSpec
    from svlr.trainer import RunConfig, run_arm

    corpus = generate(WorldSpec())
    m = run_arm(RunConfig(arm="joint_svlr", eval_every=3000), corpus).model
    for syn, word in corpus.synonyms.items():
        res = nn_probe(m, [syn, word], k=1)["svlr"]
        assert res[syn][0][0] == word and res[word][0][0] == syn
