import numpy as np
import pytest

import oracles as O
from helpers import random_model, tiny_corpus, tiny_encoded
from svlr import autodiff as ad
from svlr.model import (CheckpointError, Dims, MissingCategoryError, MissingWordError, Model, Vocabulary,
                        class_vector, embed_region, embed_regions, embed_word, load_checkpoint,
                        save_checkpoint, xavier)
from svlr.recognition import attribute_loss, object_loss
from svlr.trainer import subset_regions


@pytest.fixture(scope="module")
def corpus():
    return tiny_corpus(0)


def test_embed_word_zero_inputs_give_zero(corpus):
    vocab = Vocabulary(corpus.vocab.words, corpus.vocab.pos, np.zeros_like(corpus.vocab.base))
    m = random_model(corpus)
    m.vocab = vocab
    m.params["g.b1"].data[:] = 0
    m.params["g.b2"].data[:] = 0
    assert np.all(embed_word(m, 0).data == 0)


def test_embed_word_deterministic_and_matches_loops(corpus):
    m = random_model(corpus)
    a, b = embed_word(m, "dog"), embed_word(m, "dog")
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_allclose(a.data, O.word_vec(m, m.vocab.id("dog")), atol=1e-12)


def test_embed_word_unknown(corpus):
    with pytest.raises(MissingWordError):
        embed_word(random_model(corpus), "unicorn")


def test_embedding_dims_agree(corpus):
    m = random_model(corpus)
    r = corpus.recognition["train"][0].features
    assert embed_word(m, 1).shape == embed_region(m, r, "object").shape == (m.dims.embed,)


def test_object_and_attribute_heads_are_disjoint(corpus):
    m = random_model(corpus)
    r = corpus.recognition["train"][0].features
    assert not np.allclose(embed_region(m, r, "object").data, embed_region(m, r, "attribute").data)
    assert not set(m.group("fo")) & set(m.group("fa"))


def test_identical_rows_in_train_mode_stay_finite(corpus):
    m = random_model(corpus)
    X = np.tile(corpus.recognition["train"][0].features, (5, 1))
    out = embed_regions(m, X, "object", train=True).data
    assert np.all(np.isfinite(out))


def test_eval_mode_ignores_other_batch_members(corpus):
    m = random_model(corpus)
    X = np.stack([s.features for s in corpus.recognition["train"][:6]])
    alone = embed_regions(m, X[:1], "attribute").data[0]
    together = embed_regions(m, X, "attribute").data[0]
    np.testing.assert_allclose(alone, together, atol=1e-12)   # BLAS blocking may differ in the last ulp


def test_region_embedding_matches_loops(corpus):
    m = random_model(corpus)
    X = np.stack([s.features for s in corpus.recognition["train"][:4]])
    for head in ("object", "attribute"):
        for train in (False, True):
            np.testing.assert_allclose(embed_regions(m, X, head, train).data,
                                       O.region_embeddings(m, X, head, train), atol=1e-10)


def test_class_vector_svlr_is_word_embedding(corpus):
    m = random_model(corpus)
    for y in ("dog", "animal", corpus.ontology.attributes[0]):
        assert np.array_equal(class_vector(m, y).data, embed_word(m, y).data)


def test_class_vector_unknown_category(corpus):
    m = random_model(corpus)
    with pytest.raises(MissingCategoryError):
        class_vector(m, "what")


def test_multitask_class_vector_ignores_g(corpus):
    m = random_model(corpus, mode="multitask")
    before = class_vector(m, "dog").data.copy()
    for k in ("g.w1", "g.b1", "g.w2", "g.b2"):
        m.params[k].data = m.params[k].data + 0.5
    np.testing.assert_array_equal(class_vector(m, "dog").data, before)


def test_multitask_recognition_gradient_reaches_h_not_g(corpus):
    m = random_model(corpus, mode="multitask")
    batch = subset_regions(tiny_encoded(0).recognition["train"], np.arange(8))
    m.zero_grad()
    ad.backward(ad.add(object_loss(m, batch), attribute_loss(m, batch)))
    assert np.abs(m.params["h.obj"].grad).sum() > 0
    assert np.abs(m.params["h.atr"].grad).sum() > 0
    for k in ("g.w1", "g.b1", "g.w2", "g.b2"):
        assert m.params[k].grad is None


def test_recognition_step_moves_word_embeddings_only_in_svlr_mode(corpus):
    batch = subset_regions(tiny_encoded(0).recognition["train"], np.arange(8))
    for mode, should_move in (("svlr", True), ("multitask", False)):
        m = random_model(corpus, mode=mode)
        before = embed_word(m, "what").data.copy()
        m.zero_grad()
        ad.backward(object_loss(m, batch))
        for p in m.params.values():
            if p.grad is not None:
                p.data = p.data - 0.1 * p.grad
        moved = not np.allclose(embed_word(m, "what").data, before)
        assert moved == should_move


def test_xavier_range_and_variance():
    fan_in, fan_out = 100, 100
    w = xavier(np.random.default_rng(0), fan_in, fan_out)
    lim = np.sqrt(6 / (fan_in + fan_out))
    assert np.abs(w).max() <= lim
    assert w.var() == pytest.approx(2 / (fan_in + fan_out), rel=0.2)


def test_model_rejects_dim_mismatch(corpus):
    with pytest.raises(ValueError):
        Model(corpus.vocab, [0], [1], Dims(word_dim=corpus.vocab.dim + 1))


def test_full_scale_dims():
    d = Dims.full_scale()
    assert (d.word_dim, d.hidden, d.embed) == (300, 2048, 300)


@pytest.mark.parametrize("mode", ["svlr", "multitask"])
def test_checkpoint_round_trip(tmp_path, corpus, mode):
    m = random_model(corpus, mode=mode, seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, {"arm": "joint_svlr", "step": 7})
    m2, meta = load_checkpoint(path)
    assert meta == {"arm": "joint_svlr", "step": 7}
    assert m2.mode == mode and m2.dims == m.dims and m2.vocab == m.vocab
    assert list(m2.object_ids) == list(m.object_ids)
    s1, s2 = m.snapshot(), m2.snapshot()
    assert s1.keys() == s2.keys()
    for k in s1:
        assert np.array_equal(s1[k], s2[k]), k
    save_checkpoint(tmp_path / "again.ckpt", m2, meta)
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_checkpoint_errors(tmp_path, corpus):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, random_model(corpus))
    data = good.read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.ckpt")
