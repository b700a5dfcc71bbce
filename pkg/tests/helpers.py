"""Small worlds and randomized models shared across the suite."""
from __future__ import annotations

from dataclasses import replace
from functools import lru_cache

import numpy as np

from svlr.model import Dims, Model
from svlr.synthworld import WorldSpec, generate
from svlr.trainer import encode_corpus

TINY = WorldSpec(n_roots=2, branching=3, family_size=4, n_families=2, options_per_question=4,
                 regions_per_image=3, word_dim=6, region_dim=7, frequency_profile="",
                 n_rec_train=30, n_rec_val=10, n_rec_test=10, n_qa_train=12, n_qa_val=8,
                 n_qa_test=8, n_synonyms=1)


@lru_cache(maxsize=8)
def tiny_corpus(seed: int = 0):
    return generate(replace(TINY, seed=seed))


@lru_cache(maxsize=8)
def tiny_encoded(seed: int = 0):
    return encode_corpus(tiny_corpus(seed))


def random_model(corpus, mode: str = "svlr", seed: int = 0, bn_stats: bool = True) -> Model:
    """Fresh model with randomized BN affines and running moments, so eval
    mode is not the identity normalizer."""
    dims = Dims(word_dim=corpus.vocab.dim, region_dim=corpus.spec.region_dim, hidden=5, embed=4, bimodal=6)
    ont = corpus.ontology
    m = Model(corpus.vocab, corpus.vocab.ids(ont.objects), corpus.vocab.ids(ont.attributes),
              dims, mode=mode, seed=seed)
    if bn_stats:
        rng = np.random.default_rng([seed, 5])
        for name, st in m.bn.items():
            st.mean = 0.3 * rng.standard_normal(st.mean.shape)
            st.var = 0.5 + rng.random(st.var.shape)
            m.params[f"{name}.scale"].data = 1.0 + 0.2 * rng.standard_normal(st.mean.shape)
            m.params[f"{name}.offset"].data = 0.2 * rng.standard_normal(st.mean.shape)
    return m


def random_instance(i: int, mode: str = "svlr"):
    """(corpus, model, rng) for instance ``i``: five worlds, one model per instance."""
    corpus = tiny_corpus(i % 5)
    return corpus, random_model(corpus, mode, seed=1000 + i), np.random.default_rng([i, 42])
