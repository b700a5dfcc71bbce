"""Central finite-difference checks of every differentiable path.

``check`` compares the analytic gradient of a scalar-valued closure with
central differences. Paths with kinks (ReLU, hinge, max-over-set) can land
within one step of a kink; when a comparison fails the whole input point is
nudged by a small random offset and re-checked, up to ``max_nudges`` times.
A genuine gradient bug fails at every point.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

STEP = 1e-4
RTOL_SMOOTH = 1e-4
RTOL_KINKED = 1e-3
ATOL = 1e-8


@dataclass
class CheckResult:
    name: str
    ok: bool
    max_err: float        # max of |analytic - numeric| / (atol + rtol * |numeric|); <= 1 passes
    n_checked: int
    nudges: int


def _entries(t: Tensor, rng: np.random.Generator, max_entries: int | None) -> np.ndarray:
    n = t.size
    if max_entries is None or n <= max_entries:
        return np.arange(n)
    return np.sort(rng.choice(n, size=max_entries, replace=False))


def _compare(f: Callable[[], Tensor], tensors: Sequence[Tensor], rtol: float, atol: float,
             step: float, picks: list[np.ndarray]) -> float:
    for t in tensors:
        t.grad = None
    out = f()
    ad.backward(out)
    worst = 0.0
    for t, idx in zip(tensors, picks):
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        flat = t.data.reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            with ad.no_grad():
                up = f().item()
            flat[i] = old - step
            with ad.no_grad():
                down = f().item()
            flat[i] = old
            numeric = (up - down) / (2 * step)
            err = abs(analytic[i] - numeric) / (atol + rtol * abs(numeric))
            worst = max(worst, err)
    return worst


def check(name: str, f: Callable[[], Tensor], tensors: Sequence[Tensor], rtol: float = RTOL_SMOOTH,
          atol: float = ATOL, step: float = STEP, max_entries: int | None = 40,
          max_nudges: int = 3, rng: np.random.Generator | None = None) -> CheckResult:
    rng = rng or np.random.default_rng(0)
    picks = [_entries(t, rng, max_entries) for t in tensors]
    nudges = 0
    while True:
        err = _compare(f, tensors, rtol, atol, step, picks)
        if err <= 1.0 or nudges >= max_nudges:
            break
        nudges += 1
        for t in tensors:
            t.data = t.data + 1e-2 * rng.standard_normal(t.shape)
    return CheckResult(name, err <= 1.0, err, sum(len(p) for p in picks), nudges)


# ----------------------------------------------------------------- the suite

def _leaf(rng, *shape, lo=None):
    x = rng.standard_normal(shape)
    if lo is not None:
        # keep entries off the kink at zero by more than a step
        x = np.where(np.abs(x) < lo, np.sign(x + 1e-12) * lo, x)
    return Tensor(x, requires_grad=True)


def primitive_cases(seed: int):
    rng = np.random.default_rng(seed)
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    yield "matmul", lambda: ad.sum_(ad.mul(ad.matmul(a, b), Tensor(rng_w(seed, 3, 2)))), [a, b], RTOL_SMOOTH
    A, B = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 2)
    yield "matmul_batched", lambda: ad.sum_(ad.mul(ad.matmul(A, B), Tensor(rng_w(seed, 2, 3, 2)))), [A, B], RTOL_SMOOTH
    x, y = _leaf(rng, 3, 4), _leaf(rng, 1, 4)
    w = Tensor(rng_w(seed, 3, 4))
    yield "add_broadcast", lambda: ad.sum_(ad.mul(ad.add(x, y), w)), [x, y], RTOL_SMOOTH
    yield "sub", lambda: ad.sum_(ad.mul(ad.sub(x, y), w)), [x, y], RTOL_SMOOTH
    yield "mul", lambda: ad.sum_(ad.mul(ad.mul(x, y), w)), [x, y], RTOL_SMOOTH
    yield "scale", lambda: ad.sum_(ad.mul(ad.scale(x, -2.5), w)), [x], RTOL_SMOOTH
    r = _leaf(rng, 3, 4, lo=1e-2)
    yield "relu", lambda: ad.sum_(ad.mul(ad.relu(r), w)), [r], RTOL_SMOOTH
    yield "sigmoid", lambda: ad.sum_(ad.mul(ad.sigmoid(x), w)), [x], RTOL_SMOOTH
    z = Tensor(rng.standard_normal((3, 4)) * 5, requires_grad=True)
    yield "log_sigmoid", lambda: ad.sum_(ad.mul(ad.log_sigmoid(z), w)), [z], RTOL_SMOOTH
    yield "softmax", lambda: ad.sum_(ad.mul(ad.softmax(x, axis=-1), w)), [x], RTOL_SMOOTH
    yield "sum_axis", lambda: ad.sum_(ad.mul(ad.sum_(x, axis=0), Tensor(rng_w(seed, 4)))), [x], RTOL_SMOOTH
    yield "mean", lambda: ad.mean(ad.mul(x, x)), [x], RTOL_SMOOTH
    c1, c2 = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
    yield "concat", lambda: ad.sum_(ad.mul(ad.concat([c1, c2], axis=1), Tensor(rng_w(seed, 2, 5)))), [c1, c2], RTOL_SMOOTH
    yield "take", lambda: ad.sum_(ad.mul(ad.take(x, [2, 0, 2, 1]), Tensor(rng_w(seed, 4, 4)))), [x], RTOL_SMOOTH
    yield "reshape_transpose", lambda: ad.sum_(ad.mul(ad.transpose(ad.reshape(x, (4, 3))), Tensor(rng_w(seed, 3, 4)))), [x], RTOL_SMOOTH
    mask = rng.random((3, 4)) < 0.6
    mask[0] = False   # an empty set row
    yield "masked_max", lambda: ad.sum_(ad.mul(ad.masked_max(x, mask), Tensor(rng_w(seed, 3)))), [x], RTOL_SMOOTH
    m1, m2 = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    yield "minimum", lambda: ad.sum_(ad.mul(ad.minimum(m1, m2), w)), [m1, m2], RTOL_SMOOTH
    xb = _leaf(rng, 5, 3)
    sc, of = Tensor(1.0 + 0.3 * rng.standard_normal(3), requires_grad=True), _leaf(rng, 3)
    st = ad.BatchNormState(3)
    wb = Tensor(rng_w(seed, 5, 3))
    yield "batch_norm_train", lambda: ad.sum_(ad.mul(ad.batch_norm(xb, sc, of, st, True), wb)), [xb, sc, of], RTOL_KINKED
    st2 = ad.BatchNormState(3)
    st2.mean, st2.var = rng.standard_normal(3), 0.5 + rng.random(3)
    yield "batch_norm_eval", lambda: ad.sum_(ad.mul(ad.batch_norm(xb, sc, of, st2, False), wb)), [xb, sc, of], RTOL_SMOOTH


def rng_w(seed, *shape):
    return np.random.default_rng([seed, 99, *shape]).standard_normal(shape)


def model_cases(seed: int):
    """Loss-level checks on a tiny random world (recognition and VQA losses, full scorer)."""
    from .model import Dims, Model, embed_regions, embed_word
    from .recognition import attribute_loss, object_loss
    from .vqa import answer_loss, forward
    from .synthworld import WorldSpec, generate
    from .trainer import encode_corpus, subset_qa, subset_regions

    spec = WorldSpec(seed=seed, n_roots=2, branching=3, family_size=4, n_families=2,
                     options_per_question=3, regions_per_image=3, word_dim=5, region_dim=6,
                     n_rec_val=4, n_rec_test=4, n_qa_val=4, n_qa_test=4,
                     frequency_profile="", n_rec_train=24, n_qa_train=12, n_synonyms=1)
    corpus = generate(spec)
    enc = encode_corpus(corpus)
    out = []
    for mode in ("svlr", "multitask"):
        dims = Dims(word_dim=5, region_dim=6, hidden=5, embed=4, bimodal=6)
        ont = corpus.ontology
        model = Model(corpus.vocab, corpus.vocab.ids(ont.objects), corpus.vocab.ids(ont.attributes),
                      dims, mode=mode, seed=seed)
        rec = subset_regions(enc.recognition["train"], np.arange(8))
        qa = subset_qa(enc.qa["train"], np.arange(4))
        params = list(model.params.values())
        g = [model.params[k] for k in ("g.w1", "g.b1", "g.w2", "g.b2")]
        fo = list(model.group("fo").values())
        fa = list(model.group("fa").values())
        w = Tensor(rng_w(seed, 4))
        out.append((f"{mode}:embed_word", lambda m=model: ad.sum_(ad.mul(embed_word(m, 3), w)), g, RTOL_KINKED))
        wr = Tensor(rng_w(seed, 8, 4))
        out.append((f"{mode}:embed_region", lambda m=model: ad.sum_(ad.mul(embed_regions(m, rec.features, "object", True), wr)),
                    fo, RTOL_KINKED))
        out.append((f"{mode}:object_loss", lambda m=model: object_loss(m, rec, 1.0, True), fo + g + [model.params.get("h.obj")],
                    RTOL_KINKED))
        out.append((f"{mode}:attribute_loss", lambda m=model: attribute_loss(m, rec, True), fa + g + [model.params.get("h.atr")],
                    RTOL_KINKED))
        out.append((f"{mode}:answer_loss", lambda m=model: answer_loss(m, qa, 1.0, True), params, RTOL_KINKED))
        ws = Tensor(rng_w(seed, 4, 3))
        out.append((f"{mode}:score_triplet", lambda m=model: ad.sum_(ad.mul(forward(m, qa, True).scores, ws)), params, RTOL_KINKED))
    for name, f, ts, rtol in out:
        yield name, f, [t for t in ts if t is not None], rtol


def run_suite(seed: int, max_entries: int | None = 12) -> list[CheckResult]:
    rng = np.random.default_rng([seed, 1])
    results = []
    for name, f, ts, rtol in primitive_cases(seed):
        results.append(check(name, f, ts, rtol=rtol, max_entries=None, rng=rng))
    for name, f, ts, rtol in model_cases(seed):
        results.append(check(name, f, ts, rtol=rtol, max_entries=max_entries, rng=rng))
    return results
