"""Multiple-choice VQA on top of the shared representation.

Attention comes from word-region inner products (max over mentioned nouns
plus max over mentioned adjectives, softmaxed over regions), the image is the
attention-weighted average of per-region object/attribute scores, and a small
bimodal network scores each (question, image, answer) triplet.

Everything is computed for a whole batch of samples and all their options at
once; the single-sample functions below wrap the batched path.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import Model, class_vectors, embed_regions, word_table

N_BINS = 4
INTERROGATIVE = ("WP", "WDT", "WRB", "WP$")


def is_noun(pos: str) -> bool:
    return pos.startswith("NN")


def is_adjective(pos: str) -> bool:
    return pos.startswith("JJ")


@dataclass(frozen=True)
class Token:
    word: str
    pos: str
    bin: int = 0   # 1..4 for question tokens, 0 when untagged


@dataclass
class QARegion:
    region_id: str
    box: tuple[int, int, int, int]   # row0, col0, row1, col1 on the 14x14 grid, half-open
    features: np.ndarray
    objects: list[str]
    attributes: list[str]

    def __eq__(self, other) -> bool:
        return (isinstance(other, QARegion) and self.region_id == other.region_id
                and tuple(self.box) == tuple(other.box) and self.objects == other.objects
                and self.attributes == other.attributes
                and np.array_equal(self.features, other.features))


@dataclass
class QAImage:
    image_id: str
    regions: list[QARegion]

    @property
    def features(self) -> np.ndarray:
        return np.stack([r.features for r in self.regions])


@dataclass
class QASample:
    qid: str
    image_id: str
    tokens: list[Token]
    options: list[list[Token]]
    correct: int
    relevant: int = -1          # index of the region carrying the queried concept
    template: str = ""

    def __post_init__(self):
        if not 0 <= self.correct < len(self.options):
            raise ValueError(f"{self.qid}: correct index out of range")


class AttentionMap(NamedTuple):
    region_ids: list[str]
    raw: np.ndarray       # a'(R)
    weights: np.ndarray   # a(R), sums to 1


# -------------------------------------------------------------------- language

def assign_bins(tokens: Sequence[Token]) -> list[Token]:
    """Positional fallback binning for untagged questions.

    bin 1: leading interrogative tokens; bin 2: first noun; bin 3: remaining
    nouns; bin 4: everything else.
    """
    out = []
    leading = True
    seen_noun = False
    for t in tokens:
        if leading and t.pos in INTERROGATIVE:
            b = 1
        else:
            leading = False
            if is_noun(t.pos):
                b = 3 if seen_noun else 2
                seen_noun = True
            else:
                b = 4
        out.append(Token(t.word, t.pos, b))
    return out


def extract_mentions(qa: QASample, option: int) -> tuple[set[str], set[str]]:
    toks = [*qa.tokens, *qa.options[option]]
    nouns = {t.word for t in toks if is_noun(t.pos)}
    adjs = {t.word for t in toks if is_adjective(t.pos)}
    return nouns, adjs


# -------------------------------------------------------------------- encoding

@dataclass
class EncodedQA:
    features: np.ndarray     # K x region_dim
    mention_noun: np.ndarray  # O x V bool, question + option nouns
    mention_adj: np.ndarray   # O x V bool
    q_noun: np.ndarray        # V bool, question only
    q_adj: np.ndarray         # V bool
    a_noun: np.ndarray        # O x V bool, option only
    a_adj: np.ndarray         # O x V bool
    q_bins: np.ndarray        # 4 x V averaging weights
    answers: np.ndarray       # O x V averaging weights
    correct: int


def _mask(vocab, tokens, pred) -> np.ndarray:
    m = np.zeros(len(vocab), dtype=bool)
    for t in tokens:
        if pred(t.pos):
            m[vocab.id(t.word)] = True
    return m


def encode_qa(qa: QASample, image: QAImage, vocab) -> EncodedQA:
    V = len(vocab)
    tokens = qa.tokens
    if any(t.bin == 0 for t in tokens):
        tokens = assign_bins(tokens)
    q_bins = np.zeros((N_BINS, V))
    for t in tokens:
        if not 1 <= t.bin <= N_BINS:
            raise ValueError(f"{qa.qid}: bin tag {t.bin} outside 1..{N_BINS}")
        q_bins[t.bin - 1, vocab.id(t.word)] += 1.0
    counts = q_bins.sum(axis=1, keepdims=True)
    q_bins = np.divide(q_bins, counts, out=np.zeros_like(q_bins), where=counts > 0)
    q_noun = _mask(vocab, qa.tokens, is_noun)
    q_adj = _mask(vocab, qa.tokens, is_adjective)
    n_opt = len(qa.options)
    a_noun = np.zeros((n_opt, V), dtype=bool)
    a_adj = np.zeros((n_opt, V), dtype=bool)
    answers = np.zeros((n_opt, V))
    for i, opt in enumerate(qa.options):
        if not opt:
            raise ValueError(f"{qa.qid}: empty answer option {i}")
        a_noun[i] = _mask(vocab, opt, is_noun)
        a_adj[i] = _mask(vocab, opt, is_adjective)
        for t in opt:
            answers[i, vocab.id(t.word)] += 1.0 / len(opt)
    return EncodedQA(image.features, q_noun[None] | a_noun, q_adj[None] | a_adj,
                     q_noun, q_adj, a_noun, a_adj, q_bins, answers, qa.correct)


@dataclass
class QABatch:
    features: np.ndarray      # P x K x region_dim
    mention_noun: np.ndarray  # P x O x V
    mention_adj: np.ndarray
    q_noun: np.ndarray        # P x V
    q_adj: np.ndarray
    a_noun: np.ndarray        # P x O x V
    a_adj: np.ndarray
    q_bins: np.ndarray        # P x 4 x V
    answers: np.ndarray       # P x O x V
    correct: np.ndarray       # P

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_options(self) -> int:
        return self.answers.shape[1]

    @property
    def n_regions(self) -> int:
        return self.features.shape[1]


def collate(items: Sequence[EncodedQA]) -> QABatch:
    if len({it.features.shape[0] for it in items}) > 1 or len({it.answers.shape[0] for it in items}) > 1:
        raise ValueError("samples in one batch need equal region and option counts")
    st = lambda name: np.stack([getattr(it, name) for it in items])
    return QABatch(st("features"), st("mention_noun"), st("mention_adj"), st("q_noun"), st("q_adj"),
                   st("a_noun"), st("a_adj"), st("q_bins"), st("answers"),
                   np.array([it.correct for it in items], dtype=np.intp))


# --------------------------------------------------------------------- forward

class Forward(NamedTuple):
    scores: Tensor        # P x O
    raw_attention: Tensor  # P x O x K
    attention: Tensor      # P x O x K
    image: Tensor          # (P*O) x (|O|+|T|)


def _region_terms(model: Model, batch: QABatch, train: bool, G: Tensor):
    P, K = len(batch), batch.n_regions
    X = batch.features.reshape(P * K, -1)
    Fo = embed_regions(model, X, "object", train)
    Fa = embed_regions(model, X, "attribute", train)
    s_reg = ad.concat([ad.matmul(Fo, class_vectors(model, "obj", G).T),
                       ad.matmul(Fa, class_vectors(model, "atr", G).T)], axis=1)
    Zo = ad.matmul(Fo, G.T)   # (P*K) x V word-region object scores
    Za = ad.matmul(Fa, G.T)
    return s_reg, Zo, Za


def _per_option_max(Z: Tensor, mask: np.ndarray, P: int, K: int) -> Tensor:
    """max over the masked words for every (sample, option, region)."""
    n_opt = mask.shape[1]
    rows = (np.arange(P)[:, None, None] * K + np.arange(K)[None, None, :]).repeat(n_opt, axis=1)
    Zr = ad.take(Z, rows.reshape(-1))
    m = np.broadcast_to(mask[:, :, None, :], (P, n_opt, K, mask.shape[-1])).reshape(-1, mask.shape[-1])
    return ad.masked_max(Zr, m).reshape(P, n_opt, K)


def attention_logits(Zo: Tensor, Za: Tensor, noun_mask: np.ndarray, adj_mask: np.ndarray,
                     P: int, K: int) -> Tensor:
    """a'(R) for every sample/option/region; an empty mention set adds 0."""
    return ad.add(_per_option_max(Zo, noun_mask, P, K), _per_option_max(Za, adj_mask, P, K))


def forward(model: Model, batch: QABatch, train: bool = False) -> Forward:
    P, K, n_opt = len(batch), batch.n_regions, batch.n_options
    p = model.params
    G = word_table(model)
    s_reg, Zo, Za = _region_terms(model, batch, train, G)
    raw = attention_logits(Zo, Za, batch.mention_noun, batch.mention_adj, P, K)
    attn = ad.softmax(raw, axis=-1)
    D = s_reg.shape[1]
    image = ad.matmul(attn, s_reg.reshape(P, K, D)).reshape(P * n_opt, D)
    e = model.dims.embed
    q = ad.matmul(Tensor(batch.q_bins.reshape(P * N_BINS, -1)), G).reshape(P, N_BINS * e)
    q = ad.take(q, np.repeat(np.arange(P), n_opt))
    a = ad.matmul(Tensor(batch.answers.reshape(P * n_opt, -1)), G)
    qa = ad.concat([q, a], axis=1)
    h1 = ad.batch_norm(ad.matmul(image, p["vqa.w1"]), p["vqa.bn1.scale"], p["vqa.bn1.offset"],
                       model.bn["vqa.bn1"], train)
    h2 = ad.batch_norm(ad.matmul(qa, p["vqa.w2"]), p["vqa.bn2.scale"], p["vqa.bn2.offset"],
                       model.bn["vqa.bn2"], train)
    beta = ad.add(h1, h2)
    scores = ad.matmul(ad.relu(beta), p["vqa.w3"]).reshape(P, n_opt)
    return Forward(scores, raw, attn, image)


def answer_loss_from_scores(scores: Tensor, correct, eta: float = 1.0) -> Tensor:
    """Mean over samples and negatives of max(0, eta + S(neg) - S(pos))."""
    P, n_opt = scores.shape
    if n_opt < 2:
        raise ValueError("answer loss needs at least one negative option")
    onehot = np.zeros((P, n_opt))
    onehot[np.arange(P), np.asarray(correct)] = 1.0
    pos = ad.sum_(ad.mul(scores, onehot), axis=1).reshape(P, 1)
    hinge = ad.relu(ad.add(ad.sub(scores, pos), eta))
    return ad.sum_(ad.mul(hinge, (1.0 - onehot) / ((n_opt - 1) * P)))


def answer_loss(model: Model, batch: QABatch, eta: float = 1.0, train: bool = True) -> Tensor:
    return answer_loss_from_scores(forward(model, batch, train).scores, batch.correct, eta)


def predict_batch(model: Model, batch: QABatch) -> np.ndarray:
    with ad.no_grad():
        s = forward(model, batch, train=False).scores.data
    return s.argmax(axis=1)   # first maximum wins ties


def zero_shot_scores(model: Model, batch: QABatch) -> Tensor:
    """Proxy scorer for models that never saw VQA supervision.

    p_q and p_a are the attention logits restricted to question-only and
    answer-only mentions; attention itself uses the full mention set.
    """
    P, K = len(batch), batch.n_regions
    n_opt = batch.n_options
    G = word_table(model)
    _, Zo, Za = _region_terms(model, batch, False, G)
    attn = ad.softmax(attention_logits(Zo, Za, batch.mention_noun, batch.mention_adj, P, K), axis=-1)
    qn = np.broadcast_to(batch.q_noun[:, None, :], batch.a_noun.shape)
    qj = np.broadcast_to(batch.q_adj[:, None, :], batch.a_adj.shape)
    p_q = attention_logits(Zo, Za, qn, qj, P, K)
    p_a = attention_logits(Zo, Za, batch.a_noun, batch.a_adj, P, K)
    return ad.sum_(ad.mul(attn, ad.minimum(p_q, p_a)), axis=2).reshape(P, n_opt)


def zero_shot_predict_batch(model: Model, batch: QABatch) -> np.ndarray:
    with ad.no_grad():
        return zero_shot_scores(model, batch).data.argmax(axis=1)


# ---------------------------------------------------------- single-sample API

def _single(model: Model, qa: QASample, image: QAImage) -> QABatch:
    return collate([encode_qa(qa, image, model.vocab)])


def _mention_masks(model: Model, nouns, adjs) -> tuple[np.ndarray, np.ndarray]:
    V = len(model.vocab)
    n = np.zeros(V, dtype=bool)
    j = np.zeros(V, dtype=bool)
    n[model.vocab.ids(sorted(nouns))] = True
    j[model.vocab.ids(sorted(adjs))] = True
    return n, j


def attention_scores(model: Model, features, nouns, adjs, region_ids=None) -> AttentionMap:
    X = np.asarray(features, dtype=np.float64)
    K = X.shape[0]
    if K < 1:
        raise ValueError("attention needs at least one region")
    n, j = _mention_masks(model, nouns, adjs)
    with ad.no_grad():
        G = word_table(model)
        Zo = ad.matmul(embed_regions(model, X, "object"), G.T)
        Za = ad.matmul(embed_regions(model, X, "attribute"), G.T)
        raw = attention_logits(Zo, Za, n[None, None], j[None, None], 1, K)
        w = ad.softmax(raw, axis=-1)
    ids = list(region_ids) if region_ids is not None else [str(i) for i in range(K)]
    return AttentionMap(ids, raw.data.reshape(K), w.data.reshape(K))


def region_scores(model: Model, features) -> np.ndarray:
    """Concatenated [s_o(R), s_a(R)] per region, eval mode."""
    with ad.no_grad():
        G = word_table(model)
        X = np.asarray(features, dtype=np.float64)
        so = ad.matmul(embed_regions(model, X, "object"), class_vectors(model, "obj", G).T)
        sa = ad.matmul(embed_regions(model, X, "attribute"), class_vectors(model, "atr", G).T)
    return np.concatenate([so.data, sa.data], axis=1)


def image_representation(model: Model, features, attn: AttentionMap) -> np.ndarray:
    S = region_scores(model, features)
    if len(attn.weights) != S.shape[0]:
        raise ValueError("attention map does not cover every region")
    return attn.weights @ S


def question_representation(model: Model, qa: QASample) -> Tensor:
    tokens = qa.tokens if all(t.bin for t in qa.tokens) else assign_bins(qa.tokens)
    e = model.dims.embed
    blocks = []
    for b in range(1, N_BINS + 1):
        ids = [model.vocab.id(t.word) for t in tokens if t.bin == b]
        if ids:
            blocks.append(ad.mean(word_table(model, ids), axis=0))
        else:
            blocks.append(Tensor(np.zeros(e)))
    return ad.concat(blocks, axis=0)


def answer_representation(model: Model, option: Sequence) -> Tensor:
    if not option:
        raise ValueError("answer option must contain at least one word")
    ids = [model.vocab.id(t.word if isinstance(t, Token) else t) for t in option]
    return ad.mean(word_table(model, ids), axis=0)


def score_triplet(model: Model, qa: QASample, option: int, image: QAImage) -> float:
    """Eval-mode score of one (question, image, answer option) triplet."""
    with ad.no_grad():
        return float(forward(model, _single(model, qa, image)).scores.data[0, option])


def predict(model: Model, qa: QASample, image: QAImage) -> int:
    return int(predict_batch(model, _single(model, qa, image))[0])


def zero_shot_score(model: Model, qa: QASample, option: int, image: QAImage) -> float:
    with ad.no_grad():
        return float(zero_shot_scores(model, _single(model, qa, image)).data[0, option])


def write_attention_dump(path, attn: AttentionMap) -> None:
    lines = ["region_id\traw\tweight"]
    lines += [f"{rid}\t{r!r}\t{w!r}" for rid, r, w in zip(attn.region_ids, attn.raw.tolist(), attn.weights.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")
