"""Independent reference implementations written as plain Python loops.

Nothing here touches the autodiff engine; parameters are read as raw numpy
arrays and every sum, max and normalization is spelled out element by
element.
"""
from __future__ import annotations

import math

import numpy as np

EPS = 1e-5


def dot(u, v) -> float:
    s = 0.0
    for a, b in zip(u, v):
        s += float(a) * float(b)
    return s


def affine(x, W, b=None) -> list[float]:
    n_out = W.shape[1]
    out = []
    for o in range(n_out):
        s = 0.0
        for i in range(len(x)):
            s += float(x[i]) * float(W[i, o])
        if b is not None:
            s += float(b[o])
        out.append(s)
    return out


def relu(v) -> list[float]:
    return [x if x > 0 else 0.0 for x in v]


def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def word_vec(model, word_id: int) -> list[float]:
    p = {k: v.data for k, v in model.params.items()}
    x = model.vocab.base[word_id]
    h = relu(affine(x, p["g.w1"], p["g.b1"]))
    return affine(h, p["g.w2"], p["g.b2"])


def class_vec(model, kind: str, row: int) -> list[float]:
    if model.mode == "multitask":
        return list(model.params[f"h.{kind}"].data[row])
    ids = model.object_ids if kind == "obj" else model.attribute_ids
    return word_vec(model, int(ids[row]))


def _bn_columns(H, scale, offset, mean=None, var=None):
    """H is a list of rows; batch moments when mean/var are None."""
    B, D = len(H), len(H[0])
    out = [[0.0] * D for _ in range(B)]
    for d in range(D):
        col = [H[b][d] for b in range(B)]
        if mean is None:
            mu = sum(col) / B
            v = sum((c - mu) ** 2 for c in col) / B
        else:
            mu, v = float(mean[d]), float(var[d])
        for b in range(B):
            out[b][d] = (col[b] - mu) / math.sqrt(v + EPS) * float(scale[d]) + float(offset[d])
    return out


def region_embeddings(model, X, head: str, train: bool = False) -> list[list[float]]:
    pre = "fo" if head == "object" else "fa"
    p = {k: v.data for k, v in model.params.items()}
    H = [list(map(float, x)) for x in X]
    for layer in ("1", "2"):
        H = [affine(h, p[f"{pre}.w{layer}"]) for h in H]
        bn = f"{pre}.bn{layer}"
        st = model.bn[bn]
        H = _bn_columns(H, p[f"{bn}.scale"], p[f"{bn}.offset"],
                        None if train else st.mean, None if train else st.var)
        H = [relu(h) for h in H]
    return H


def object_loss_from_scores(S, H, eta=1.0) -> float:
    """S: M x |O| scores, H: M x |O| closed label mask."""
    M, n_obj = len(S), len(S[0])
    total = 0.0
    for j in range(M):
        pos = [l for l in range(n_obj) if H[j][l]]
        neg = [k for k in range(n_obj) if not H[j][k]]
        inner = 0.0
        for l in pos:
            acc = 0.0
            for k in neg:
                acc += max(0.0, eta + S[j][k] - S[j][l])
            inner += acc / n_obj
        total += inner / len(pos)
    return total / M


def attribute_loss_from_scores(S, T) -> float:
    M, n_atr = len(S), len(S[0])
    total = 0.0
    for t in range(n_atr):
        gamma = sum(1.0 for j in range(M) if T[j][t]) / M
        for j in range(M):
            s = S[j][t]
            if T[j][t]:
                total += (1.0 - gamma) * -math.log(sigmoid(s))
            else:
                total += gamma * -math.log(1.0 - sigmoid(s))
    return total / M


def answer_loss_from_scores(S, correct, eta=1.0) -> float:
    P = len(S)
    total = 0.0
    for i in range(P):
        n_neg = len(S[i]) - 1
        for k in range(len(S[i])):
            if k != correct[i]:
                total += max(0.0, eta + S[i][k] - S[i][correct[i]]) / n_neg
    return total / P


def recognition_scores(model, X, train: bool = False):
    Fo = region_embeddings(model, X, "object", train)
    Fa = region_embeddings(model, X, "attribute", train)
    so = [[dot(f, class_vec(model, "obj", y)) for y in range(len(model.object_ids))] for f in Fo]
    sa = [[dot(f, class_vec(model, "atr", t)) for t in range(len(model.attribute_ids))] for f in Fa]
    return so, sa


def object_loss(model, batch, eta=1.0, train=True) -> float:
    so, _ = recognition_scores(model, batch.features, train)
    return object_loss_from_scores(so, batch.object_mask.tolist(), eta)


def attribute_loss(model, batch, train=True) -> float:
    _, sa = recognition_scores(model, batch.features, train)
    return attribute_loss_from_scores(sa, batch.attribute_mask.tolist())


def _mention_logit(model, fo, fa, nouns, adjs) -> float:
    v = 0.0
    if nouns:
        v += max(dot(fo, word_vec(model, model.vocab.id(w))) for w in nouns)
    if adjs:
        v += max(dot(fa, word_vec(model, model.vocab.id(w))) for w in adjs)
    return v


def _softmax(z):
    m = max(z)
    e = [math.exp(x - m) for x in z]
    s = sum(e)
    return [x / s for x in e]


def attention(model, features, nouns, adjs) -> list[float]:
    Fo = region_embeddings(model, features, "object")
    Fa = region_embeddings(model, features, "attribute")
    raw = [_mention_logit(model, Fo[r], Fa[r], nouns, adjs) for r in range(len(features))]
    return _softmax(raw)


def image_representation(model, features, weights) -> list[float]:
    so, sa = recognition_scores(model, features)
    D = len(so[0]) + len(sa[0])
    out = [0.0] * D
    for r in range(len(features)):
        row = so[r] + sa[r]
        for d in range(D):
            out[d] += weights[r] * row[d]
    return out


def _split_mentions(tokens):
    nouns = {t.word for t in tokens if t.pos.startswith("NN")}
    adjs = {t.word for t in tokens if t.pos.startswith("JJ")}
    return nouns, adjs


def zero_shot_score(model, qa, option, image) -> float:
    X = image.features
    qn, qj = _split_mentions(qa.tokens)
    an, aj = _split_mentions(qa.options[option])
    Fo = region_embeddings(model, X, "object")
    Fa = region_embeddings(model, X, "attribute")
    raw = [_mention_logit(model, Fo[r], Fa[r], qn | an, qj | aj) for r in range(len(X))]
    a = _softmax(raw)
    total = 0.0
    for r in range(len(X)):
        p_q = _mention_logit(model, Fo[r], Fa[r], qn, qj)
        p_a = _mention_logit(model, Fo[r], Fa[r], an, aj)
        total += a[r] * min(p_q, p_a)
    return total


def score_triplet(model, qa, option, image) -> float:
    """Eval-mode score with the whole VQA head spelled out."""
    p = {k: v.data for k, v in model.params.items()}
    nouns, adjs = _split_mentions(list(qa.tokens) + list(qa.options[option]))
    w = attention(model, image.features, nouns, adjs)
    img = image_representation(model, image.features, w)
    e = model.dims.embed
    q = []
    for b in range(1, 5):
        ws = [t.word for t in qa.tokens if t.bin == b]
        block = [0.0] * e
        for word in ws:
            v = word_vec(model, model.vocab.id(word))
            block = [x + y / len(ws) for x, y in zip(block, v)]
        q += block
    ans = [0.0] * e
    opt = qa.options[option]
    for t in opt:
        v = word_vec(model, model.vocab.id(t.word))
        ans = [x + y / len(opt) for x, y in zip(ans, v)]
    h1 = _bn_columns([affine(img, p["vqa.w1"])], p["vqa.bn1.scale"], p["vqa.bn1.offset"],
                     model.bn["vqa.bn1"].mean, model.bn["vqa.bn1"].var)[0]
    h2 = _bn_columns([affine(q + ans, p["vqa.w2"])], p["vqa.bn2.scale"], p["vqa.bn2.offset"],
                     model.bn["vqa.bn2"].mean, model.bn["vqa.bn2"].var)[0]
    beta = relu([x + y for x, y in zip(h1, h2)])
    return affine(beta, p["vqa.w3"])[0]


def closure_by_reachability(labels, parents: dict[str, list[str]]) -> set[str]:
    """Breadth-first walk of the child -> parent edges."""
    seen = set(labels)
    frontier = list(labels)
    while frontier:
        nxt = []
        for c in frontier:
            for p in parents.get(c, []):
                if p not in seen:
                    seen.add(p)
                    nxt.append(p)
        frontier = nxt
    return seen


def spearman_textbook(a, b) -> float:
    """Mid-rank Pearson correlation with ranks assigned by counting."""
    a = list(map(float, np.ravel(a)))
    b = list(map(float, np.ravel(b)))

    def ranks(x):
        out = []
        for v in x:
            less = sum(1 for u in x if u < v)
            equal = sum(1 for u in x if u == v)
            out.append(less + (equal + 1) / 2.0)
        return out

    ra, rb = ranks(a), ranks(b)
    n = len(ra)
    ma, mb = sum(ra) / n, sum(rb) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    va = sum((x - ma) ** 2 for x in ra)
    vb = sum((y - mb) ** 2 for y in rb)
    return cov / math.sqrt(va * vb)


def heatmap(weights, masks) -> np.ndarray:
    grid = [[0.0] * 14 for _ in range(14)]
    for w, m in zip(weights, masks):
        n = sum(1 for r in range(14) for c in range(14) if m[r][c])
        for r in range(14):
            for c in range(14):
                if m[r][c]:
                    grid[r][c] += w / n
    total = sum(sum(row) for row in grid)
    return np.array([[v / total for v in row] for row in grid])
