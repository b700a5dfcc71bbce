"""Analysis tools: accuracies, the frequency-binned transfer grid, 14x14
attention heatmaps with Spearman rank correlation, the center-heatmap
threshold sweep and the mean-centred cosine nearest-neighbour probe."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .model import Model, MissingWordError, word_table
from .recognition import RecognitionReport, evaluate_recognition
from .vqa import AttentionMap, QABatch, collate, encode_qa, forward, zero_shot_scores

GRID = 14
CENTER_SIGMA = 3.5


class UndefinedCorrelationError(ValueError):
    pass


# -------------------------------------------------------------------- accuracy

def _scores(model: Model, batch: QABatch, zero_shot: bool, chunk: int = 256) -> np.ndarray:
    out = []
    with ad.no_grad():
        for i in range(0, len(batch), chunk):
            idx = slice(i, i + chunk)
            sub = QABatch(*(getattr(batch, f)[idx] for f in QABatch.__dataclass_fields__))
            s = zero_shot_scores(model, sub) if zero_shot else forward(model, sub).scores
            out.append(s.data)
    return np.concatenate(out, axis=0)


def predictions(model: Model, batch: QABatch, zero_shot: bool = False) -> np.ndarray:
    return _scores(model, batch, zero_shot).argmax(axis=1)   # ties -> lowest index


def accuracy_on_batch(model: Model, batch: QABatch, zero_shot: bool = False) -> float:
    return float(np.mean(predictions(model, batch, zero_shot) == batch.correct))


def vqa_accuracy(model: Model, corpus, split: str = "val", zero_shot: bool = False,
                 predict_fn=None) -> dict[str, float]:
    """Overall and per-template accuracy. ``predict_fn(batch) -> indices`` overrides the scorer."""
    samples = corpus.qa[split]
    if not samples:
        return {}
    batch = collate([encode_qa(q, corpus.images[q.image_id], corpus.vocab) for q in samples])
    pred = predict_fn(batch) if predict_fn else predictions(model, batch, zero_shot)
    hit = pred == batch.correct
    out = {"overall": float(hit.mean())}
    for tpl in sorted({q.template for q in samples}):
        m = np.array([q.template == tpl for q in samples])
        out[tpl] = float(hit[m].mean())
    return out


def recognition_report(model: Model, corpus, split: str = "val") -> RecognitionReport:
    return evaluate_recognition(model, corpus.recognition[split], corpus.ontology)


# ------------------------------------------------------------- transfer grid

@dataclass
class TransferCell:
    classes: list[str]
    baseline: float       # mean genome-only per-class accuracy
    delta: float          # mean (joint - genome-only)

    @property
    def count(self) -> int:
        return len(self.classes)


@dataclass
class TransferGrid:
    row_edges: list[float]    # class frequency in QA train
    col_edges: list[float]    # class frequency in recognition train
    cells: dict[tuple[int, int], TransferCell]
    per_class: dict[str, tuple[float, float]]   # class -> (baseline acc, delta)
    excluded: list[str] = field(default_factory=list)

    def cell_of(self, qa_freq: float, rec_freq: float) -> TransferCell | None:
        return self.cells.get((_bin(qa_freq, self.row_edges), _bin(rec_freq, self.col_edges)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["qa_bin_lo", "qa_bin_hi", "rec_bin_lo", "rec_bin_hi", "n_classes", "baseline_acc", "delta"])
        for (r, c), cell in sorted(self.cells.items()):
            w.writerow([self.row_edges[r], self.row_edges[r + 1], self.col_edges[c], self.col_edges[c + 1],
                        cell.count, repr(cell.baseline), repr(cell.delta)])
        return buf.getvalue()


def _bin(x: float, edges: Sequence[float]) -> int:
    for i in range(len(edges) - 1):
        if edges[i] <= x < edges[i + 1]:
            return i
    raise ValueError(f"value {x} outside bin edges {list(edges)}")


def transfer_grid(baseline: Model, joint: Model, corpus, row_edges=(0, 50, np.inf),
                  col_edges=(0, 50, np.inf), split: str = "test") -> TransferGrid:
    """Per-class top-1 change from ``baseline`` to ``joint``, binned by training frequency."""
    from .synthworld import class_counts

    if (list(baseline.object_ids) != list(joint.object_ids)
            or list(baseline.attribute_ids) != list(joint.attribute_ids)
            or baseline.vocab.words != joint.vocab.words):
        raise ValueError("checkpoints were built on different ontologies")
    rec_freq, qa_freq = class_counts(corpus)
    rb = recognition_report(baseline, corpus, split).per_class
    rj = recognition_report(joint, corpus, split).per_class
    per_class: dict[str, tuple[float, float]] = {}
    excluded = []
    members: dict[tuple[int, int], list[str]] = {}
    for c in corpus.ontology.leaves:
        if c not in rb or rb[c][1] == 0:
            excluded.append(c)
            continue
        acc_b = rb[c][0] / rb[c][1]
        acc_j = rj[c][0] / rj[c][1]
        per_class[c] = (acc_b, acc_j - acc_b)
        key = (_bin(qa_freq.get(c, 0), row_edges), _bin(rec_freq.get(c, 0), col_edges))
        members.setdefault(key, []).append(c)
    cells = {k: TransferCell(v, float(np.mean([per_class[c][0] for c in v])),
                             float(np.mean([per_class[c][1] for c in v])))
             for k, v in members.items()}
    return TransferGrid(list(row_edges), list(col_edges), cells, per_class, excluded)


# ------------------------------------------------------------------ heatmaps

def box_mask(box) -> np.ndarray:
    r0, c0, r1, c1 = box
    m = np.zeros((GRID, GRID), dtype=bool)
    m[r0:r1, c0:c1] = True
    return m


def to_heatmap14(weights: Sequence[float], masks: Sequence[np.ndarray]) -> np.ndarray:
    """Spread each region's weight uniformly over its cells, sum overlaps, renormalize."""
    if len(weights) != len(masks):
        raise ValueError("one mask per region required")
    grid = np.zeros((GRID, GRID))
    for w, m in zip(weights, masks):
        m = np.asarray(m, dtype=bool)
        if m.shape != (GRID, GRID):
            raise ValueError(f"mask must be {GRID}x{GRID}")
        n = m.sum()
        if n == 0:
            raise ValueError("empty region mask")
        grid[m] += w / n
    total = grid.sum()
    if total <= 0:
        raise ValueError("heatmap has no mass")
    return grid / total


def attention_heatmap(attn: AttentionMap | Sequence[float], boxes) -> np.ndarray:
    w = attn.weights if isinstance(attn, AttentionMap) else attn
    return to_heatmap14(w, [box_mask(b) for b in boxes])


def rankdata(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(x.size)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    ra, rb = rankdata(a), rankdata(b)
    if ra.size != rb.size:
        raise ValueError("heatmaps differ in size")
    da, db = ra - ra.mean(), rb - rb.mean()
    den = np.sqrt((da * da).sum() * (db * db).sum())
    if den == 0:
        raise UndefinedCorrelationError("rank correlation undefined for a constant map")
    return float(np.clip((da * db).sum() / den, -1.0, 1.0))


def center_baseline(sigma: float = CENTER_SIGMA) -> np.ndarray:
    c = (GRID - 1) / 2.0
    r = np.arange(GRID) - c
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma ** 2))
    return g / g.sum()


@dataclass
class SweepPoint:
    threshold: float
    n: int
    means: dict[str, float | None]   # None when the subset is empty


def threshold_sweep(model_maps: dict[str, Sequence[np.ndarray]], reference: Sequence[np.ndarray],
                    center: np.ndarray, thresholds: Sequence[float]) -> list[SweepPoint]:
    """Mean model-vs-reference correlation on samples whose reference-vs-center
    correlation is at most each threshold."""
    ref_center = np.array([spearman(r, center) for r in reference])
    per_model = {k: np.array([spearman(m, r) for m, r in zip(maps, reference)])
                 for k, maps in model_maps.items()}
    for k, maps in model_maps.items():
        if len(maps) != len(reference):
            raise ValueError(f"model {k!r} maps not aligned with reference maps")
    out = []
    for tau in thresholds:
        keep = ref_center <= tau
        n = int(keep.sum())
        means = {k: (float(v[keep].mean()) if n else None) for k, v in per_model.items()}
        out.append(SweepPoint(float(tau), n, means))
    return out


SWEEP_THRESHOLDS = tuple(round(-0.4 + 0.1 * i, 1) + 0.0 for i in range(15))


def attention_sweep(model: Model, corpus, split: str = "val", thresholds=SWEEP_THRESHOLDS,
                    limit: int | None = None) -> list[SweepPoint]:
    """Sweep with the generator's relevant-region box as the reference map.

    The model map is the attention computed for the correct option. The center
    heatmap itself is reported alongside the model as a second series.
    """
    samples = corpus.qa[split][:limit]
    if not samples:
        return []
    batch = collate([encode_qa(q, corpus.images[q.image_id], corpus.vocab) for q in samples])
    with ad.no_grad():
        attn = forward(model, batch).attention.data
    center = center_baseline()
    model_maps, refs = [], []
    for i, q in enumerate(samples):
        boxes = [r.box for r in corpus.images[q.image_id].regions]
        model_maps.append(attention_heatmap(attn[i, q.correct], boxes))
        refs.append(to_heatmap14([1.0], [box_mask(boxes[q.relevant])]))
    return threshold_sweep({"model": model_maps, "center": [center] * len(refs)}, refs, center, thresholds)


def sweep_to_csv(points: list[SweepPoint]) -> str:
    names = sorted(points[0].means) if points else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "n", *names])
    for p in points:
        w.writerow([repr(p.threshold), p.n, *("" if p.means[k] is None else repr(p.means[k]) for k in names)])
    return buf.getvalue()


# --------------------------------------------------------------------- probe

def _neighbors(E: np.ndarray, words: list[str], queries, k: int) -> dict[str, list[tuple[str, float]]]:
    E = E - E.mean(axis=0, keepdims=True)
    norms = np.linalg.norm(E, axis=1, keepdims=True)
    U = E / np.where(norms > 0, norms, 1.0)
    index = {w: i for i, w in enumerate(words)}
    out = {}
    for q in queries:
        if q not in index:
            raise MissingWordError(q)
        i = index[q]
        dist = 1.0 - U @ U[i]
        order = [j for j in np.argsort(dist, kind="mergesort") if j != i][:k]
        out[q] = [(words[j], float(dist[j])) for j in order]
    return out


def nn_probe(model: Model, queries: Sequence[str], k: int = 5) -> dict[str, dict[str, list[tuple[str, float]]]]:
    """Nearest neighbours by cosine distance after mean centring, in base-vector
    space and in the learned word space."""
    with ad.no_grad():
        G = word_table(model).data
    words = model.vocab.words
    return {"base": _neighbors(model.vocab.base, words, queries, k),
            "svlr": _neighbors(G, words, queries, k)}


def probe_to_csv(result: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["space", "query", "rank", "neighbor", "cosine_distance"])
    for space in ("base", "svlr"):
        for q, lst in result[space].items():
            for r, (nb, d) in enumerate(lst, 1):
                w.writerow([space, q, r, nb, repr(d)])
    return buf.getvalue()
