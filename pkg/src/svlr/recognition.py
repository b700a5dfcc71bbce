"""Open-vocabulary region recognition: inner-product scores, the multi-label
margin object loss and the batch-balanced attribute cross-entropy."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import Model, class_vectors, embed_regions, word_table


class OntologyError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass
class Ontology:
    objects: list[str]
    attributes: list[str]
    parents: dict[str, list[str]] = field(default_factory=dict)
    families: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self._obj_index = {o: i for i, o in enumerate(self.objects)}
        self._atr_index = {t: i for i, t in enumerate(self.attributes)}
        for child, ps in self.parents.items():
            for p in [child, *ps]:
                if p not in self._obj_index:
                    raise OntologyError(f"hypernym edge mentions unknown object {p!r}")
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        state: dict[str, int] = {}

        def visit(n: str) -> None:
            state[n] = 1
            for p in self.parents.get(n, ()):
                s = state.get(p, 0)
                if s == 1:
                    raise OntologyError(f"hypernym cycle through {p!r}")
                if s == 0:
                    visit(p)
            state[n] = 2

        for o in self.objects:
            if state.get(o, 0) == 0:
                visit(o)

    def object_index(self, name: str) -> int:
        try:
            return self._obj_index[name]
        except KeyError:
            raise OntologyError(f"{name!r} is not an object category") from None

    def attribute_index(self, name: str) -> int:
        try:
            return self._atr_index[name]
        except KeyError:
            raise OntologyError(f"{name!r} is not an attribute category") from None

    @property
    def leaves(self) -> list[str]:
        has_child = {p for ps in self.parents.values() for p in ps}
        return [o for o in self.objects if o not in has_child]

    def children(self, name: str) -> list[str]:
        return [c for c, ps in self.parents.items() if name in ps]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Ontology):
            return NotImplemented
        norm = lambda d: {k: sorted(v) for k, v in d.items() if v}
        return (self.objects == other.objects and self.attributes == other.attributes
                and norm(self.parents) == norm(other.parents) and self.families == other.families)


def hypernym_closure(labels: Iterable[str], ont: Ontology) -> set[str]:
    out: set[str] = set()
    stack = list(labels)
    for lab in stack:
        ont.object_index(lab)
    while stack:
        n = stack.pop()
        if n in out:
            continue
        out.add(n)
        stack.extend(ont.parents.get(n, ()))
    return out


def write_ontology(path, ont: Ontology) -> None:
    """One category per line (``object <name>`` / ``attribute <name> [family]``),
    then hypernym edges as ``child > parent``."""
    lines = [f"object {o}" for o in ont.objects]
    for t in ont.attributes:
        fam = ont.families.get(t)
        lines.append(f"attribute {t} {fam}" if fam else f"attribute {t}")
    for child in ont.objects:
        for p in ont.parents.get(child, ()):
            lines.append(f"{child} > {p}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ontology(path) -> Ontology:
    from .synthworld import ParseError

    objects, attributes, parents, families = [], [], {}, {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) == 3 and parts[1] == ">":
            parents.setdefault(parts[0], []).append(parts[2])
        elif parts[0] == "object" and len(parts) == 2:
            objects.append(parts[1])
        elif parts[0] == "attribute" and len(parts) in (2, 3):
            attributes.append(parts[1])
            if len(parts) == 3:
                families[parts[1]] = parts[2]
        else:
            raise ParseError(path, lineno, f"unrecognized ontology line {raw!r}")
    try:
        return Ontology(objects, attributes, parents, families)
    except OntologyError as e:
        raise ParseError(path, 0, str(e)) from None


# --------------------------------------------------------------------- batches

@dataclass
class RegionSample:
    region_id: str
    image_id: str
    features: np.ndarray
    objects: list[str]
    attributes: list[str]

    def __eq__(self, other) -> bool:
        return (isinstance(other, RegionSample) and self.region_id == other.region_id
                and self.image_id == other.image_id and self.objects == other.objects
                and self.attributes == other.attributes
                and np.array_equal(self.features, other.features))


@dataclass
class RegionBatch:
    """Encoded recognition batch: features plus closed label masks."""
    features: np.ndarray          # M x region_dim
    object_mask: np.ndarray       # M x |O| bool, hypernym-closed H_j
    attribute_mask: np.ndarray    # M x |T| bool, T_j

    def __len__(self) -> int:
        return self.features.shape[0]


def encode_regions(samples: Sequence[RegionSample], ont: Ontology) -> RegionBatch:
    M = len(samples)
    X = np.stack([s.features for s in samples]) if M else np.zeros((0, 0))
    H = np.zeros((M, len(ont.objects)), dtype=bool)
    T = np.zeros((M, len(ont.attributes)), dtype=bool)
    for j, s in enumerate(samples):
        for o in hypernym_closure(s.objects, ont):
            H[j, ont.object_index(o)] = True
        for t in s.attributes:
            T[j, ont.attribute_index(t)] = True
    return RegionBatch(X, H, T)


# ---------------------------------------------------------------------- scores

def object_scores(model: Model, X, train: bool = False, table: Tensor | None = None) -> Tensor:
    """s_o for a batch of regions: M x |O| inner products <f_o(R), class vector>."""
    F = embed_regions(model, X, "object", train)
    return ad.matmul(F, class_vectors(model, "obj", table).T)


def attribute_scores(model: Model, X, train: bool = False, table: Tensor | None = None) -> Tensor:
    F = embed_regions(model, X, "attribute", train)
    return ad.matmul(F, class_vectors(model, "atr", table).T)


def object_loss_from_scores(scores: Tensor, object_mask: np.ndarray, eta: float = 1.0) -> Tensor:
    H = np.asarray(object_mask, dtype=bool)
    M, n_obj = H.shape
    counts = H.sum(axis=1)
    if (counts == 0).any():
        raise ContractError("object loss needs a nonempty label set for every region")
    # D[j, l, k] = eta + s[j, k] - s[j, l]
    D = ad.add(ad.sub(scores.reshape(M, 1, n_obj), scores.reshape(M, n_obj, 1)), eta)
    # the 1/|O| normalizer stays as printed although only |O \ H_j| terms are summed
    W = H[:, :, None] & ~H[:, None, :]
    W = W / (counts[:, None, None] * n_obj * M)
    return ad.sum_(ad.mul(ad.relu(D), W))


def attribute_loss_from_scores(scores: Tensor, attribute_mask: np.ndarray) -> Tensor:
    """Negated printed sum: positives weighted (1 - Gamma), negatives Gamma."""
    Y = np.asarray(attribute_mask, dtype=np.float64)
    M = Y.shape[0]
    if M < 1:
        raise ContractError("attribute loss needs at least one region")
    gamma = Y.mean(axis=0)
    w_pos = Y * (1.0 - gamma) / M
    w_neg = (1.0 - Y) * gamma / M
    pos = ad.mul(ad.log_sigmoid(scores), w_pos)
    neg = ad.mul(ad.log_sigmoid(ad.scale(scores, -1.0)), w_neg)
    return ad.scale(ad.sum_(ad.add(pos, neg)), -1.0)


def object_loss(model: Model, batch: RegionBatch, eta: float = 1.0, train: bool = True,
                table: Tensor | None = None) -> Tensor:
    return object_loss_from_scores(object_scores(model, batch.features, train, table),
                                   batch.object_mask, eta)


def attribute_loss(model: Model, batch: RegionBatch, train: bool = True,
                   table: Tensor | None = None) -> Tensor:
    return attribute_loss_from_scores(attribute_scores(model, batch.features, train, table),
                                      batch.attribute_mask)


def classify_region(model: Model, r, label_set: Sequence[str]) -> list[tuple[str, float]]:
    """Rank arbitrary words against one region with f_o (eval mode).

    Sorted by descending score; equal scores keep ascending word id.
    """
    ids = model.vocab.ids(label_set)
    with ad.no_grad():
        f = embed_regions(model, np.asarray(r, dtype=np.float64)[None, :], "object").data[0]
        G = word_table(model, ids).data
    scores = G @ f
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [(label_set[i], float(scores[i])) for i in order]


# --------------------------------------------------------------------- metrics

@dataclass
class RecognitionReport:
    obj_top1: float             # argmax over leaf categories equals the leaf label
    obj_top1_raw: float         # argmax over all of O equals the annotated label
    obj_top1_closed: float      # argmax over all of O lies in the closed set
    atr_acc: float              # argmax over T lies in T_j
    per_class: dict[str, tuple[int, int]]  # leaf -> (correct, total) for obj_top1


def evaluate_recognition(model: Model, samples: Sequence[RegionSample], ont: Ontology) -> RecognitionReport:
    if not samples:
        return RecognitionReport(float("nan"), float("nan"), float("nan"), float("nan"), {})
    batch = encode_regions(samples, ont)
    with ad.no_grad():
        table = word_table(model)
        so = object_scores(model, batch.features, table=table).data
        sa = attribute_scores(model, batch.features, table=table).data
    leaves = ont.leaves
    leaf_idx = np.array([ont.object_index(o) for o in leaves])
    pred_leaf = leaf_idx[so[:, leaf_idx].argmax(axis=1)]
    pred_raw = so.argmax(axis=1)
    per_class: dict[str, list[int]] = {}
    hit_leaf = hit_raw = hit_closed = hit_atr = 0
    for j, s in enumerate(samples):
        truth = {ont.object_index(o) for o in s.objects}
        ok = pred_leaf[j] in truth
        hit_leaf += ok
        hit_raw += pred_raw[j] in truth
        hit_closed += bool(batch.object_mask[j, pred_raw[j]])
        hit_atr += bool(batch.attribute_mask[j, sa[j].argmax()])
        for o in s.objects:
            c = per_class.setdefault(o, [0, 0])
            c[0] += ok
            c[1] += 1
    n = len(samples)
    return RecognitionReport(hit_leaf / n, hit_raw / n, hit_closed / n, hit_atr / n,
                             {k: (v[0], v[1]) for k, v in per_class.items()})
