"""Shared vision-language representation: word net g, region nets f_o / f_a,
the fixed class vectors of the multitask baseline, and the VQA scoring head.

Parameters live in one flat ``name -> Tensor`` dict whose prefixes group
them by sub-network (``g.``, ``fo.``, ``fa.``, ``h.``, ``vqa.``).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor

MODES = ("svlr", "multitask")
CHECKPOINT_MAGIC = "SVLR-CKPT/1"


class MissingWordError(KeyError):
    def __str__(self):
        return f"word not in vocabulary: {self.args[0]}"


class MissingCategoryError(KeyError):
    def __str__(self):
        return f"unknown category: {self.args[0]}"


class CheckpointError(ValueError):
    pass


@dataclass
class Dims:
    word_dim: int = 16
    region_dim: int = 32
    hidden: int = 24
    embed: int = 8
    bimodal: int = 40

    @classmethod
    def full_scale(cls) -> "Dims":
        # word2vec 300, ResNet pooled 2048, region nets 2048 -> 300, beta 2500
        return cls(word_dim=300, region_dim=2048, hidden=2048, embed=300, bimodal=2500)


class Vocabulary:
    """Words with a lexical POS tag and a frozen base vector each."""

    def __init__(self, words: Sequence[str], pos: Sequence[str], base: np.ndarray):
        base = np.asarray(base, dtype=np.float64)
        if len(words) != len(pos) or base.shape[0] != len(words):
            raise ValueError("words, pos and base rows must align")
        if len(set(words)) != len(words):
            raise ValueError("duplicate word in vocabulary")
        self.words = list(words)
        self.pos = list(pos)
        self.base = base
        self._index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word) -> bool:
        return word in self._index

    def id(self, word: str) -> int:
        try:
            return self._index[word]
        except KeyError:
            raise MissingWordError(word) from None

    def ids(self, words: Sequence[str]) -> list[int]:
        return [self.id(w) for w in words]

    @property
    def dim(self) -> int:
        return self.base.shape[1]

    def __eq__(self, other) -> bool:
        return (isinstance(other, Vocabulary) and self.words == other.words
                and self.pos == other.pos and np.array_equal(self.base, other.base))


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class Model:
    """All trainable state of one experimental arm.

    ``object_ids`` / ``attribute_ids`` are vocabulary ids of the categories
    O and T, in score order.
    """

    def __init__(self, vocab: Vocabulary, object_ids: Sequence[int], attribute_ids: Sequence[int],
                 dims: Dims, mode: str = "svlr", seed: int = 0):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if vocab.dim != dims.word_dim:
            raise ValueError(f"vocabulary dim {vocab.dim} != word_dim {dims.word_dim}")
        self.vocab = vocab
        self.object_ids = np.asarray(object_ids, dtype=np.intp)
        self.attribute_ids = np.asarray(attribute_ids, dtype=np.intp)
        self.dims = dims
        self.mode = mode
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}
        self._category_row = {int(w): ("obj", i) for i, w in enumerate(self.object_ids)}
        self._category_row.update({int(w): ("atr", i) for i, w in enumerate(self.attribute_ids)})
        self._init(np.random.default_rng(seed))

    # ------------------------------------------------------------ construction
    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True)

    def _add_bn(self, name: str, dim: int) -> None:
        self._add(f"{name}.scale", np.ones(dim))
        self._add(f"{name}.offset", np.zeros(dim))
        self.bn[name] = BatchNormState(dim)

    def _init(self, rng: np.random.Generator) -> None:
        d = self.dims
        # g: word_dim -> embed -> embed, biases assumed present
        self._add("g.w1", xavier(rng, d.word_dim, d.embed))
        self._add("g.b1", np.zeros(d.embed))
        self._add("g.w2", xavier(rng, d.embed, d.embed))
        self._add("g.b2", np.zeros(d.embed))
        for head in ("fo", "fa"):
            # pre-BN biases would be cancelled by the normalizer; BN offset is the shift
            self._add(f"{head}.w1", xavier(rng, d.region_dim, d.hidden))
            self._add_bn(f"{head}.bn1", d.hidden)
            self._add(f"{head}.w2", xavier(rng, d.hidden, d.embed))
            self._add_bn(f"{head}.bn2", d.embed)
        if self.mode == "multitask":
            self._add("h.obj", xavier(rng, len(self.object_ids), d.embed))
            self._add("h.atr", xavier(rng, len(self.attribute_ids), d.embed))
        n_img = len(self.object_ids) + len(self.attribute_ids)
        self._add("vqa.w1", xavier(rng, n_img, d.bimodal))
        self._add_bn("vqa.bn1", d.bimodal)
        self._add("vqa.w2", xavier(rng, 5 * d.embed, d.bimodal))
        self._add_bn("vqa.bn2", d.bimodal)
        self._add("vqa.w3", xavier(rng, d.bimodal, 1))

    # ----------------------------------------------------------------- helpers
    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    def trainable(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        ad.zero_grads(self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        out = {k: v.data.copy() for k, v in self.params.items()}
        for k, st in self.bn.items():
            out[f"{k}.running_mean"] = st.mean.copy()
            out[f"{k}.running_var"] = st.var.copy()
        return out

    def category_kind(self, y: int) -> tuple[str, int]:
        try:
            return self._category_row[int(y)]
        except KeyError:
            raise MissingCategoryError(y) from None


# ---------------------------------------------------------------- forward maps

def _check_word_ids(model: Model, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.intp).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= len(model.vocab)):
        bad = [i for i in ids if not 0 <= i < len(model.vocab)]
        raise MissingWordError(bad[0])
    return ids


def word_table(model: Model, ids=None) -> Tensor:
    """g applied to the base vectors of ``ids`` (all words when None)."""
    p = model.params
    base = model.vocab.base if ids is None else model.vocab.base[_check_word_ids(model, ids)]
    h = ad.relu(ad.add(ad.matmul(Tensor(base), p["g.w1"]), p["g.b1"]))
    return ad.add(ad.matmul(h, p["g.w2"]), p["g.b2"])


def embed_word(model: Model, w) -> Tensor:
    if isinstance(w, str):
        w = model.vocab.id(w)
    return word_table(model, [w]).reshape(model.dims.embed)


def embed_regions(model: Model, X, head: str, train: bool = False) -> Tensor:
    """Region features (B x region_dim) -> f_o or f_a embeddings (B x embed)."""
    if head not in ("object", "attribute"):
        raise ValueError("head must be 'object' or 'attribute'")
    X = ad.as_tensor(X)
    if X.data.ndim != 2 or X.shape[1] != model.dims.region_dim:
        raise ad.ShapeError(f"region features must be B x {model.dims.region_dim}, got {X.shape}")
    pre = "fo" if head == "object" else "fa"
    p = model.params
    h = X
    for layer in ("1", "2"):
        h = ad.matmul(h, p[f"{pre}.w{layer}"])
        bn = f"{pre}.bn{layer}"
        h = ad.batch_norm(h, p[f"{bn}.scale"], p[f"{bn}.offset"], model.bn[bn], train)
        h = ad.relu(h)
    return h


def embed_region(model: Model, r, head: str, train: bool = False) -> Tensor:
    r = np.asarray(r.data if isinstance(r, Tensor) else r, dtype=np.float64)
    if r.shape != (model.dims.region_dim,):
        raise ad.ShapeError(f"region feature must have dim {model.dims.region_dim}")
    return embed_regions(model, r[None, :], head, train).reshape(model.dims.embed)


def class_vectors(model: Model, kind: str, table: Tensor | None = None) -> Tensor:
    """Rows for every category of O (``kind='obj'``) or T (``kind='atr'``).

    SVLR mode reads them out of the word table g; multitask mode returns the
    free vectors h_y, which never touch g.
    """
    if model.mode == "multitask":
        return model.params[f"h.{kind}"]
    ids = model.object_ids if kind == "obj" else model.attribute_ids
    if table is None:
        return word_table(model, ids)
    return ad.take(table, ids)


def class_vector(model: Model, y, mode: str | None = None) -> Tensor:
    if isinstance(y, str):
        try:
            y = model.vocab.id(y)
        except MissingWordError:
            raise MissingCategoryError(y) from None
    kind, row = model.category_kind(y)
    if (mode or model.mode) == "svlr":
        return embed_word(model, y)
    if model.mode != "multitask":
        raise ValueError("multitask class vectors requested from an svlr model")
    return ad.take(model.params[f"h.{kind}"], [row]).reshape(model.dims.embed)


# ----------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: Model, meta: dict | None = None) -> None:
    """Write a checkpoint.

    Layout: a text header of newline-terminated lines, then one record per
    array: ``array <name> <rows>x<cols...> <nbytes>\\n`` followed by the raw
    little-endian float64 bytes and a newline. The header carries the magic
    string, mode flag, dims, category words and arbitrary JSON metadata; the
    vocabulary (words, POS tags, base vectors) is stored so a checkpoint is
    self-contained.
    """
    arrays = model.snapshot()
    arrays["vocab.base"] = model.vocab.base
    header = {
        "mode": model.mode,
        "dims": asdict(model.dims),
        "words": model.vocab.words,
        "pos": model.vocab.pos,
        "objects": [model.vocab.words[i] for i in model.object_ids],
        "attributes": [model.vocab.words[i] for i in model.attribute_ids],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC}\n".encode())
        fh.write(f"mode {model.mode}\n".encode())
        fh.write(f"header {json.dumps(header, sort_keys=True)}\n".encode())
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            shape = "x".join(str(n) for n in arr.shape) or "scalar"
            raw = arr.tobytes()
            fh.write(f"array {name} {shape} {len(raw)}\n".encode())
            fh.write(raw)
            fh.write(b"\n")
        fh.write(b"end\n")


def load_checkpoint(path) -> tuple[Model, dict]:
    data = Path(path).read_bytes()
    pos = 0

    def line() -> str:
        nonlocal pos
        j = data.find(b"\n", pos)
        if j < 0:
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = data[pos:j].decode()
        pos = j + 1
        return out

    if line() != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic string")
    mode_line = line().split()
    if len(mode_line) != 2 or mode_line[0] != "mode" or mode_line[1] not in MODES:
        raise CheckpointError(f"{path}: bad mode line")
    head = line()
    if not head.startswith("header "):
        raise CheckpointError(f"{path}: missing header")
    header = json.loads(head[len("header "):])
    arrays: dict[str, np.ndarray] = {}
    while True:
        rec = line()
        if rec == "end":
            break
        parts = rec.split()
        if len(parts) != 4 or parts[0] != "array":
            raise CheckpointError(f"{path}: bad array record {rec!r}")
        _, name, shape, nbytes = parts
        nbytes = int(nbytes)
        dims = () if shape == "scalar" else tuple(int(n) for n in shape.split("x"))
        if pos + nbytes + 1 > len(data):
            raise CheckpointError(f"{path}: truncated array {name}")
        arrays[name] = np.frombuffer(data[pos:pos + nbytes], dtype="<f8").reshape(dims).copy()
        pos += nbytes + 1
    vocab = Vocabulary(header["words"], header["pos"], arrays.pop("vocab.base"))
    model = Model(vocab, vocab.ids(header["objects"]), vocab.ids(header["attributes"]),
                  Dims(**header["dims"]), mode=mode_line[1])
    for name, t in model.params.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if arrays[name].shape != t.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        t.data = arrays[name]
    for name, st in model.bn.items():
        st.mean = arrays[f"{name}.running_mean"]
        st.var = arrays[f"{name}.running_var"]
    return model, header["meta"]
