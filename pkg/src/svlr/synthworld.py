"""Planted toy universe standing in for word2vec, ResNet features, Visual
Genome and VQA.

Every category gets a latent vector. Region features are a fixed random
projection of the region's object latent plus its attribute latents plus
Gaussian noise; word base vectors are a different projection of the same
latents plus noise. Leaf objects share part of their latent with their root
category, so siblings are confusable. Questions are template generated with
POS and bin tags already attached, and the per-class frequency profile fixes
exactly how often each leaf object appears in the recognition and QA
training splits.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config
from .model import Vocabulary
from .recognition import Ontology, RegionSample, read_ontology, write_ontology
from .vqa import QAImage, QARegion, QASample, Token

SPLITS = ("train", "val", "test")
GRID = 14

ROOT_NAMES = ["animal", "vehicle", "furniture", "food", "plant", "tool", "clothing", "building"]
LEAF_NAMES = {
    "animal": ["dog", "cat", "horse", "bird", "sheep", "cow"],
    "vehicle": ["car", "bus", "bike", "boat", "train", "truck"],
    "furniture": ["chair", "table", "bed", "sofa", "desk", "shelf"],
    "food": ["apple", "pizza", "cake", "bread", "banana", "carrot"],
}
SYNONYMS = {"dog": "puppy", "car": "automobile", "chair": "seat", "apple": "fruit",
            "cat": "kitten", "bus": "coach", "bed": "cot", "pizza": "pie"}
FAMILY_NAMES = ["color", "material", "size", "shape"]
FAMILY_VALUES = {
    "color": ["red", "blue", "green", "yellow", "white", "black", "brown", "pink"],
    "material": ["wooden", "metal", "glass", "plastic", "stone", "cloth", "paper", "rubber"],
}
FUNCTION_WORDS = [("what", "WP"), ("which", "WDT"), ("is", "VBZ"), ("the", "DT"),
                  ("there", "EX"), ("object", "NN")]


class SpecError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = str(path)
        self.lineno = lineno


@dataclass
class WorldSpec:
    seed: int = 0
    n_roots: int = 4
    branching: int = 4
    hypernym_depth: int = 2
    n_families: int = 2
    family_size: int = 6
    latent_dim: int = 8
    word_dim: int = 16
    region_dim: int = 32
    sibling_similarity: float = 0.6
    feature_noise: float = 0.3
    word_noise: float = 0.3
    synonym_noise: float = 0.05     # synonym base vector = category base vector + this much noise
    attribute_strength: float = 1.0
    regions_per_image: int = 4
    options_per_question: int = 6
    n_rec_train: int = 0            # 0 -> sum of the frequency profile
    n_rec_val: int = 320
    n_rec_test: int = 960
    n_qa_train: int = 0
    n_qa_val: int = 600
    n_qa_test: int = 600
    # "name:rec_count:qa_count" entries separated by ';'; "planted" expands to
    # the four-role pattern below; unlisted leaves split the remainder evenly
    frequency_profile: str = "planted"
    planted_rare: int = 8
    planted_common_rec: int = 300
    planted_common_qa: int = 250
    planted_rare_qa: int = 25
    n_synonyms: int = 2
    synonym_rate: float = 0.3
    attr_question_rate: float = 0.5
    object_question_rate: float = 0.25
    center_bias: float = 0.5


@dataclass
class Corpus:
    vocab: Vocabulary
    ontology: Ontology
    recognition: dict[str, list[RegionSample]]
    images: dict[str, QAImage]
    qa: dict[str, list[QASample]]
    synonyms: dict[str, str] = field(default_factory=dict)   # synonym -> category word
    spec: WorldSpec | None = None

    def __eq__(self, other) -> bool:
        return (isinstance(other, Corpus) and self.vocab == other.vocab
                and self.ontology == other.ontology and self.recognition == other.recognition
                and self.images == other.images and self.qa == other.qa
                and self.synonyms == other.synonyms)


# ----------------------------------------------------------------- ontology

def _category_names(spec: WorldSpec):
    if spec.hypernym_depth < 1:
        raise SpecError("hypernym_depth must be >= 1")
    roots = [ROOT_NAMES[i] if i < len(ROOT_NAMES) else f"root{i}" for i in range(spec.n_roots)]
    levels = [roots]
    parents: dict[str, list[str]] = {}
    for depth in range(1, spec.hypernym_depth):
        nxt = []
        for p in levels[-1]:
            pool = LEAF_NAMES.get(p, []) if depth == spec.hypernym_depth - 1 else []
            for b in range(spec.branching):
                name = pool[b] if b < len(pool) else f"{p}_{b}"
                parents[name] = [p]
                nxt.append(name)
        levels.append(nxt)
    fams = [FAMILY_NAMES[i] if i < len(FAMILY_NAMES) else f"family{i}" for i in range(spec.n_families)]
    families: dict[str, str] = {}
    attributes = []
    for f in fams:
        pool = FAMILY_VALUES.get(f, [])
        for i in range(spec.family_size):
            name = pool[i] if i < len(pool) else f"{f}_{i}"
            attributes.append(name)
            families[name] = f
    objects = [o for lvl in levels for o in lvl]
    return Ontology(objects, attributes, parents, families), levels[-1], fams


def _profile(spec: WorldSpec, leaves: list[str]) -> tuple[dict[str, int], dict[str, int]]:
    entries: dict[str, tuple[int, int]] = {}
    text = spec.frequency_profile.strip()
    if text == "planted":
        roles = [(spec.planted_rare, spec.planted_common_qa),
                 (spec.planted_common_rec, spec.planted_common_qa),
                 (spec.planted_common_rec, spec.planted_rare_qa),
                 (spec.planted_rare, spec.planted_rare_qa)]
        per_root = max(1, len(leaves) // max(1, spec.n_roots))
        for i, leaf in enumerate(leaves):
            entries[leaf] = roles[(i % per_root) % len(roles)]
    elif text:
        for item in text.split(";"):
            item = item.strip()
            if not item:
                continue
            parts = item.split(":")
            if len(parts) != 3:
                raise SpecError(f"bad frequency profile entry {item!r}")
            name, r, q = parts
            if name not in leaves:
                raise SpecError(f"frequency profile names unknown leaf {name!r}")
            entries[name] = (int(r), int(q))
    rec: dict[str, int] = {}
    qa: dict[str, int] = {}
    for which, total, out in ((0, spec.n_rec_train, rec), (1, spec.n_qa_train, qa)):
        listed = sum(v[which] for v in entries.values())
        rest = [l for l in leaves if l not in entries]
        if total == 0 and not rest:
            total = listed
        if listed > total:
            raise SpecError(f"frequency profile needs {listed} samples but dataset size is {total}")
        if not rest and listed != total:
            raise SpecError(f"frequency profile sums to {listed}, dataset size is {total}")
        for l, v in entries.items():
            out[l] = v[which]
        if rest:
            base, extra = divmod(total - listed, len(rest))
            for i, l in enumerate(rest):
                out[l] = base + (i < extra)
    return rec, qa


def _validate(spec: WorldSpec) -> None:
    if spec.options_per_question < 2:
        raise SpecError("need at least two options per question")
    if spec.regions_per_image < 1:
        raise SpecError("need at least one region per image")
    if spec.n_families < 1 or spec.family_size < 2:
        raise SpecError("need at least one attribute family with two values")
    if spec.attr_question_rate + spec.object_question_rate > 1.0 + 1e-12:
        raise SpecError("question template rates exceed 1")
    if spec.attr_question_rate > 0 and spec.family_size < spec.options_per_question:
        raise SpecError("attribute questions need family_size >= options_per_question")
    n_leaves = spec.n_roots * spec.branching ** (spec.hypernym_depth - 1)
    if n_leaves < spec.options_per_question + spec.regions_per_image - 1:
        raise SpecError("too few leaf objects for the requested options and regions")
    if spec.object_question_rate > 0 and spec.family_size < spec.regions_per_image:
        raise SpecError("object questions need family_size >= regions_per_image")


# ----------------------------------------------------------------- generator

def _unit(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate(spec: WorldSpec) -> Corpus:
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    ont, leaves, fams = _category_names(spec)
    rec_counts, qa_counts = _profile(spec, leaves)
    L = spec.latent_dim

    # latent concepts: every object mixes its parent's latent with its own
    latent: dict[str, np.ndarray] = {}
    rho = spec.sibling_similarity
    for o in ont.objects:
        own = _unit(rng, 1, L)[0]
        ps = ont.parents.get(o)
        if ps:
            v = rho * latent[ps[0]] + np.sqrt(1 - rho ** 2) * own
            latent[o] = v / np.linalg.norm(v)
        else:
            latent[o] = own
    for t in ont.attributes:
        latent[t] = _unit(rng, 1, L)[0]

    proj_obj = rng.standard_normal((L, spec.region_dim)) / np.sqrt(L)
    proj_atr = rng.standard_normal((L, spec.region_dim)) / np.sqrt(L)
    proj_word = rng.standard_normal((L, spec.word_dim)) / np.sqrt(L)

    # vocabulary: categories, synonyms, function words
    words, pos, base = [], [], []

    def add_word(w, tag, vec):
        words.append(w)
        pos.append(tag)
        base.append(vec)

    for o in ont.objects:
        add_word(o, "NN", latent[o] @ proj_word + spec.word_noise * rng.standard_normal(spec.word_dim))
    for t in ont.attributes:
        add_word(t, "JJ", latent[t] @ proj_word + spec.word_noise * rng.standard_normal(spec.word_dim))
    common_qa = sorted(leaves, key=lambda l: (-qa_counts[l], leaves.index(l)))
    synonyms: dict[str, str] = {}
    for leaf in common_qa[:spec.n_synonyms]:
        syn = SYNONYMS.get(leaf, f"{leaf}_alias")
        synonyms[syn] = leaf
        add_word(syn, "NN", base[words.index(leaf)] + spec.synonym_noise * rng.standard_normal(spec.word_dim))
    # unaligned words at the same per-entry scale as the category words
    for f in fams:
        add_word(f, "NN", rng.standard_normal(spec.word_dim) / np.sqrt(L))
    for w, tag in FUNCTION_WORDS:
        add_word(w, tag, rng.standard_normal(spec.word_dim) / np.sqrt(L))
    vocab = Vocabulary(words, pos, np.array(base))

    by_family = {f: [t for t in ont.attributes if ont.families[t] == f] for f in fams}

    def features(obj: str, attrs: list[str]) -> np.ndarray:
        v = latent[obj] @ proj_obj
        for a in attrs:
            v = v + spec.attribute_strength * (latent[a] @ proj_atr)
        return v + spec.feature_noise * rng.standard_normal(spec.region_dim)

    def random_attrs() -> list[str]:
        return [by_family[f][rng.integers(len(by_family[f]))] for f in fams]

    def balanced(n: int) -> list[str]:
        labels = [leaves[i % len(leaves)] for i in range(n)]
        rng.shuffle(labels)
        return labels

    def scheduled(counts: dict[str, int]) -> list[str]:
        labels = [l for l in leaves for _ in range(counts[l])]
        rng.shuffle(labels)
        return labels

    recognition: dict[str, list[RegionSample]] = {}
    sizes = {"train": None, "val": spec.n_rec_val, "test": spec.n_rec_test}
    for split in SPLITS:
        labels = scheduled(rec_counts) if split == "train" else balanced(sizes[split])
        regs = []
        for i, c in enumerate(labels):
            attrs = random_attrs()
            regs.append(RegionSample(f"g{split[:2]}{i:06d}", f"gimg-{split}-{i // 4:05d}",
                                     features(c, attrs), [c], attrs))
        recognition[split] = regs

    images: dict[str, QAImage] = {}
    qa: dict[str, list[QASample]] = {}
    K, n_opt = spec.regions_per_image, spec.options_per_question
    qsizes = {"train": None, "val": spec.n_qa_val, "test": spec.n_qa_test}
    for split in SPLITS:
        targets = scheduled(qa_counts) if split == "train" else balanced(qsizes[split])
        samples = []
        for i, c in enumerate(targets):
            qid = f"q{split[:2]}{i:06d}"
            img_id = f"vimg-{split}-{i:06d}"
            u = rng.random()
            if u < spec.attr_question_rate:
                kind = "attribute"
            elif u < spec.attr_question_rate + spec.object_question_rate:
                kind = "object"
            else:
                kind = "existence"
            others = list(rng.choice([l for l in leaves if l != c], size=K - 1, replace=False))
            objs = [c, *others]
            attrs = [random_attrs() for _ in range(K)]
            fam_i = int(rng.integers(len(fams)))
            if kind == "object":
                # queried attribute must single out the target region
                values = list(rng.permutation(by_family[fams[fam_i]])[:K])
                for r in range(K):
                    attrs[r][fam_i] = values[r]
            order = rng.permutation(K)
            boxes = _boxes(rng, K, spec.center_bias)
            regions = []
            for slot, r in enumerate(order):
                regions.append(QARegion(f"{img_id}-r{slot}", boxes[r],
                                        features(objs[r], attrs[r]), [objs[r]], attrs[r]))
            relevant = int(np.flatnonzero(order == 0)[0])
            images[img_id] = QAImage(img_id, regions)

            noun = c
            syn = [s for s, base_word in synonyms.items() if base_word == c]
            if syn and rng.random() < spec.synonym_rate:
                noun = syn[0]
            if kind == "attribute":
                fam = fams[fam_i]
                answer = attrs[0][fam_i]
                tokens = [Token("what", "WP", 1), Token(fam, "NN", 1), Token("is", "VBZ", 4),
                          Token("the", "DT", 4), Token(noun, "NN", 2)]
                pool = [t for t in by_family[fam] if t != answer]
                distract = list(rng.choice(pool, size=n_opt - 1, replace=False))
                tag = "JJ"
                template = f"what_{fam}"
            elif kind == "object":
                answer = c
                tokens = [Token("which", "WDT", 1), Token("object", "NN", 1), Token("is", "VBZ", 4),
                          Token(attrs[0][fam_i], "JJ", 4)]
                pool = [l for l in leaves if l != c]
                distract = list(rng.choice(pool, size=n_opt - 1, replace=False))
                tag = "NN"
                template = "which_object"
            else:
                answer = c
                tokens = [Token("what", "WP", 1), Token("is", "VBZ", 4), Token("there", "EX", 4)]
                pool = [l for l in leaves if l not in objs]
                distract = list(rng.choice(pool, size=n_opt - 1, replace=False))
                tag = "NN"
                template = "what_is_there"
            correct = int(rng.integers(n_opt))
            opts = [str(d) for d in distract]
            opts.insert(correct, answer)
            options = [[Token(o, tag)] for o in opts]
            samples.append(QASample(qid, img_id, tokens, options, correct, relevant, template))
        qa[split] = samples
    return Corpus(vocab, ont, recognition, images, qa, synonyms, dataclasses.replace(spec))


def _boxes(rng, K: int, center_bias: float) -> list[tuple[int, int, int, int]]:
    boxes = []
    for k in range(K):   # k == 0 is the target region
        h, w = (int(v) for v in rng.integers(4, 9, size=2))
        if k == 0 and rng.random() < center_bias:
            r0 = int(np.clip(round(GRID / 2 - h / 2 + rng.normal(0, 1)), 0, GRID - h))
            c0 = int(np.clip(round(GRID / 2 - w / 2 + rng.normal(0, 1)), 0, GRID - w))
        else:
            r0 = int(rng.integers(0, GRID - h + 1))
            c0 = int(rng.integers(0, GRID - w + 1))
        boxes.append((r0, c0, r0 + h, c0 + w))
    return boxes


def class_counts(corpus: Corpus) -> tuple[dict[str, int], dict[str, int]]:
    """Per-leaf training frequencies: recognition regions and QA target mentions."""
    rec: dict[str, int] = {}
    for r in corpus.recognition["train"]:
        for o in r.objects:
            rec[o] = rec.get(o, 0) + 1
    qa: dict[str, int] = {}
    for s in corpus.qa["train"]:
        img = corpus.images[s.image_id]
        for o in img.regions[s.relevant].objects:
            qa[o] = qa.get(o, 0) + 1
    return rec, qa


# ------------------------------------------------------------------- file I/O

def _floats(v) -> str:
    return " ".join(repr(float(x)) for x in v)


def _parse_floats(text: str, path, lineno: int, dim: int | None = None) -> np.ndarray:
    try:
        arr = np.array([float(x) for x in text.split()], dtype=np.float64)
    except ValueError:
        raise ParseError(path, lineno, "bad number in feature list") from None
    if dim is not None and arr.size != dim:
        raise ParseError(path, lineno, f"expected {dim} values, got {arr.size}")
    return arr


def _labels(text: str) -> list[str]:
    return [x for x in text.split(",") if x] if text != "-" else []


def _fmt_labels(xs) -> str:
    return ",".join(xs) if xs else "-"


def write_corpus(corpus: Corpus, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if corpus.spec is not None:
        (d / "world.txt").write_text(config.dump(corpus.spec))
    lines = [f"{w}\t{p}\t{_floats(v)}" for w, p, v in zip(corpus.vocab.words, corpus.vocab.pos, corpus.vocab.base)]
    (d / "vocab.tsv").write_text("\n".join(lines) + "\n")
    write_ontology(d / "ontology.txt", corpus.ontology)
    (d / "synonyms.tsv").write_text("".join(f"{s}\t{w}\n" for s, w in corpus.synonyms.items()))
    for split in SPLITS:
        rows = [f"{r.region_id}\t{r.image_id}\t{_fmt_labels(r.objects)}\t{_fmt_labels(r.attributes)}\t{_floats(r.features)}"
                for r in corpus.recognition.get(split, [])]
        (d / f"recognition_{split}.tsv").write_text("".join(x + "\n" for x in rows))
    out = []
    for img in corpus.images.values():
        out.append(f"image {img.image_id} {len(img.regions)}")
        for r in img.regions:
            out.append(f"{r.region_id}\t{','.join(map(str, r.box))}\t{_fmt_labels(r.objects)}\t"
                       f"{_fmt_labels(r.attributes)}\t{_floats(r.features)}")
    (d / "qa_images.txt").write_text("".join(x + "\n" for x in out))
    for split in SPLITS:
        out = []
        for s in corpus.qa.get(split, []):
            out.append(f"qa {s.qid} image={s.image_id} correct={s.correct} relevant={s.relevant} "
                       f"template={s.template or '-'} options={len(s.options)}")
            out.append("Q " + " ".join(f"{t.word}/{t.pos}/{t.bin}" for t in s.tokens))
            for opt in s.options:
                out.append("A " + " ".join(f"{t.word}/{t.pos}" for t in opt))
            out.append("end")
        (d / f"qa_{split}.txt").write_text("".join(x + "\n" for x in out))


def read_corpus(directory) -> Corpus:
    d = Path(directory)
    spec = config.load(d / "world.txt", WorldSpec()) if (d / "world.txt").exists() else None

    path = d / "vocab.tsv"
    words, pos, base = [], [], []
    dim = None
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(path, lineno, "expected word<TAB>pos<TAB>vector")
        vec = _parse_floats(parts[2], path, lineno, dim)
        dim = vec.size
        words.append(parts[0])
        pos.append(parts[1])
        base.append(vec)
    vocab = Vocabulary(words, pos, np.array(base).reshape(len(words), dim or 0))
    ont = read_ontology(d / "ontology.txt")

    synonyms = {}
    path = d / "synonyms.tsv"
    if path.exists():
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(path, lineno, "expected synonym<TAB>word")
            synonyms[parts[0]] = parts[1]

    recognition = {}
    for split in SPLITS:
        path = d / f"recognition_{split}.tsv"
        regs = []
        if path.exists():
            rdim = None
            for lineno, line in enumerate(path.read_text().splitlines(), 1):
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 5:
                    raise ParseError(path, lineno, "expected 5 tab-separated fields")
                feats = _parse_floats(parts[4], path, lineno, rdim)
                rdim = feats.size
                regs.append(RegionSample(parts[0], parts[1], feats, _labels(parts[2]), _labels(parts[3])))
        recognition[split] = regs

    images: dict[str, QAImage] = {}
    path = d / "qa_images.txt"
    if path.exists():
        lines = path.read_text().splitlines()
        i = 0
        while i < len(lines):
            line = lines[i]
            i += 1
            if not line.strip():
                continue
            head = line.split()
            if len(head) != 3 or head[0] != "image":
                raise ParseError(path, i, "expected 'image <id> <n_regions>'")
            try:
                n = int(head[2])
            except ValueError:
                raise ParseError(path, i, "bad region count") from None
            regions = []
            for _ in range(n):
                if i >= len(lines):
                    raise ParseError(path, i, f"image {head[1]} truncated: expected {n} regions")
                parts = lines[i].split("\t")
                i += 1
                if len(parts) != 5:
                    raise ParseError(path, i, "expected 5 tab-separated region fields")
                try:
                    box = tuple(int(x) for x in parts[1].split(","))
                except ValueError:
                    raise ParseError(path, i, "bad box") from None
                if len(box) != 4:
                    raise ParseError(path, i, "box needs 4 integers")
                regions.append(QARegion(parts[0], box, _parse_floats(parts[4], path, i),
                                        _labels(parts[2]), _labels(parts[3])))
            images[head[1]] = QAImage(head[1], regions)

    qa = {}
    for split in SPLITS:
        path = d / f"qa_{split}.txt"
        qa[split] = _read_qa(path) if path.exists() else []
    return Corpus(vocab, ont, recognition, images, qa, synonyms, spec)


def _read_qa(path) -> list[QASample]:
    lines = Path(path).read_text().splitlines()
    out = []
    i = 0

    def token(text, lineno, with_bin):
        parts = text.split("/")
        if len(parts) != (3 if with_bin else 2):
            raise ParseError(path, lineno, f"bad token {text!r}")
        if with_bin:
            try:
                return Token(parts[0], parts[1], int(parts[2]))
            except ValueError:
                raise ParseError(path, lineno, f"bad bin tag in {text!r}") from None
        return Token(parts[0], parts[1])

    while i < len(lines):
        line = lines[i]
        i += 1
        if not line.strip():
            continue
        head = line.split()
        if head[0] != "qa" or len(head) != 7:
            raise ParseError(path, i, "expected a 'qa' record header")
        start = i
        try:
            fields = dict(kv.split("=", 1) for kv in head[2:])
            n_opt = int(fields["options"])
            correct = int(fields["correct"])
            relevant = int(fields["relevant"])
            image_id = fields["image"]
            template = "" if fields["template"] == "-" else fields["template"]
        except (ValueError, KeyError):
            raise ParseError(path, i, "malformed qa header fields") from None
        if i >= len(lines) or not lines[i].startswith("Q"):
            raise ParseError(path, i + 1, f"record {head[1]} truncated: missing question line")
        tokens = [token(t, i + 1, True) for t in lines[i].split()[1:]]
        i += 1
        options = []
        for _ in range(n_opt):
            if i >= len(lines) or not lines[i].startswith("A "):
                raise ParseError(path, i + 1, f"record {head[1]} truncated: expected {n_opt} answer lines")
            options.append([token(t, i + 1, False) for t in lines[i].split()[1:]])
            i += 1
        if i >= len(lines) or lines[i].strip() != "end":
            raise ParseError(path, i + 1, f"record {head[1]} starting at line {start} not terminated by 'end'")
        i += 1
        try:
            out.append(QASample(head[1], image_id, tokens, options, correct, relevant, template))
        except ValueError as e:
            raise ParseError(path, start, str(e)) from None
    return out
