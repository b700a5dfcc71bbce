"""Joint optimisation of the answer, object and attribute losses.

One step draws an independent recognition batch and QA batch, sums the
alpha-weighted losses, runs a single backward pass and applies Adam with an
additive weight-decay term and a step-wise exponentially decaying learning
rate.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import evalkit
from .model import Dims, Model, save_checkpoint, word_table
from .recognition import RegionBatch, attribute_loss, encode_regions, object_loss
from .synthworld import Corpus
from .vqa import QABatch, answer_loss, collate, encode_qa

log = logging.getLogger(__name__)

ARMS = ("vqa_only", "genome_only", "joint_multitask", "joint_svlr", "zero_shot")
METRIC_FIELDS = ("step", "lr", "loss_total", "loss_ans", "loss_obj", "loss_atr",
                 "vqa_val_acc", "obj_top1", "atr_acc")


class TrainingAborted(RuntimeError):
    pass


@dataclass
class RunConfig:
    arm: str = "joint_svlr"
    # None picks the arm preset: single-task arms get 1/0/0, joint arms
    # (1, 0.1, 0.1) for transfer to VQA or (0.1, 1, 1) for transfer to VR
    alpha_ans: float | None = None
    alpha_obj: float | None = None
    alpha_atr: float | None = None
    direction: str = "vqa"
    eta_ans: float = 1.0
    eta_obj: float = 1.0
    region_batch: int = 64
    question_batch: int = 16
    lr: float = 3e-3
    lr_decay: float = 0.5
    lr_interval: int = 0          # 0 -> steps // 4
    weight_decay: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 3000
    pretrain_steps: int = 0       # genome-only steps before the main phase
    eval_every: int = 500
    seed: int = 0
    hidden: int = 24
    embed: int = 8
    bimodal: int = 128

    @classmethod
    def full_scale(cls, arm: str = "joint_svlr", **kw) -> "RunConfig":
        base = dict(region_batch=200, question_batch=50, lr=1e-3, lr_interval=24000,
                    hidden=2048, embed=300, bimodal=2500)
        base.update(kw)
        return cls(arm=arm, **base)

    def alphas(self) -> tuple[float, float, float]:
        if self.arm not in ARMS:
            raise ValueError(f"unknown arm {self.arm!r}; expected one of {ARMS}")
        if self.arm == "vqa_only":
            preset = (1.0, 0.0, 0.0)
        elif self.arm in ("genome_only", "zero_shot"):
            preset = (0.0, 1.0, 1.0)
        elif self.direction == "vqa":
            preset = (1.0, 0.1, 0.1)
        elif self.direction == "vr":
            preset = (0.1, 1.0, 1.0)
        else:
            raise ValueError("direction must be 'vqa' or 'vr'")
        given = (self.alpha_ans, self.alpha_obj, self.alpha_atr)
        return tuple(p if g is None else float(g) for g, p in zip(given, preset))

    @property
    def mode(self) -> str:
        return "multitask" if self.arm == "joint_multitask" else "svlr"

    def interval(self) -> int:
        return self.lr_interval or max(1, self.steps // 4)


def lr_at(step: int, init: float = 1e-3, decay: float = 0.5, interval: int = 24000) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    return init * decay ** (step // interval)


class Adam:
    """Adam with bias correction; weight decay enters as lambda * theta on the gradient."""

    def __init__(self, params: dict[str, ad.Tensor], beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data = p.data - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class LossBreakdown:
    total: float
    ans: float
    obj: float
    atr: float


def joint_step(cfg: RunConfig, model: Model, opt: Adam, recog: RegionBatch | None,
               qa: QABatch | None, step: int, alphas=None) -> LossBreakdown:
    a_ans, a_obj, a_atr = alphas if alphas is not None else cfg.alphas()
    model.zero_grad()
    try:
        G = word_table(model)
        terms = []
        parts = {"ans": 0.0, "obj": 0.0, "atr": 0.0}
        if a_obj and recog is not None:
            l = object_loss(model, recog, cfg.eta_obj, train=True, table=G)
            parts["obj"] = l.item()
            terms.append(ad.scale(l, a_obj))
        if a_atr and recog is not None:
            l = attribute_loss(model, recog, train=True, table=G)
            parts["atr"] = l.item()
            terms.append(ad.scale(l, a_atr))
        if a_ans and qa is not None:
            l = answer_loss(model, qa, cfg.eta_ans, train=True)
            parts["ans"] = l.item()
            terms.append(ad.scale(l, a_ans))
        total = terms[0] if terms else None
        for t in terms[1:]:
            total = ad.add(total, t)
        if total is not None:
            ad.backward(total)
        lr = lr_at(step, cfg.lr, cfg.lr_decay, cfg.interval())
        opt.step(lr)
        for k, p in model.params.items():
            if not np.all(np.isfinite(p.data)):
                raise ad.NonFiniteError(f"parameter {k} became non-finite")
    except ad.NonFiniteError as e:
        norms = {k: float(np.linalg.norm(np.nan_to_num(v.data))) for k, v in model.params.items()}
        raise TrainingAborted(f"non-finite value at step {step}: {e}; parameter norms {norms}") from e
    value = a_ans * parts["ans"] + a_obj * parts["obj"] + a_atr * parts["atr"]
    return LossBreakdown(value, parts["ans"], parts["obj"], parts["atr"])


# ------------------------------------------------------------------ data

@dataclass
class EncodedCorpus:
    recognition: dict[str, RegionBatch]
    qa: dict[str, QABatch | None]


def encode_corpus(corpus: Corpus) -> EncodedCorpus:
    rec = {s: encode_regions(v, corpus.ontology) for s, v in corpus.recognition.items()}
    qa = {}
    for s, samples in corpus.qa.items():
        items = [encode_qa(q, corpus.images[q.image_id], corpus.vocab) for q in samples]
        qa[s] = collate(items) if items else None
    return EncodedCorpus(rec, qa)


def subset_regions(b: RegionBatch, idx) -> RegionBatch:
    return RegionBatch(b.features[idx], b.object_mask[idx], b.attribute_mask[idx])


def subset_qa(b: QABatch, idx) -> QABatch:
    return QABatch(*(getattr(b, f)[idx] for f in QABatch.__dataclass_fields__))


def build_model(cfg: RunConfig, corpus: Corpus) -> Model:
    dims = Dims(word_dim=corpus.vocab.dim, region_dim=_region_dim(corpus),
                hidden=cfg.hidden, embed=cfg.embed, bimodal=cfg.bimodal)
    ont = corpus.ontology
    return Model(corpus.vocab, corpus.vocab.ids(ont.objects), corpus.vocab.ids(ont.attributes),
                 dims, mode=cfg.mode, seed=cfg.seed)


def _region_dim(corpus: Corpus) -> int:
    for regs in corpus.recognition.values():
        if regs:
            return regs[0].features.size
    for img in corpus.images.values():
        return img.regions[0].features.size
    raise ValueError("corpus has no regions")


# ------------------------------------------------------------------- runs

@dataclass
class RunArtifacts:
    model: Model
    metrics: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.metrics)


def metrics_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in METRIC_FIELDS])
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def evaluate_arm(cfg: RunConfig, model: Model, corpus: Corpus, enc: EncodedCorpus, split: str = "val") -> dict:
    zero_shot = cfg.arm == "zero_shot"
    vqa = enc.qa.get(split)
    acc = evalkit.accuracy_on_batch(model, vqa, zero_shot=zero_shot) if vqa is not None else float("nan")
    rec = evalkit.recognition_report(model, corpus, split)
    return {"vqa_val_acc": acc, "obj_top1": rec.obj_top1, "atr_acc": rec.atr_acc}


def run_arm(cfg: RunConfig, corpus: Corpus, out_dir=None, enc: EncodedCorpus | None = None) -> RunArtifacts:
    """Train one arm to completion, logging every ``eval_every`` steps."""
    enc = enc or encode_corpus(corpus)
    model = build_model(cfg, corpus)
    opt = Adam(model.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 7])
    out = Path(out_dir) if out_dir is not None else None
    arts = RunArtifacts(model)
    meta = {"arm": cfg.arm, "seed": cfg.seed}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "checkpoint_init.ckpt"
        save_checkpoint(path, model, {**meta, "step": 0})
        arts.checkpoints.append(path)

    rec_train = enc.recognition["train"]
    qa_train = enc.qa.get("train")
    n_rec = len(rec_train)
    n_qa = len(qa_train) if qa_train is not None else 0
    main_alphas = cfg.alphas()
    total_steps = cfg.pretrain_steps + cfg.steps

    row = {"step": 0, "lr": lr_at(0, cfg.lr, cfg.lr_decay, cfg.interval())}
    row.update(evaluate_arm(cfg, model, corpus, enc))
    arts.metrics.append(row)
    acc = {"total": [], "ans": [], "obj": [], "atr": []}
    for step in range(total_steps):
        alphas = (0.0, 1.0, 1.0) if step < cfg.pretrain_steps else main_alphas
        recog = qa = None
        if (alphas[1] or alphas[2]) and n_rec:
            recog = subset_regions(rec_train, rng.choice(n_rec, size=min(cfg.region_batch, n_rec), replace=False))
        if alphas[0] and n_qa:
            qa = subset_qa(qa_train, rng.choice(n_qa, size=min(cfg.question_batch, n_qa), replace=False))
        lb = joint_step(cfg, model, opt, recog, qa, step, alphas)
        for k in acc:
            acc[k].append(getattr(lb, k))
        done = step + 1
        if done % cfg.eval_every == 0 or done == total_steps:
            row = {"step": done, "lr": lr_at(step, cfg.lr, cfg.lr_decay, cfg.interval()),
                   "loss_total": float(np.mean(acc["total"])), "loss_ans": float(np.mean(acc["ans"])),
                   "loss_obj": float(np.mean(acc["obj"])), "loss_atr": float(np.mean(acc["atr"]))}
            row.update(evaluate_arm(cfg, model, corpus, enc))
            arts.metrics.append(row)
            log.info("%s seed=%d step=%d loss=%.4f vqa=%.3f obj=%.3f", cfg.arm, cfg.seed, done,
                     row["loss_total"], row["vqa_val_acc"], row["obj_top1"])
            acc = {k: [] for k in acc}
    if out is not None:
        path = out / "checkpoint_final.ckpt"
        save_checkpoint(path, model, {**meta, "step": total_steps})
        arts.checkpoints.append(path)
        (out / "metrics.csv").write_text(arts.metrics_csv())
    return arts


def arm_config(arm: str, seed: int, base: RunConfig | None = None, **kw) -> RunConfig:
    return replace(base or RunConfig(), arm=arm, seed=seed, **kw)
