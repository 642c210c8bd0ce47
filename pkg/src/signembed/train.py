"""InfoNCE objective, Adam, batch construction and the training loop."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import encoder
from .augment import AugmentConfig, apply_augmentations, example_rng, resample
from .checkpoint import Checkpoint
from .data import Pipeline, fit_stats, load_examples
from .encoder import ModelConfig
from .errors import ValidationError
from .pose import DatasetManifest
from .text import Vocabulary, build_vocab, tokenize

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


# ------------------------------------------------------------------- loss


def _log_softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse


def info_nce_loss(S, temperature: float = 0.07, symmetric: bool = True):
    """InfoNCE over an N x N similarity matrix with matched pairs on the diagonal.

    Returns ``(loss, dloss/dS)``. The video-to-text term is the mean over rows
    of ``-log softmax(S[i] / temperature)[i]``; the text-to-video term does the
    same over columns; symmetric mode averages the two.
    """
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"similarity matrix must be square, got {S.shape}")
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    if not np.all(np.isfinite(S)):
        raise ValidationError("similarity matrix contains non-finite values")
    n = S.shape[0]
    logits = S / temperature
    eye = np.eye(n, dtype=S.dtype)
    lp_rows = _log_softmax_rows(logits)
    loss = -np.trace(lp_rows) / n
    grad = (np.exp(lp_rows) - eye) / (n * temperature)
    if symmetric:
        lp_cols = _log_softmax_rows(logits.T)
        loss = 0.5 * (loss - np.trace(lp_cols) / n)
        grad = 0.5 * (grad + ((np.exp(lp_cols) - eye) / (n * temperature)).T)
    return float(loss) + 0.0, grad.astype(S.dtype)  # + 0.0 turns -0.0 into 0.0


# -------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, warmup_steps=0):
        self.lr, self.betas, self.eps, self.warmup = lr, betas, eps, warmup_steps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def current_lr(self) -> float:
        if self.warmup and self.t <= self.warmup:
            return self.lr * self.t / self.warmup
        return self.lr

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.betas
        lr = self.current_lr()
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for k in sorted(grads):
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            if lr:
                upd = lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
                params[k] -= upd.astype(params[k].dtype)


# ---------------------------------------------------------------- batching


def plain_batches(n_items: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches; a trailing batch of one is merged into the previous."""
    order = rng.permutation(n_items)
    batches = [order[i : i + batch_size] for i in range(0, n_items, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def distinct_label_batches(labels, batch_size: int, rng: np.random.Generator):
    """One epoch of batches whose labels are pairwise distinct.

    Labels with the most unused examples are served first (ties in random
    order), so classes are drawn at equal rates when they are balanced.
    Examples left once fewer than ``batch_size`` labels remain are dropped.
    """
    labels = list(labels)
    if any(lab is None for lab in labels):
        return plain_batches(len(labels), batch_size, rng)
    names = sorted(set(labels))
    if len(names) < batch_size:
        raise ValidationError(
            f"only {len(names)} distinct labels for batch size {batch_size}; lower the batch size"
        )
    queues = {}
    for name in names:
        idx = np.array([i for i, lab in enumerate(labels) if lab == name])
        queues[name] = list(rng.permutation(idx))
    batches = []
    while True:
        live = [n for n in names if queues[n]]
        if len(live) < batch_size:
            break
        shuffled = [live[i] for i in rng.permutation(len(live))]
        shuffled.sort(key=lambda n: -len(queues[n]))  # stable: random among equals
        batches.append(np.array([queues[n].pop() for n in shuffled[:batch_size]]))
    return batches


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 25
    lr: float = 1e-4
    warmup_frac: float = 0.05
    temperature: float = 0.07
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    symmetric_loss: bool = True
    distinct_labels: bool = False
    select_by: str = "valid_loss"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValidationError("batch_size must be at least 2")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if self.select_by != "valid_loss":
            raise ValidationError("only validation-loss model selection is supported")
        if isinstance(self.augment, dict):
            object.__setattr__(self, "augment", AugmentConfig(**self.augment))

    def to_dict(self) -> dict:
        return asdict(self)


def model_config_for(options, input_dim: int, vocab_size: int) -> ModelConfig:
    if isinstance(options, ModelConfig):
        return replace(options, input_dim=input_dim, vocab_size=vocab_size)
    opts = dict(options or {})
    opts.update(input_dim=input_dim, vocab_size=vocab_size)
    return ModelConfig(**opts)


# ------------------------------------------------------------------ steps


def _features(examples, config: ModelConfig, dtype):
    return encoder.pad_frames([e.seq.features() for e in examples], dtype)


def batch_loss(params, config: ModelConfig, frames, vlen, ids, tlen, tc: TrainConfig, with_grad=True):
    zv, vcache = encoder.video_forward(params, config, frames, vlen)
    zt, tcache = encoder.text_forward(params, config, ids, tlen)
    S, scache = encoder.similarity(zv, zt, config.similarity)
    loss, dS = info_nce_loss(S, tc.temperature, tc.symmetric_loss)
    if not with_grad:
        return loss, None
    dzv, dzt = encoder.similarity_backward(scache, dS)
    grads = encoder.video_backward(params, config, vcache, dzv)
    grads.update(encoder.text_backward(params, config, tcache, dzt))
    return loss, grads


def evaluate_loss(params, config: ModelConfig, examples, tokens, tc: TrainConfig) -> float:
    """Mean InfoNCE over fixed, ordered chunks of ``examples`` (no augmentation)."""
    n = len(examples)
    if n < 2:
        return 0.0
    n_chunks = max(1, math.ceil(n / tc.batch_size))
    total = 0.0
    dtype = params["video.pos"].dtype
    for chunk in np.array_split(np.arange(n), n_chunks):
        frames, vlen = _features([examples[i] for i in chunk], config, dtype)
        ids, tlen = encoder.pad_tokens([tokens[i] for i in chunk])
        loss, _ = batch_loss(params, config, frames, vlen, ids, tlen, tc, with_grad=False)
        total += loss * len(chunk)
    return total / n


def train(
    manifest: DatasetManifest,
    pipeline: Pipeline,
    model_options,
    tc: TrainConfig,
    vocab: Vocabulary | None = None,
    metrics_path=None,
    max_steps: int | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Contrastive training; returns the minimum-validation-loss checkpoint and the metrics log."""
    max_len = model_options.max_video_len if isinstance(model_options, ModelConfig) else dict(model_options or {}).get("max_video_len", 256)
    if not manifest.split("train") or not manifest.split("valid"):
        raise ValidationError("training needs non-empty train and valid splits")
    stats = fit_stats(manifest, pipeline)
    train_ex, _ = load_examples(manifest, sorted(manifest.split("train"), key=lambda r: r.id), pipeline, stats, max_len)
    valid_ex, _ = load_examples(manifest, sorted(manifest.split("valid"), key=lambda r: r.id), pipeline, stats, max_len)
    if len(train_ex) < 2 or not valid_ex:
        raise ValidationError("not enough examples within the maximum video length")
    vocab = vocab or build_vocab(manifest.records)
    config = model_config_for(model_options, train_ex[0].seq.features().shape[1], len(vocab))
    train_tok = [tokenize(e.prompt, vocab, config.max_text_len) for e in train_ex]
    valid_tok = [tokenize(e.prompt, vocab, config.max_text_len) for e in valid_ex]

    params = encoder.init_params(config, tc.seed, np.float32)
    rng = np.random.default_rng([tc.seed, 1])
    labels = [e.record.label for e in train_ex]
    n_batches = len(_epoch_batches(labels, tc, np.random.default_rng(0)))
    total_steps = tc.epochs * n_batches if max_steps is None else min(max_steps, tc.epochs * n_batches)
    opt = Adam(params, lr=tc.lr, warmup_steps=int(tc.warmup_frac * total_steps))

    best = None
    history = []
    step = 0
    start = time.perf_counter()
    out = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        for epoch in range(1, tc.epochs + 1):
            losses = []
            for b, batch in enumerate(_epoch_batches(labels, tc, rng)):
                if max_steps is not None and step >= max_steps:
                    break
                feats = []
                for i in batch:
                    seq = apply_augmentations(train_ex[i].seq, tc.augment, example_rng(tc.augment.seed + tc.seed, int(i), epoch))
                    if seq.n_frames > config.max_video_len:
                        seq = resample(seq, config.max_video_len)
                    feats.append(seq.features())
                frames, vlen = encoder.pad_frames(feats, np.float32)
                ids, tlen = encoder.pad_tokens([train_tok[i] for i in batch])
                loss, grads = batch_loss(params, config, frames, vlen, ids, tlen, tc)
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b} (ids {[train_ex[i].record.id for i in batch[:5]]}...)")
                opt.step(params, grads)
                losses.append(loss)
                step += 1
            valid_loss = evaluate_loss(params, config, valid_ex, valid_tok, tc)
            row = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)) if losses else float("nan"),
                "valid_loss": valid_loss,
                "wall_time": round(time.perf_counter() - start, 3),
            }
            history.append(row)
            log.info("epoch %d train %.4f valid %.4f", epoch, row["train_loss"], valid_loss)
            if out:
                out.write(json.dumps(row) + "\n")
                out.flush()
            if best is None or valid_loss < best[1]:
                best = ({k: v.copy() for k, v in params.items()}, valid_loss, epoch)
            if max_steps is not None and step >= max_steps:
                break
    finally:
        if out:
            out.close()
    ckpt = Checkpoint(
        config=config,
        params=best[0],
        vocab=vocab,
        pipeline=pipeline,
        stats=stats,
        epoch=best[2],
        valid_loss=best[1],
        train_config=tc.to_dict(),
    )
    return ckpt, history


def _epoch_batches(labels, tc: TrainConfig, rng):
    if tc.distinct_labels:
        return distinct_label_batches(labels, tc.batch_size, rng)
    return plain_batches(len(labels), tc.batch_size, rng)


def validation_loss(ckpt: Checkpoint, manifest: DatasetManifest, split: str = "valid") -> float:
    """Recompute the selection loss of ``ckpt`` on ``split``."""
    tc = TrainConfig(**{k: v for k, v in ckpt.train_config.items()}) if ckpt.train_config else TrainConfig()
    examples, _ = load_examples(
        manifest, sorted(manifest.split(split), key=lambda r: r.id), ckpt.pipeline, ckpt.stats, ckpt.config.max_video_len
    )
    tokens = [tokenize(e.prompt, ckpt.vocab, ckpt.config.max_text_len) for e in examples]
    return evaluate_loss(ckpt.params, ckpt.config, examples, tokens, tc)


def load_train_config(path):
    """Read a training config file: ``{"model", "train", "augment", "preprocess"}``."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    unknown = set(raw) - {"model", "train", "augment", "preprocess"}
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    for section, cls in (("augment", AugmentConfig), ("train", TrainConfig), ("model", ModelConfig)):
        unknown = set(raw.get(section, {})) - {f.name for f in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown {section} keys: {sorted(unknown)}")
    aug = AugmentConfig(**raw.get("augment", {}))
    tc = TrainConfig(**{**raw.get("train", {}), "augment": aug})
    pipeline = Pipeline.from_dict(raw.get("preprocess", {"steps": ["normalize"]}))
    return raw.get("model", {}), tc, pipeline
