"""Classification on frozen embeddings: zero-shot prompts, few-shot KNN,
linear probe, and sign-language identification."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import load_examples
from .errors import ValidationError
from .retrieval import aggregate, first_relevant_rank, rank_all, rank_order
from .text import Prompt, build_prompt, parse_prompt

log = logging.getLogger(__name__)


def _as_prompts(prompts) -> list[Prompt]:
    out = [parse_prompt(p) if isinstance(p, str) else p for p in prompts]
    rendered = [p.render() for p in out]
    if len(set(rendered)) != len(rendered):
        raise ValidationError("class prompts must be unique")
    return out


def _video_embedding(ckpt, video) -> np.ndarray:
    if isinstance(video, np.ndarray):
        return video
    return ckpt.embed_video(video)


def zero_shot_classify(ckpt, video, class_prompts) -> list[tuple[str, float]]:
    """Rank class prompts by similarity to ``video`` (a raw PoseSequence or an embedding)."""
    prompts = _as_prompts(class_prompts)
    if len(prompts) < 2:
        raise ValidationError("zero-shot classification needs at least 2 classes")
    zv = _video_embedding(ckpt, video)
    scores = ckpt.scores(zv, ckpt.embed_prompts(prompts))[0]
    order = rank_order(scores)
    return [(prompts[i].render(), float(scores[i])) for i in order]


def identify_language(ckpt, video, tags, spoken: str = "en") -> list[tuple[str, float]]:
    """Rank sign-language tags with content-free prompts such as ``<en> <ase>``."""
    tags = list(tags)
    if len(set(tags)) != len(tags):
        raise ValidationError("language tags must be unique")
    if not tags:
        raise ValidationError("need at least one language tag")
    prompts = [build_prompt("", spoken, t) for t in tags]
    zv = _video_embedding(ckpt, video)
    scores = ckpt.scores(zv, ckpt.embed_prompts(prompts))[0]
    return [(tags[i], float(scores[i])) for i in rank_order(scores)]


# -------------------------------------------------------------------- KNN


@dataclass
class SupportSet:
    """Labelled support embeddings; ``examples[label]`` is an (n, d) array."""

    examples: dict[str, np.ndarray]

    def __post_init__(self):
        if not self.examples:
            raise ValidationError("support set is empty")
        for label, emb in self.examples.items():
            if len(emb) < 1:
                raise ValidationError(f"class {label!r} has no support examples")

    @property
    def labels(self) -> list[str]:
        return sorted(self.examples)

    def stacked(self):
        labels, rows = [], []
        for lab in self.labels:
            labels.extend([lab] * len(self.examples[lab]))
            rows.append(self.examples[lab])
        return np.concatenate(rows).astype(np.float64), labels

    def __len__(self):
        return sum(len(v) for v in self.examples.values())


def _unit(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def knn_rank(support: SupportSet, query, k: int = 5) -> list[str]:
    """Labels ordered by KNN vote under cosine similarity.

    Voted labels come first, by (count desc, summed similarity desc, label);
    the rest follow by their best single similarity.
    """
    X, labels = support.stacked()
    if not 1 <= k <= len(labels):
        raise ValidationError(f"k must lie in [1, {len(labels)}], got {k}")
    sims = _unit(X) @ _unit(query)
    order = rank_order(sims)[:k]
    votes = Counter(labels[i] for i in order)
    summed = Counter()
    for i in order:
        summed[labels[i]] += sims[i]
    voted = sorted(votes, key=lambda lab: (-votes[lab], -summed[lab], lab))
    best = {}
    for s, lab in zip(sims, labels):
        best[lab] = max(best.get(lab, -np.inf), s)
    rest = sorted((lab for lab in best if lab not in votes), key=lambda lab: (-best[lab], lab))
    return voted + rest


def knn_classify(support: SupportSet, query, k: int = 5) -> str:
    return knn_rank(support, query, k)[0]


def sample_support(records, shots: int, seed: int) -> dict[str, list]:
    """Up to ``shots`` train records per label, sampled without replacement."""
    rng = np.random.default_rng(seed)
    by_label: dict[str, list] = {}
    for r in sorted(records, key=lambda r: r.id):
        if r.split == "train" and r.label is not None:
            by_label.setdefault(r.label, []).append(r)
    picked = {}
    for lab in sorted(by_label):
        pool = by_label[lab]
        n = min(shots, len(pool))
        picked[lab] = [pool[i] for i in sorted(rng.choice(len(pool), size=n, replace=False))]
    return picked


def build_support(manifest, ckpt, shots: int = 10, seed: int = 0, labels=None) -> SupportSet:
    """Embed a seeded few-shot sample of the train split with the frozen checkpoint."""
    picked = sample_support(manifest.records, shots, seed)
    for lab in labels or ():
        if lab not in picked:
            log.warning("class %r has no train examples; omitted from the support set", lab)
    examples = {}
    for lab, recs in picked.items():
        exs, _ = load_examples(manifest, recs, ckpt.pipeline, ckpt.stats, ckpt.config.max_video_len, test_time=True)
        if exs:
            examples[lab] = ckpt.embed_sequences([e.seq for e in exs])
    return SupportSet(examples)


# ----------------------------------------------------------- linear probe


@dataclass
class ProbeModel:
    weights: np.ndarray  # d x C
    bias: np.ndarray  # C
    labels: list[str]
    objective: float = float("nan")
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ValidationError("a probe needs at least 2 classes")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("probe parameters must be finite")


def probe_objective(w_flat, X, y, n_classes, l2):
    """Mean cross-entropy + l2/2 * ||W||^2 and its gradient (bias unpenalized)."""
    d = X.shape[1]
    W = w_flat[: d * n_classes].reshape(d, n_classes)
    b = w_flat[d * n_classes :]
    logits = X @ W + b
    logits -= logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -logp[np.arange(n), y].mean() + 0.5 * l2 * (W * W).sum()
    P = np.exp(logp)
    P[np.arange(n), y] -= 1.0
    P /= n
    gW = X.T @ P + l2 * W
    return loss, np.concatenate([gW.ravel(), P.sum(axis=0)])


def linear_probe_train(embeddings, labels, l2_penalty: float = 1e-2, tol: float = 1e-5, max_iter: int = 5000) -> ProbeModel:
    """Multinomial logistic regression from zero initialization (L-BFGS)."""
    X = np.asarray(embeddings, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValidationError("embeddings must be finite")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValidationError("a probe needs at least 2 classes")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[lab] for lab in labels])
    d, C = X.shape[1], len(classes)
    history = []

    def record(xk):
        history.append(probe_objective(xk, X, y, C, l2_penalty)[0])

    x0 = np.zeros(d * C + C)
    history.append(probe_objective(x0, X, y, C, l2_penalty)[0])
    res = minimize(
        probe_objective, x0, args=(X, y, C, l2_penalty), jac=True, method="L-BFGS-B",
        callback=record, options={"gtol": tol, "maxiter": max_iter, "ftol": 0.0, "maxcor": 20},
    )
    W = res.x[: d * C].reshape(d, C)
    b = res.x[d * C :]
    return ProbeModel(W, b, classes, float(res.fun), history)


def linear_probe_predict(probe: ProbeModel, embedding) -> list[str]:
    """Class labels ranked by logit (ties by class order)."""
    z = np.asarray(embedding, dtype=np.float64)
    if z.shape[-1] != probe.weights.shape[0]:
        raise ValidationError(f"embedding dimension {z.shape[-1]} != probe dimension {probe.weights.shape[0]}")
    logits = z @ probe.weights + probe.bias
    return [probe.labels[i] for i in rank_order(logits)]


# ------------------------------------------------------------- evaluation


def evaluate_islr(ckpt, manifest, mode: str = "zero", shots: int = 10, k: int = 5, seed: int = 0,
                  ks=(1, 5, 10), spoken: str = "en", signed: str | None = None, l2_penalty: float = 1e-2) -> dict:
    """Isolated sign recognition on the test split, reported like retrieval (R@k, MedianR).

    The class pool is the set of train-split labels; test records with other
    labels are skipped.
    """
    if mode not in ("zero", "knn", "probe"):
        raise ValidationError(f"mode must be zero, knn or probe, got {mode!r}")
    classes = sorted({r.label for r in manifest.split("train") if r.label is not None})
    if len(classes) < 2:
        raise ValidationError("need at least 2 labelled classes in the train split")
    test = sorted((r for r in manifest.split("test") if r.label is not None), key=lambda r: r.id)
    skipped = [{"id": r.id, "reason": "label not in train split"} for r in test if r.label not in classes]
    test = [r for r in test if r.label in classes]
    examples, missing = load_examples(manifest, test, ckpt.pipeline, ckpt.stats, ckpt.config.max_video_len, test_time=True, strict=False)
    skipped += missing
    if not examples:
        raise ValidationError("no usable test examples")
    Z = ckpt.embed_sequences([e.seq for e in examples])
    truth = [e.record.label for e in examples]
    ids = [e.record.id for e in examples]
    if mode == "zero":
        if signed is None:
            signed = Counter(e.record.signed_lang for e in examples).most_common(1)[0][0]
        prompts = [build_prompt(c, spoken, signed) for c in classes]
        S = ckpt.scores(Z, ckpt.embed_prompts(prompts))
    else:
        if mode == "knn":
            support = build_support(manifest, ckpt, shots, seed, classes)
            ranked_labels = [knn_rank(support, z, min(k, len(support))) for z in Z]
        else:
            train_recs = sorted((r for r in manifest.split("train") if r.label is not None), key=lambda r: r.id)
            train_ex, _ = load_examples(manifest, train_recs, ckpt.pipeline, ckpt.stats, ckpt.config.max_video_len, test_time=True)
            probe = linear_probe_train(ckpt.embed_sequences([e.seq for e in train_ex]), [e.record.label for e in train_ex], l2_penalty)
            ranked_labels = [linear_probe_predict(probe, z) for z in Z]
        pos = {c: i for i, c in enumerate(classes)}
        S = np.empty((len(Z), len(classes)))
        for q, labs in enumerate(ranked_labels):
            # Encode the rank as a score so that rank_all reproduces the order; unranked classes go last.
            S[q] = -len(classes)
            for rank, lab in enumerate(labs):
                S[q, pos[lab]] = -rank
    ranked = rank_all(S, [{classes.index(t)} for t in truth], ids)
    metrics = aggregate(ranked, ks, "v2t")
    metrics["accuracy"] = float(np.mean([first_relevant_rank(r) == 1 for r in ranked]))
    return {
        "direction": "v2t",
        "split": "test",
        "mode": mode,
        "ks": list(ks),
        "metrics": metrics,
        "n_queries": len(ranked),
        "pool_size": len(classes),
        "median_rank_of_pool": f"{metrics['MedianR']}/{len(classes)}",
        "skipped": skipped,
        "first_ranks": [],
    }
