"""Ranking and retrieval metrics (precision@k, recall@k, median rank)."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .data import load_examples, record_prompt
from .errors import ValidationError
from .text import parse_prompt

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RankedList:
    """Candidates of one query, best first; ``relevant`` holds candidate indices."""

    order: np.ndarray
    scores: np.ndarray
    relevant: frozenset = frozenset()
    query: object = None

    def __len__(self):
        return len(self.order)


def rank_order(scores) -> np.ndarray:
    """Descending order with ties broken by ascending candidate index."""
    scores = np.asarray(scores)
    return np.argsort(-scores, axis=-1, kind="stable")


def rank_candidates(query, candidates, relevant=(), mode: str = "dot", query_id=None) -> RankedList:
    query = np.asarray(query, dtype=np.float64)
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if candidates.shape[0] == 0 or candidates.size == 0:
        raise ValidationError("cannot rank an empty candidate set")
    if candidates.shape[1] != query.shape[-1]:
        raise ValidationError(f"dimension mismatch: query {query.shape[-1]}, candidates {candidates.shape[1]}")
    if mode == "cosine":
        query = query / np.linalg.norm(query)
        candidates = candidates / np.linalg.norm(candidates, axis=1, keepdims=True)
    scores = candidates @ query
    order = rank_order(scores)
    return RankedList(order, scores[order], frozenset(int(i) for i in relevant), query_id)


def _top(ranked: RankedList, k: int, warn: bool = True):
    if k < 1:
        raise ValidationError("k must be at least 1")
    if warn and k > len(ranked):
        log.warning("k=%d exceeds the %d available candidates", k, len(ranked))
    return ranked.order[:k]


def precision_at_k(ranked: RankedList, k: int, warn: bool = True) -> float:
    top = _top(ranked, k, warn)
    if not ranked.relevant:
        return 0.0
    return sum(int(i) in ranked.relevant for i in top) / min(k, len(ranked))


def recall_at_k(ranked: RankedList, k: int, warn: bool = True) -> float | None:
    """Fraction of relevant candidates inside the top ``k``; None when nothing is relevant."""
    top = _top(ranked, k, warn)
    if not ranked.relevant:
        if warn:
            log.warning("query %r has no relevant candidate; recall is undefined", ranked.query)
        return None
    return sum(int(i) in ranked.relevant for i in top) / len(ranked.relevant)


def first_relevant_rank(ranked: RankedList) -> int:
    """1-based position of the first relevant candidate."""
    for pos, idx in enumerate(ranked.order, 1):
        if int(idx) in ranked.relevant:
            return pos
    raise ValidationError(f"query {ranked.query!r} has no relevant candidate")


def median_rank(ranked_lists) -> float:
    """Median first-relevant rank; accepts RankedLists or plain integer ranks."""
    ranks = [r if isinstance(r, (int, np.integer)) else first_relevant_rank(r) for r in ranked_lists]
    if not ranks:
        raise ValidationError("median rank of an empty query set")
    ranks = sorted(ranks)
    n = len(ranks)
    mid = n // 2
    return float(ranks[mid]) if n % 2 else (ranks[mid - 1] + ranks[mid]) / 2.0


def rank_all(score_matrix, relevant_sets, query_ids=None) -> list[RankedList]:
    """RankedList per row of a queries x candidates score matrix."""
    S = np.asarray(score_matrix)
    orders = rank_order(S)
    ids = query_ids if query_ids is not None else range(len(S))
    return [
        RankedList(orders[i], S[i, orders[i]], frozenset(relevant_sets[i]), qid)
        for i, qid in enumerate(ids)
    ]


def aggregate(ranked_lists, ks, direction: str) -> dict:
    """Metric grid for one direction: P@k for t2v, R@k for v2t, plus MedianR."""
    metrics = {}
    pool = max((len(r) for r in ranked_lists), default=0)
    for k in ks:
        if k > pool:
            log.warning("k=%d exceeds the %d available candidates", k, pool)
    missing = sum(1 for r in ranked_lists if not r.relevant)
    if missing:
        log.warning("%d queries have no relevant candidate and are left out of recall and MedianR", missing)
    for k in ks:
        if direction == "t2v":
            metrics[f"P@{k}"] = float(np.mean([precision_at_k(r, k, False) for r in ranked_lists]))
        else:
            vals = [recall_at_k(r, k, False) for r in ranked_lists]
            vals = [v for v in vals if v is not None]
            metrics[f"R@{k}"] = float(np.mean(vals)) if vals else None
    usable = [r for r in ranked_lists if r.relevant]
    metrics["MedianR"] = median_rank(usable) if usable else None
    return metrics


def dedupe_prompts(prompts):
    """Unique rendered prompts (first-occurrence order) and each item's index into them."""
    unique: dict[str, int] = {}
    for p in prompts:
        unique.setdefault(p.render(), len(unique))
    return [unique[p.render()] for p in prompts], list(unique)


def evaluate_retrieval(ckpt, manifest, split: str = "test", direction: str = "v2t", ks=(1, 5, 10)) -> dict:
    """Embed ``split`` with ``ckpt`` and score retrieval in one direction."""
    if direction not in ("v2t", "t2v"):
        raise ValidationError(f"direction must be v2t or t2v, got {direction!r}")
    records = sorted(manifest.split(split), key=lambda r: r.id)
    if not records:
        raise ValidationError(f"split {split!r} is empty")
    examples, skipped = load_examples(
        manifest, records, ckpt.pipeline, ckpt.stats, ckpt.config.max_video_len, test_time=True, strict=False
    )
    if not examples:
        raise ValidationError(f"no loadable examples in split {split!r}")
    zv = ckpt.embed_sequences([e.seq for e in examples])
    prompts = [record_prompt(e.record) for e in examples]
    video_to_prompt, unique = dedupe_prompts(prompts)
    zt = ckpt.embed_prompts([parse_prompt(u) for u in unique])
    ids = [e.record.id for e in examples]
    if direction == "v2t":
        S = ckpt.scores(zv, zt)
        ranked = rank_all(S, [{p} for p in video_to_prompt], ids)
        pool = len(unique)
    else:
        S = ckpt.scores(zv, zt).T
        rel = [set() for _ in unique]
        for v, p in enumerate(video_to_prompt):
            rel[p].add(v)
        ranked = rank_all(S, rel, unique)
        pool = len(examples)
    metrics = aggregate(ranked, ks, direction)
    return {
        "direction": direction,
        "split": split,
        "ks": list(ks),
        "metrics": metrics,
        "n_queries": len(ranked),
        "pool_size": pool,
        "median_rank_of_pool": f"{metrics['MedianR']}/{pool}",
        "skipped": skipped,
        "first_ranks": [{"query": str(r.query), "rank": first_relevant_rank(r)} for r in ranked if r.relevant],
    }


def write_rank_csv(report: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["query", "first_correct_rank"])
        for row in report["first_ranks"]:
            w.writerow([row["query"], row["rank"]])
