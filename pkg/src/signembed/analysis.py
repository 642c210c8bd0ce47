"""Latent-space analysis: centroids, analogy arithmetic and cross-lingual dispersion."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .data import load_examples
from .errors import ValidationError
from .retrieval import rank_order

log = logging.getLogger(__name__)


@dataclass
class EmbeddingGroup:
    """Realizations of one concept; ``members`` holds (tag, embedding) pairs."""

    key: str
    members: list

    def __post_init__(self):
        if not self.members:
            raise ValidationError(f"group {self.key!r} has no members")
        dims = {np.asarray(v).shape for _, v in self.members}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ValidationError(f"group {self.key!r} has mixed or non-vector embeddings")

    def matrix(self) -> np.ndarray:
        return np.stack([np.asarray(v, dtype=np.float64) for _, v in self.members])


def centroid(group: EmbeddingGroup) -> np.ndarray:
    return group.matrix().mean(axis=0)


def analogy(a: str, b: str, c: str, candidates: dict) -> list[tuple[str, float]]:
    """Rank candidate keys by cosine similarity to ``a - b + c``.

    ``a``, ``b`` and ``c`` are keys into ``candidates`` (key -> vector) and are
    excluded from the result.
    """
    for k in (a, b, c):
        if k not in candidates:
            raise ValidationError(f"unknown analogy term {k!r}")
    target = np.asarray(candidates[a], dtype=np.float64) - candidates[b] + candidates[c]
    keys = [k for k in candidates if k not in (a, b, c)]
    if not keys:
        raise ValidationError("no candidates left after excluding the analogy terms")
    M = np.stack([np.asarray(candidates[k], dtype=np.float64) for k in keys])
    if M.shape[1] != target.shape[0]:
        raise ValidationError("candidate dimension does not match the analogy terms")
    denom = np.linalg.norm(M, axis=1) * np.linalg.norm(target)
    sims = np.divide(M @ target, denom, out=np.zeros(len(keys)), where=denom > 0)
    return [(keys[i], float(sims[i])) for i in rank_order(sims)]


def dispersion(group: EmbeddingGroup) -> float:
    """Trace of the population covariance of the member embeddings."""
    X = group.matrix()
    return float(((X - X.mean(axis=0)) ** 2).mean(axis=0).sum())


def iconicity_rank(groups) -> list[tuple[str, float]]:
    """(key, dispersion) ascending; the lowest score is the most iconic concept."""
    scored = []
    for g in groups:
        if len(g.members) < 2:
            log.warning("group %r has a single member; excluded from the iconicity ranking", g.key)
            continue
        scored.append((g.key, dispersion(g)))
    return sorted(scored, key=lambda kv: kv[1])


def group_embeddings(records, Z, group_by: str = "label", tag_by: str = "signed_lang") -> list[EmbeddingGroup]:
    """Group embedding rows by a record attribute; groups come out sorted by key."""
    groups: dict[str, list] = {}
    for r, z in zip(records, Z):
        key = record_field(r, group_by)
        groups.setdefault(key, []).append((record_field(r, tag_by), z))
    return [EmbeddingGroup(k, groups[k]) for k in sorted(groups)]


def record_field(record, name: str) -> str:
    if name in ("concept", "label"):
        return record.label if record.label is not None else record.text
    if name in ("text", "spoken_lang", "signed_lang", "id", "split"):
        return getattr(record, name)
    raise ValidationError(f"cannot group by {name!r}")


def embed_manifest(ckpt, manifest, split: str | None = None):
    """Embed every loadable record (sorted by id); returns (records, Z, skipped)."""
    records = sorted(manifest.records if split is None else manifest.split(split), key=lambda r: r.id)
    examples, skipped = load_examples(
        manifest, records, ckpt.pipeline, ckpt.stats, ckpt.config.max_video_len, test_time=True, strict=False
    )
    if not examples:
        return [], np.zeros((0, ckpt.config.embed_dim), dtype=np.float32), skipped
    Z = ckpt.embed_sequences([e.seq for e in examples])
    return [e.record for e in examples], Z, skipped


def export_embeddings(ckpt, manifest, out_path, split: str | None = None) -> list:
    """Write id, label, spoken, signed, e0..e{d-1} rows; returns the skipped records."""
    records, Z, skipped = embed_manifest(ckpt, manifest, split)
    d = ckpt.config.embed_dim
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "spoken", "signed"] + [f"e{i}" for i in range(d)])
        for r, z in zip(records, Z):
            # 9 significant digits round-trip float32 exactly
            w.writerow([r.id, r.label or "", r.spoken_lang, r.signed_lang] + [format(float(x), ".9g") for x in z])
    return skipped


def read_embeddings(path):
    """Parse an exported CSV back into (rows of metadata, float32 matrix)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    meta = [dict(zip(rows[0][:4], r[:4])) for r in rows[1:]]
    Z = np.array([[float(x) for x in r[4:]] for r in rows[1:]], dtype=np.float32)
    return meta, Z
