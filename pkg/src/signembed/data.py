"""Turning manifest records into model-ready examples."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .pose import DatasetManifest, PoseSequence, Record
from .preprocess import (
    CorpusStats,
    apply_steps,
    check_steps,
    compute_corpus_stats,
    needs_stats,
    stats_prefix,
)
from .text import Prompt, build_prompt

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Pipeline:
    """Preprocessing steps for every split plus steps applied only at test time."""

    steps: tuple[str, ...] = ("normalize",)
    test_time_steps: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(check_steps(self.steps)))
        object.__setattr__(self, "test_time_steps", tuple(check_steps(self.test_time_steps)))

    def all_steps(self, test_time: bool) -> tuple[str, ...]:
        return self.steps + self.test_time_steps if test_time else self.steps

    @property
    def needs_stats(self) -> bool:
        return needs_stats(self.steps + self.test_time_steps)

    def to_dict(self) -> dict:
        return {"steps": list(self.steps), "test_time_steps": list(self.test_time_steps)}

    @classmethod
    def from_dict(cls, d: dict) -> Pipeline:
        return cls(tuple(d.get("steps", ())), tuple(d.get("test_time_steps", ())))


@dataclass
class Example:
    record: Record
    seq: PoseSequence  # preprocessed, not augmented
    prompt: Prompt = field(init=False)

    def __post_init__(self):
        self.prompt = record_prompt(self.record)


def record_prompt(record: Record) -> Prompt:
    return build_prompt(record.text, record.spoken_lang, record.signed_lang)


def fit_stats(manifest: DatasetManifest, pipeline: Pipeline) -> CorpusStats | None:
    """Corpus statistics over the train split, measured after the steps preceding standardization."""
    if not pipeline.needs_stats:
        return None
    train = manifest.split("train")
    if not train:
        raise ValidationError("statistics need a non-empty train split")
    prefix = stats_prefix(pipeline.steps + pipeline.test_time_steps)
    stats = compute_corpus_stats(apply_steps(manifest.load(r), prefix) for r in train)
    # Stats are stored as float32 in checkpoints; round now so reloads agree exactly.
    return CorpusStats(
        stats.mean.astype(np.float32).astype(np.float64),
        np.maximum(stats.std.astype(np.float32).astype(np.float64), np.float32(1e-6)),
        stats.layout_name,
    )


def load_examples(
    manifest: DatasetManifest,
    records,
    pipeline: Pipeline,
    stats: CorpusStats | None,
    max_video_len: int,
    test_time: bool = False,
    strict: bool = True,
):
    """Load and preprocess ``records``; return (examples, skipped ids with reasons).

    Sequences longer than ``max_video_len`` frames are excluded. Missing files
    raise unless ``strict`` is false, in which case they are listed as skipped.
    """
    steps = pipeline.all_steps(test_time)
    examples, skipped = [], []
    for r in records:
        try:
            raw = manifest.load(r)
        except FileNotFoundError:
            if strict:
                raise
            log.warning("missing pose file for %s: %s", r.id, manifest.resolve(r))
            skipped.append({"id": r.id, "reason": "missing pose file"})
            continue
        if raw.n_frames > max_video_len:
            log.warning("excluding %s: %d frames > %d", r.id, raw.n_frames, max_video_len)
            skipped.append({"id": r.id, "reason": "too long"})
            continue
        examples.append(Example(r, apply_steps(raw, steps, stats)))
    return examples, skipped
