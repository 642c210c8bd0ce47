"""Deterministic pose transforms: normalization, wrist repositioning,
corpus standardization, anonymization and handedness flipping.

All transforms compute in float64 and return new sequences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .layout import KeypointLayout, derive_layout, reduce_indices
from .pose import PoseSequence, load_pose, save_pose, select_components

STD_FLOOR = 1e-6


def _landmark(layout: KeypointLayout, role: str) -> int:
    if role not in layout.landmarks:
        raise ValidationError(f"layout {layout.name!r} has no {role} keypoint")
    return layout.landmarks[role]


def _zero_missing(seq: PoseSequence, coords: np.ndarray) -> np.ndarray:
    # Missing keypoints carry no position; keep them at the origin.
    return np.where(seq.mask[..., None], coords, 0.0)


def normalize_pose(seq: PoseSequence) -> PoseSequence:
    """Scale so the mean shoulder width is 1 and move the mean shoulder midpoint to the origin."""
    ls = _landmark(seq.layout, "left_shoulder")
    rs = _landmark(seq.layout, "right_shoulder")
    coords = seq.coords.astype(np.float64)
    valid = (seq.confidence[:, ls] > 0) & (seq.confidence[:, rs] > 0)
    if not valid.any():
        raise DegenerateInputError("no frame has both shoulders visible")
    left, right = coords[valid, ls], coords[valid, rs]
    width = np.linalg.norm(left - right, axis=-1).mean()
    if width < 1e-8:
        raise DegenerateInputError(f"mean shoulder width {width:.3g} is too small to normalize")
    mid = ((left + right) / 2).mean(axis=0)
    return seq.with_coords(_zero_missing(seq, (coords - mid) / width))


def reduce_and_reposition(seq: PoseSequence) -> PoseSequence:
    """Move each hand so its wrist sits on the body wrist, then drop the
    body keypoints that duplicate the hand model (pinky, index, thumb)."""
    layout = seq.layout
    coords = seq.coords.astype(np.float64)
    conf = seq.confidence
    for side in ("left", "right"):
        body = _landmark(layout, f"{side}_wrist")
        hand_wrist = _landmark(layout, f"{side}_hand_wrist")
        hand = list(layout.tag(f"{side}_hand"))
        ok = (conf[:, body] > 0) & (conf[:, hand_wrist] > 0)
        if not ok.any():
            continue
        offset = coords[ok, body] - coords[ok, hand_wrist]
        block = coords[np.ix_(ok, hand)]
        coords[np.ix_(ok, hand)] = block + offset[:, None, :]
    coords = _zero_missing(seq, coords)
    keep = reduce_indices(layout)
    new_layout = derive_layout(layout, "reduce")
    return seq.with_coords(coords[:, keep], conf[:, keep], new_layout)


@dataclass(frozen=True, eq=False)
class CorpusStats:
    mean: np.ndarray  # keypoints x 3
    std: np.ndarray  # keypoints x 3, floored
    layout_name: str = ""

    def __post_init__(self):
        if self.mean.shape != self.std.shape or self.mean.ndim != 2 or self.mean.shape[1] != 3:
            raise ValidationError("stats mean/std must both be keypoints x 3")
        if np.any(self.std < STD_FLOOR * (1 - 1e-6)):
            raise ValidationError("stats std must be floored")

    def check(self, seq: PoseSequence):
        if self.mean.shape[0] != seq.n_keypoints:
            raise ValidationError(
                f"stats cover {self.mean.shape[0]} keypoints, sequence has {seq.n_keypoints}"
            )


class _RunningMoments:
    """Per-keypoint, per-axis mean and M2 merged one sequence at a time."""

    def __init__(self):
        self.n = None

    def update(self, coords: np.ndarray, mask: np.ndarray):
        coords = coords.astype(np.float64)
        m = mask[..., None].astype(np.float64)
        nb = m.sum(axis=0)  # keypoints x 1
        safe = np.maximum(nb, 1)
        mean_b = (coords * m).sum(axis=0) / safe
        m2_b = (((coords - mean_b) * m) ** 2).sum(axis=0)
        if self.n is None:
            self.n, self.mean, self.m2 = nb, mean_b, m2_b
            return
        if nb.shape != self.n.shape:
            raise ValidationError("all sequences must share one keypoint layout")
        n = self.n + nb
        safe_n = np.maximum(n, 1)
        delta = mean_b - self.mean
        self.mean = self.mean + delta * nb / safe_n
        self.m2 = self.m2 + m2_b + delta**2 * self.n * nb / safe_n
        self.n = n


def compute_corpus_stats(sequences) -> CorpusStats:
    """Population mean/std over every confident coordinate of ``sequences``.

    Keypoints that are never observed get mean 0 and std 1.
    """
    acc = _RunningMoments()
    layout_name = ""
    for seq in sequences:
        acc.update(seq.coords, seq.mask)
        layout_name = seq.layout.name
    if acc.n is None:
        raise ValidationError("cannot compute statistics of an empty corpus")
    observed = acc.n > 0
    mean = np.where(observed, acc.mean, 0.0)
    var = np.where(observed, acc.m2 / np.maximum(acc.n, 1), 1.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return CorpusStats(mean, std, layout_name)


def standardize(seq: PoseSequence, stats: CorpusStats) -> PoseSequence:
    stats.check(seq)
    z = (seq.coords.astype(np.float64) - stats.mean) / stats.std
    return seq.with_coords(np.where(seq.mask[..., None], z, 0.0))


def destandardize(seq: PoseSequence, stats: CorpusStats) -> PoseSequence:
    stats.check(seq)
    x = seq.coords.astype(np.float64) * stats.std + stats.mean
    return seq.with_coords(np.where(seq.mask[..., None], x, 0.0))


def anonymize(seq: PoseSequence, stats: CorpusStats) -> PoseSequence:
    """Remove the first frame's appearance and substitute the corpus mean pose.

    A keypoint missing in frame 0 is referenced to the first frame where it
    is observed.
    """
    stats.check(seq)
    coords = seq.coords.astype(np.float64)
    first = np.argmax(seq.mask, axis=0)
    ref = coords[first, np.arange(seq.n_keypoints)]
    return seq.with_coords(_zero_missing(seq, coords - ref + stats.mean))


def mirror(seq: PoseSequence) -> PoseSequence:
    """Unconditional horizontal mirror: negate x and swap left/right keypoints."""
    perm = seq.layout.permutation()
    coords = seq.coords[:, perm].copy()
    coords[..., 0] = -coords[..., 0]
    return seq.with_coords(coords, seq.confidence[:, perm])


def flip_to_right_handed(seq: PoseSequence) -> PoseSequence:
    """Mirror the sequence when only the left hand is ever visible."""
    if not seq.layout.pairs:
        raise ValidationError(f"layout {seq.layout.name!r} has no left/right pairs")
    right = list(seq.layout.tags.get("right_hand", ()))
    left = list(seq.layout.tags.get("left_hand", ()))
    if not right or not left:
        return seq
    if not (seq.confidence[:, right] > 0).any() and (seq.confidence[:, left] > 0).any():
        return mirror(seq)
    return seq


# ------------------------------------------------------------- stats files


def save_stats(stats: CorpusStats, path) -> None:
    coords = np.stack([stats.mean, stats.std]).astype(np.float32)
    conf = np.ones(coords.shape[:2], dtype=np.float32)
    seq = PoseSequence(
        KeypointLayout.generic(stats.mean.shape[0], "stats"), 1.0, coords, conf,
        {"source_layout": stats.layout_name},
    )
    save_pose(seq, path)


def load_stats(path) -> CorpusStats:
    seq = load_pose(path)
    if seq.layout.name != "stats" or seq.n_frames != 2:
        raise ValidationError(f"{path} is not a stats file")
    return CorpusStats(
        seq.coords[0].astype(np.float64), seq.coords[1].astype(np.float64),
        seq.meta.get("source_layout", ""),
    )


# ---------------------------------------------------------------- pipelines

STEPS = ("normalize", "reduce", "standardize", "anonymize", "flip_right")


def check_steps(steps) -> list[str]:
    steps = list(steps)
    for s in steps:
        if s not in STEPS and not s.startswith("select:"):
            raise ValidationError(f"unknown preprocessing step {s!r}")
    return steps


def needs_stats(steps) -> bool:
    return any(s in ("standardize", "anonymize") for s in steps)


def apply_steps(seq: PoseSequence, steps, stats: CorpusStats | None = None) -> PoseSequence:
    """Apply preprocessing steps in order; ``select:<expr>`` selects keypoints."""
    standardized = False
    for step in check_steps(steps):
        if step == "normalize":
            seq = normalize_pose(seq)
        elif step == "reduce":
            seq = reduce_and_reposition(seq)
        elif step.startswith("select:"):
            seq = select_components(seq, step[len("select:"):])
        elif step == "flip_right":
            seq = flip_to_right_handed(seq)
        else:
            if stats is None:
                raise ValidationError(f"step {step!r} requires corpus statistics")
            if step == "standardize":
                seq = standardize(seq, stats)
                standardized = True
            elif standardized:
                # The corpus mean pose is the origin once standardized.
                unit = CorpusStats(np.zeros_like(stats.mean), np.ones_like(stats.std), stats.layout_name)
                seq = anonymize(seq, unit)
            else:
                seq = anonymize(seq, stats)
    return seq


def stats_prefix(steps) -> list[str]:
    """Steps that run before the first stats-dependent step (what the stats are measured on)."""
    out = []
    for s in steps:
        if s in ("standardize", "anonymize"):
            break
        out.append(s)
    return out
