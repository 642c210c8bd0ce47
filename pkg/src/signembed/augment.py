"""Training-time pose augmentations driven by an explicit ``numpy`` Generator."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError
from .pose import PoseSequence
from .preprocess import mirror

MIN_SCALE = 0.05
SPEED_RANGE = (0.5, 2.0)


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation strengths.

    ``affine_sigma`` is the std of the rotation angle (radians), of the shear
    coefficient and of the scale around 1. ``temporal_sigma`` is the std of
    the signing-speed factor around 1. ``noise_sigma`` is in coordinate units.
    """

    flip_prob: float = 0.2
    affine_sigma: float = 0.2
    temporal_sigma: float = 0.2
    noise_sigma: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValidationError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        for name in ("affine_sigma", "temporal_sigma", "noise_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and non-negative, got {v}")

    @classmethod
    def off(cls, seed: int = 0) -> AugmentConfig:
        return cls(0.0, 0.0, 0.0, 0.0, seed)

    def to_dict(self) -> dict:
        return asdict(self)


def random_flip(seq: PoseSequence, p: float, rng: np.random.Generator) -> PoseSequence:
    if not seq.layout.pairs:
        raise ValidationError(f"layout {seq.layout.name!r} has no left/right pairs")
    return mirror(seq) if rng.random() < p else seq


def affine_matrix(angle: float, shear: float, scale: float) -> np.ndarray:
    """2x2 map: rotation after horizontal shear after uniform scaling."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    sh = np.array([[1.0, shear], [0.0, 1.0]])
    return scale * rot @ sh


def apply_affine_2d(seq: PoseSequence, matrix: np.ndarray) -> PoseSequence:
    coords = seq.coords.astype(np.float64).copy()
    coords[..., :2] = coords[..., :2] @ np.asarray(matrix).T
    return seq.with_coords(coords)


def affine_2d_augment(seq: PoseSequence, sigma: float, rng: np.random.Generator) -> PoseSequence:
    """One random rotation/shear/scale per sequence applied to x and y."""
    if sigma < 0:
        raise ValidationError("affine sigma must be non-negative")
    angle = rng.normal(0.0, sigma)
    shear = rng.normal(0.0, sigma)
    scale = rng.normal(1.0, sigma)
    while scale <= MIN_SCALE:
        scale = rng.normal(1.0, sigma)
    if angle == 0.0 and shear == 0.0 and scale == 1.0:
        return seq
    return apply_affine_2d(seq, affine_matrix(angle, shear, scale))


def resample(seq: PoseSequence, n_frames: int) -> PoseSequence:
    """Linear interpolation of every trajectory onto ``n_frames`` uniform samples."""
    length = seq.n_frames
    if n_frames == length:
        return seq
    if length < 2:
        return seq
    grid = np.linspace(0.0, length - 1.0, n_frames)
    grid[-1] = length - 1.0
    lo = np.minimum(np.floor(grid).astype(int), length - 2)
    w = (grid - lo)[:, None]
    coords = seq.coords.astype(np.float64)
    conf = seq.confidence.astype(np.float64)
    new_coords = coords[lo] * (1 - w)[..., None] + coords[lo + 1] * w[..., None]
    new_conf = conf[lo] * (1 - w) + conf[lo + 1] * w
    # Endpoints are copied, not interpolated, so they survive bit-exactly.
    new_coords[0], new_coords[-1] = coords[0], coords[-1]
    new_conf[0], new_conf[-1] = conf[0], conf[-1]
    return seq.with_coords(new_coords, np.clip(new_conf, 0.0, 1.0))


def temporal_augment(seq: PoseSequence, sigma: float, rng: np.random.Generator) -> PoseSequence:
    """Change signing speed by a random factor and resample by linear interpolation."""
    if seq.n_frames < 2:
        return seq
    factor = float(np.clip(rng.normal(1.0, sigma), *SPEED_RANGE))
    new_len = max(2, int(round(seq.n_frames / factor)))
    return resample(seq, new_len)


def gaussian_noise(seq: PoseSequence, sigma: float, rng: np.random.Generator) -> PoseSequence:
    if sigma < 0:
        raise ValidationError("noise sigma must be non-negative")
    if sigma == 0:
        return seq
    noise = rng.normal(0.0, sigma, size=seq.coords.shape)
    coords = seq.coords.astype(np.float64) + noise * seq.mask[..., None]
    return seq.with_coords(coords)


def apply_augmentations(seq: PoseSequence, config: AugmentConfig, rng: np.random.Generator) -> PoseSequence:
    """Flip, then affine, then temporal, then noise, all from the one ``rng`` stream."""
    if seq.layout.pairs:
        seq = random_flip(seq, config.flip_prob, rng)
    seq = affine_2d_augment(seq, config.affine_sigma, rng)
    seq = temporal_augment(seq, config.temporal_sigma, rng)
    return gaussian_noise(seq, config.noise_sigma, rng)


def example_rng(seed: int, example_index: int, epoch: int = 0) -> np.random.Generator:
    """Independent per-example stream keyed by (seed, epoch, example)."""
    return np.random.default_rng([seed, epoch, example_index])
