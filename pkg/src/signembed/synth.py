"""Deterministic synthetic sign datasets.

Every example is rendered from a small parameter vector: band-limited wrist
trajectories (three harmonics per axis) and static handshape offsets for
both hands. A class draws its own parameters; each language adds an offset
(a language-wide style plus a per-class variant) scaled by ``sigma_lang``;
each example adds jitter ``sigma_jitter`` and, optionally, an offset of one of
a few simulated signers. All sigmas are relative to the spread between classes.

Coordinates are in image-like units with shoulders about 0.2 apart, so the
normalization step has real work to do.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .layout import BODY_SIZE, FACE_SIZE, HAND_SIZE, holistic_layout
from .pose import DatasetManifest, PoseSequence, Record, save_pose, select_components, write_manifest
from .preprocess import mirror

SIGN_LANGUAGES = ("ase", "gsg", "bfi", "fsl", "ssp", "ise", "jsl", "csl", "asf", "lsf", "sgg", "dsl")
_SYLLABLES = ("ka", "lo", "mi", "tu", "re", "so", "na", "vi", "pe", "du", "go", "ha")

N_HARMONICS = 3
WRIST_AMP = 0.06  # per-harmonic wrist amplitude, image units
HANDSHAPE_AMP = 0.012
TEMPLATE_SEED = 20240917


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 10
    languages: int = 2
    examples_per_class_language: int = 10
    frames: tuple[int, int] = (16, 24)
    layout: str = "holistic"
    sigma_jitter: float = 0.1
    sigma_lang: float = 0.3
    left_handed_fraction: float = 0.0
    iconic_classes: tuple[int, ...] = ()  # classes whose language offset is zero
    signers: int = 0
    sigma_signer: float = 0.0
    seed: int = 0  # class prototypes and language offsets
    sample_seed: int | None = None  # examples; defaults to ``seed``
    split_ratio: tuple[int, int, int] = (8, 1, 1)
    spoken: str = "en"
    fps: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "iconic_classes", tuple(self.iconic_classes))
        object.__setattr__(self, "split_ratio", tuple(self.split_ratio))
        if self.classes < 2:
            raise ValidationError("need at least 2 classes")
        if not 1 <= self.languages <= len(SIGN_LANGUAGES):
            raise ValidationError(f"languages must be in [1, {len(SIGN_LANGUAGES)}]")
        lo, hi = self.frames
        if lo < 2 or hi < lo:
            raise ValidationError("frames range must satisfy 2 <= min <= max")
        for name in ("sigma_jitter", "sigma_lang", "sigma_signer"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be non-negative")
        if not 0 <= self.left_handed_fraction <= 1:
            raise ValidationError("left_handed_fraction must lie in [0, 1]")
        if self.examples_per_class_language < 1:
            raise ValidationError("examples_per_class_language must be positive")

    @property
    def language_tags(self) -> tuple[str, ...]:
        return SIGN_LANGUAGES[: self.languages]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> SynthConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def class_name(i: int) -> str:
    """Pronounceable, unique single-token class name."""
    n = len(_SYLLABLES)
    a, b, c = i % n, (i // n) % n, i // (n * n)
    name = _SYLLABLES[a] + _SYLLABLES[(a + b + 1) % n]
    return name + (_SYLLABLES[c % n] * (1 + c // n) if c else "")


# ---------------------------------------------------------------- geometry


def _template() -> tuple[np.ndarray, np.ndarray]:
    """Rest pose for the 543-point layout and the per-point hand offsets."""
    rng = np.random.default_rng(TEMPLATE_SEED)
    body = np.zeros((BODY_SIZE, 3))
    pts = {
        0: (0.50, 0.30), 1: (0.52, 0.28), 2: (0.53, 0.28), 3: (0.54, 0.28), 4: (0.48, 0.28),
        5: (0.47, 0.28), 6: (0.46, 0.28), 7: (0.56, 0.29), 8: (0.44, 0.29), 9: (0.52, 0.33),
        10: (0.48, 0.33), 11: (0.60, 0.45), 12: (0.40, 0.45), 13: (0.66, 0.58), 14: (0.34, 0.58),
        15: (0.64, 0.70), 16: (0.36, 0.70), 17: (0.65, 0.73), 18: (0.35, 0.73), 19: (0.64, 0.74),
        20: (0.36, 0.74), 21: (0.62, 0.72), 22: (0.38, 0.72), 23: (0.56, 0.80), 24: (0.44, 0.80),
        25: (0.57, 1.00), 26: (0.43, 1.00), 27: (0.57, 1.20), 28: (0.43, 1.20), 29: (0.58, 1.23),
        30: (0.42, 1.23), 31: (0.56, 1.25), 32: (0.44, 1.25),
    }
    for i, (x, y) in pts.items():
        body[i, :2] = x, y
    ang = rng.uniform(0, 2 * math.pi, FACE_SIZE)
    rad = np.sqrt(rng.uniform(0, 1, FACE_SIZE))
    face = np.stack([0.5 + 0.07 * rad * np.cos(ang), 0.30 + 0.09 * rad * np.sin(ang), 0.01 * rng.normal(size=FACE_SIZE)], 1)
    # Hand: wrist at the origin, five fingers of four joints fanning upward.
    hand = np.zeros((HAND_SIZE, 3))
    for f in range(5):
        a = math.radians(-60 + 30 * f)
        for j in range(4):
            r = 0.02 + 0.012 * j
            hand[1 + 4 * f + j] = (r * math.sin(a), -r * math.cos(a), 0.0)
    return np.concatenate([body, face, np.zeros((2 * HAND_SIZE, 3))]), hand


_TEMPLATE, _HAND = _template()
_N_WRIST = 2 * 3 * N_HARMONICS * 2  # hands x axes x harmonics x (sin, cos)
_N_SHAPE = 2 * HAND_SIZE * 3
N_PARAMS = _N_WRIST + _N_SHAPE
_SCALE = np.concatenate([
    np.tile(np.repeat(WRIST_AMP / np.arange(1, N_HARMONICS + 1), 2), 2 * 3),
    np.full(_N_SHAPE, HANDSHAPE_AMP),
])


def render(theta: np.ndarray, n_frames: int, two_handed: bool) -> tuple[np.ndarray, np.ndarray]:
    """Pose coords (frames x 543 x 3) and confidence for a parameter vector."""
    t = np.linspace(0.0, 1.0, n_frames)
    h = np.arange(1, N_HARMONICS + 1)
    basis = np.concatenate([np.sin(2 * math.pi * np.outer(t, h))[..., None], np.cos(2 * math.pi * np.outer(t, h))[..., None]], -1)
    basis = basis.reshape(n_frames, -1)  # frames x (harmonics * 2)
    wrist_coef = theta[:_N_WRIST].reshape(2, 3, -1)
    motion = np.einsum("fk,hak->fha", basis, wrist_coef)  # frames x hand x axis
    shapes = theta[_N_WRIST:].reshape(2, HAND_SIZE, 3)

    coords = np.repeat(_TEMPLATE[None], n_frames, axis=0)
    conf = np.ones(coords.shape[:2])
    lh0 = BODY_SIZE + FACE_SIZE
    hands = ((0, 15, 13, (17, 19, 21), lh0), (1, 16, 14, (18, 20, 22), lh0 + HAND_SIZE))
    for side, wrist, elbow, dups, h0 in hands:
        if side == 0 and not two_handed:
            conf[:, h0 : h0 + HAND_SIZE] = 0.0
            coords[:, h0 : h0 + HAND_SIZE] = 0.0
            continue
        w = _TEMPLATE[wrist] + motion[:, side]
        coords[:, wrist] = w
        coords[:, elbow] = _TEMPLATE[elbow] + 0.5 * motion[:, side]
        for d in dups:
            coords[:, d] = w + (_TEMPLATE[d] - _TEMPLATE[wrist])
        hand = _HAND + shapes[side]
        hand[0] = 0.0
        if side == 0:
            hand[:, 0] = -hand[:, 0]
        coords[:, h0 : h0 + HAND_SIZE] = w[:, None, :] + hand[None]
    return coords, conf


# ---------------------------------------------------------------- dataset


@dataclass
class _World:
    class_theta: np.ndarray  # classes x params
    two_handed: np.ndarray  # classes
    lang_style: np.ndarray  # languages x params
    lang_class: np.ndarray  # languages x classes x params


def _world(cfg: SynthConfig) -> _World:
    rng = np.random.default_rng([cfg.seed, 0])
    class_theta = rng.normal(size=(cfg.classes, N_PARAMS)) * _SCALE
    two_handed = rng.random(cfg.classes) < 0.5
    lang_style = rng.normal(size=(cfg.languages, N_PARAMS)) * _SCALE
    lang_class = rng.normal(size=(cfg.languages, cfg.classes, N_PARAMS)) * _SCALE
    return _World(class_theta, two_handed, lang_style, lang_class)


def _split_counts(n: int, ratio, offset: int = 0) -> tuple[int, int, int]:
    """Split sizes for a stratum of ``n`` examples after ``offset`` earlier ones.

    Counts are dithered cumulatively, so every stratum is within one example of
    its exact share and the corpus totals follow the ratio.
    """
    total = sum(ratio)

    def share(r):
        return (offset + n) * r // total - offset * r // total

    n_valid, n_test = share(ratio[1]), share(ratio[2])
    if n - n_valid - n_test < 1:
        n_valid = n_test = 0
    return n - n_valid - n_test, n_valid, n_test


def generate_examples(cfg: SynthConfig):
    """Yield ``(record, PoseSequence)`` pairs in a fixed order."""
    world = _world(cfg)
    seed = cfg.seed if cfg.sample_seed is None else cfg.sample_seed
    rng = np.random.default_rng([seed, 1])
    signers = rng.normal(size=(cfg.signers, N_PARAMS)) * _SCALE
    full = holistic_layout()
    base, *ops = cfg.layout.split("|")
    if base != "holistic" or any(not op.startswith("select:") for op in ops):
        raise ValidationError(f"synthetic data supports holistic layouts with selections only, got {cfg.layout!r}")
    tags = cfg.language_tags
    # Strata take their split offsets in a shuffled order so that held-out
    # examples do not line up with one language or class parity.
    slot = np.random.default_rng([seed, 2]).permutation(cfg.classes * len(tags))
    for c in range(cfg.classes):
        name = class_name(c)
        for li, tag in enumerate(tags):
            sigma_l = 0.0 if c in cfg.iconic_classes else cfg.sigma_lang
            proto = world.class_theta[c] + sigma_l * (world.lang_style[li] + world.lang_class[li, c])
            n = cfg.examples_per_class_language
            counts = _split_counts(n, cfg.split_ratio, int(slot[c * len(tags) + li]) * n)
            splits = ["train"] * counts[0] + ["valid"] * counts[1] + ["test"] * counts[2]
            splits = [splits[i] for i in rng.permutation(n)]
            for k in range(n):
                theta = proto + cfg.sigma_jitter * rng.normal(size=N_PARAMS) * _SCALE
                if cfg.signers:
                    theta = theta + cfg.sigma_signer * signers[rng.integers(cfg.signers)]
                n_frames = int(rng.integers(cfg.frames[0], cfg.frames[1] + 1))
                coords, conf = render(theta, n_frames, bool(world.two_handed[c]))
                # Camera placement and estimator noise.
                coords = coords * (1.0 + 0.05 * rng.normal()) + np.append(0.02 * rng.normal(size=2), 0.0)
                coords = coords + 0.002 * rng.normal(size=coords.shape)
                coords = np.where(conf[..., None] > 0, coords, 0.0)
                seq = PoseSequence(full, cfg.fps, coords.astype(np.float32), conf.astype(np.float32))
                if rng.random() < cfg.left_handed_fraction:
                    seq = _mirror_in_image(seq)
                for op in ops:
                    seq = select_components(seq, op[len("select:"):])
                rid = f"{c:03d}_{tag}_{k:02d}"
                yield Record(rid, f"poses/{rid}.pose", name, cfg.spoken, tag, splits[k], name), seq


def _mirror_in_image(seq: PoseSequence) -> PoseSequence:
    """Left-handed signer: mirror about the image centre line x = 0.5."""
    m = mirror(seq)
    coords = m.coords.astype(np.float64)
    coords[..., 0] += 1.0
    coords = np.where(m.mask[..., None], coords, 0.0)
    return m.with_coords(coords.astype(np.float32))


def generate_dataset(cfg: SynthConfig, out_dir) -> DatasetManifest:
    """Write pose files and ``manifest.jsonl`` under ``out_dir``; return the manifest."""
    out = Path(out_dir)
    (out / "poses").mkdir(parents=True, exist_ok=True)
    records = []
    for record, seq in generate_examples(cfg):
        save_pose(seq, out / record.pose_path)
        records.append(record)
    manifest = DatasetManifest(records, out)
    write_manifest(manifest, out / "manifest.jsonl")
    (out / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
