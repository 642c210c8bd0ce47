"""Pose sequences, the binary pose file format and dataset manifests.

Pose file layout (all little-endian)::

    b"SPSE" | u16 version=1 | u32 header length | UTF-8 JSON header
    | float32 coords[frames, keypoints, 3] | float32 confidence[frames, keypoints]

The header holds ``layout_name``, ``fps``, ``frames`` and ``keypoints``; extra
keys are preserved in :attr:`PoseSequence.meta`.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncatedFileError, ValidationError
from .layout import KeypointLayout, derive_layout, normalize_selector, resolve_layout, select_indices

MAGIC = b"SPSE"
VERSION = 1
SPLITS = ("train", "valid", "test")


@dataclass(frozen=True, eq=False)
class PoseSequence:
    layout: KeypointLayout
    fps: float
    coords: np.ndarray  # frames x keypoints x 3
    confidence: np.ndarray  # frames x keypoints, 0 marks a missing point
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        coords = np.asarray(self.coords)
        if not np.issubdtype(coords.dtype, np.floating):
            coords = coords.astype(np.float64)
        conf = np.asarray(self.confidence, dtype=coords.dtype)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "confidence", conf)
        if coords.ndim != 3 or coords.shape[2] != 3:
            raise ValidationError(f"coords must be frames x keypoints x 3, got {coords.shape}")
        if conf.shape != coords.shape[:2]:
            raise ValidationError(f"confidence shape {conf.shape} does not match coords {coords.shape}")
        if coords.shape[0] < 1:
            raise ValidationError("a pose sequence needs at least one frame")
        if coords.shape[1] != self.layout.n_keypoints:
            raise ValidationError(
                f"layout {self.layout.name!r} has {self.layout.n_keypoints} keypoints, data has {coords.shape[1]}"
            )
        if not (np.isfinite(self.fps) and self.fps > 0):
            raise ValidationError(f"fps must be positive, got {self.fps}")
        if np.any(conf < 0) or np.any(conf > 1) or not np.all(np.isfinite(conf)):
            raise ValidationError("confidence values must lie in [0, 1]")

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def n_keypoints(self) -> int:
        return self.coords.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.confidence > 0

    def with_coords(self, coords, confidence=None, layout=None) -> PoseSequence:
        return replace(
            self,
            coords=coords,
            confidence=self.confidence if confidence is None else confidence,
            layout=self.layout if layout is None else layout,
        )

    def slice_frames(self, start=None, stop=None) -> PoseSequence:
        sl = slice(start, stop)
        return replace(self, coords=self.coords[sl], confidence=self.confidence[sl])

    def equals(self, other: PoseSequence) -> bool:
        """Exact equality of layout name, fps and every stored value."""
        return (
            self.layout.name == other.layout.name
            and self.fps == other.fps
            and self.coords.shape == other.coords.shape
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.confidence, other.confidence)
        )

    def features(self) -> np.ndarray:
        """Flattened frames x (keypoints*3) model input; missing points zeroed."""
        x = np.where(self.mask[..., None], self.coords, 0.0)
        return x.reshape(self.n_frames, -1)


def _layout_for(name: str, keypoints: int) -> KeypointLayout:
    if name == "stats" or name.startswith("generic"):
        return KeypointLayout.generic(keypoints, name)
    return resolve_layout(name)


def encode_pose(seq: PoseSequence) -> bytes:
    header = dict(seq.meta)
    header.update(
        layout_name=seq.layout.name,
        fps=float(seq.fps),
        frames=int(seq.n_frames),
        keypoints=int(seq.n_keypoints),
    )
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    coords = np.ascontiguousarray(seq.coords, dtype="<f4")
    conf = np.ascontiguousarray(seq.confidence, dtype="<f4")
    return b"".join(
        [MAGIC, struct.pack("<HI", VERSION, len(hbytes)), hbytes, coords.tobytes(), conf.tobytes()]
    )


def read_pose_header(data: bytes) -> tuple[dict, int]:
    """Parse the magic, version and JSON header; return (header, payload offset)."""
    if len(data) < 10 or data[:4] != MAGIC:
        raise FormatError("not a pose file (bad magic bytes)")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported pose file version {version}")
    if len(data) < 10 + hlen:
        raise TruncatedFileError("pose file header is truncated")
    try:
        header = json.loads(data[10 : 10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed pose header: {exc}") from exc
    for key in ("layout_name", "fps", "frames", "keypoints"):
        if key not in header:
            raise FormatError(f"pose header is missing {key!r}")
    return header, 10 + hlen


def decode_pose(data: bytes) -> PoseSequence:
    header, off = read_pose_header(data)
    frames, kps = int(header["frames"]), int(header["keypoints"])
    n_coords = frames * kps * 3
    need = off + 4 * (n_coords + frames * kps)
    if len(data) < need:
        raise TruncatedFileError(f"pose payload truncated: {len(data)} of {need} bytes")
    if len(data) > need:
        raise FormatError("trailing bytes after pose payload")
    coords = np.frombuffer(data, dtype="<f4", count=n_coords, offset=off).reshape(frames, kps, 3)
    conf = np.frombuffer(data, dtype="<f4", count=frames * kps, offset=off + 4 * n_coords).reshape(frames, kps)
    meta = {k: v for k, v in header.items() if k not in ("layout_name", "fps", "frames", "keypoints")}
    layout = _layout_for(header["layout_name"], kps)
    return PoseSequence(layout, float(header["fps"]), coords.astype(np.float32), conf.astype(np.float32), meta)


def save_pose(seq: PoseSequence, path) -> None:
    Path(path).write_bytes(encode_pose(seq))


def load_pose(path) -> PoseSequence:
    return decode_pose(Path(path).read_bytes())


def select_components(seq: PoseSequence, selector: str) -> PoseSequence:
    """Keep only the keypoints named by ``selector`` (e.g. ``all-face+face_contour``)."""
    expr = normalize_selector(selector)
    if expr == "all":
        return seq
    idx = select_indices(seq.layout, expr)
    if idx == list(range(seq.n_keypoints)):
        return seq
    layout = derive_layout(seq.layout, f"select:{expr}")
    return seq.with_coords(seq.coords[:, idx], seq.confidence[:, idx], layout)


# ---------------------------------------------------------------- manifests


@dataclass(frozen=True)
class Record:
    id: str
    pose_path: str
    text: str
    spoken_lang: str
    signed_lang: str
    split: str
    label: str | None = None


@dataclass
class DatasetManifest:
    records: list[Record]
    root: Path = Path(".")

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValidationError("manifest ids must be unique")
        for r in self.records:
            if r.split not in SPLITS:
                raise ValidationError(f"record {r.id!r} has unknown split {r.split!r}")

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def resolve(self, record: Record) -> Path:
        p = Path(record.pose_path)
        return p if p.is_absolute() else self.root / p

    def load(self, record: Record) -> PoseSequence:
        return load_pose(self.resolve(record))

    def with_records(self, records) -> DatasetManifest:
        return DatasetManifest(list(records), self.root)


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(Record(**obj))
        except (json.JSONDecodeError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
    return DatasetManifest(records, path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = [json.dumps(r.__dict__, sort_keys=True, ensure_ascii=False) for r in manifest.records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
