"""Trained model bundle and its binary checkpoint format.

Layout (little-endian)::

    b"SCKP" | u16 version=1 | u32 header length | UTF-8 JSON header | float32 blob

The header carries the model config, vocabulary (and its sha256), the
preprocessing pipeline, epoch, validation loss and a parameter manifest of
``{name, shape, offset}`` entries indexing into the blob (offsets in floats).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder
from .data import Pipeline
from .encoder import ModelConfig
from .errors import FormatError, TruncatedFileError, ValidationError
from .pose import PoseSequence
from .preprocess import CorpusStats, apply_steps
from .text import Prompt, Vocabulary, tokenize

MAGIC = b"SCKP"
VERSION = 1
EMBED_BATCH = 64


@dataclass(eq=False)
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    vocab: Vocabulary
    pipeline: Pipeline = field(default_factory=Pipeline)
    stats: CorpusStats | None = None
    epoch: int = 0
    valid_loss: float = float("nan")
    train_config: dict = field(default_factory=dict)

    # -- embedding helpers

    def prepare(self, seq: PoseSequence, test_time: bool = True) -> PoseSequence:
        """Apply the checkpoint's preprocessing to a raw sequence."""
        return apply_steps(seq, self.pipeline.all_steps(test_time), self.stats)

    def embed_features(self, feats) -> np.ndarray:
        """Embed preprocessed frame features (list of time x input_dim arrays)."""
        out = []
        dtype = self.params["video.pos"].dtype
        for start in range(0, len(feats), EMBED_BATCH):
            x, lengths = encoder.pad_frames(feats[start : start + EMBED_BATCH], dtype)
            out.append(encoder.video_forward(self.params, self.config, x, lengths)[0])
        return np.concatenate(out) if out else np.zeros((0, self.config.embed_dim))

    def embed_sequences(self, seqs) -> np.ndarray:
        """Embed already-preprocessed pose sequences."""
        return self.embed_features([s.features() for s in seqs])

    def embed_video(self, seq: PoseSequence, preprocess: bool = True) -> np.ndarray:
        if preprocess:
            seq = self.prepare(seq)
        return self.embed_sequences([seq])[0]

    def embed_prompts(self, prompts) -> np.ndarray:
        toks = [tokenize(p, self.vocab, self.config.max_text_len) for p in prompts]
        out = []
        for start in range(0, len(toks), EMBED_BATCH):
            ids, lengths = encoder.pad_tokens(toks[start : start + EMBED_BATCH])
            out.append(encoder.text_forward(self.params, self.config, ids, lengths)[0])
        return np.concatenate(out) if out else np.zeros((0, self.config.embed_dim))

    def embed_text(self, prompt: Prompt) -> np.ndarray:
        return self.embed_prompts([prompt])[0]

    def scores(self, zv, zt) -> np.ndarray:
        return encoder.similarity(np.atleast_2d(zv), np.atleast_2d(zt), self.config.similarity)[0]


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    arrays = dict(ckpt.params)
    if ckpt.stats is not None:
        arrays["stats.mean"] = ckpt.stats.mean
        arrays["stats.std"] = ckpt.stats.std
    manifest, offset = [], 0
    for name in sorted(arrays):
        shape = list(arrays[name].shape)
        manifest.append({"name": name, "shape": shape, "offset": offset})
        offset += int(np.prod(shape, dtype=np.int64))
    header = {
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.tokens,
        "vocab_hash": ckpt.vocab.digest(),
        "pipeline": ckpt.pipeline.to_dict(),
        "stats_layout": ckpt.stats.layout_name if ckpt.stats is not None else None,
        "epoch": int(ckpt.epoch),
        "valid_loss": float(ckpt.valid_loss),
        "train_config": ckpt.train_config,
        "params": manifest,
    }
    hbytes = json.dumps(header, sort_keys=True, allow_nan=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(arrays[m["name"]], dtype="<f4").tobytes() for m in manifest)
    return b"".join([MAGIC, struct.pack("<HI", VERSION, len(hbytes)), hbytes, blob])


def decode_checkpoint(data: bytes, vocab: Vocabulary | None = None) -> Checkpoint:
    if len(data) < 10 or data[:4] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic bytes)")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(data) < 10 + hlen:
        raise TruncatedFileError("checkpoint header is truncated")
    try:
        header = json.loads(data[10 : 10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed checkpoint header: {exc}") from exc
    blob_off = 10 + hlen
    total = sum(int(np.prod(m["shape"], dtype=np.int64)) for m in header["params"])
    if len(data) < blob_off + 4 * total:
        raise TruncatedFileError(f"checkpoint blob truncated: {len(data) - blob_off} of {4 * total} bytes")
    if len(data) > blob_off + 4 * total:
        raise FormatError("trailing bytes after checkpoint blob")
    arrays = {}
    for m in header["params"]:
        n = int(np.prod(m["shape"], dtype=np.int64))
        a = np.frombuffer(data, dtype="<f4", count=n, offset=blob_off + 4 * m["offset"])
        arrays[m["name"]] = a.reshape(m["shape"]).astype(np.float32)
    stored_vocab = Vocabulary(header["vocab"])
    if stored_vocab.digest() != header["vocab_hash"]:
        raise FormatError("checkpoint vocabulary does not match its stored hash")
    if vocab is not None and vocab.digest() != header["vocab_hash"]:
        raise ValidationError("vocabulary hash differs from the one the checkpoint was trained with")
    stats = None
    if "stats.mean" in arrays:
        stats = CorpusStats(
            arrays.pop("stats.mean").astype(np.float64),
            arrays.pop("stats.std").astype(np.float64),
            header.get("stats_layout") or "",
        )
    return Checkpoint(
        config=ModelConfig(**header["config"]),
        params=arrays,
        vocab=stored_vocab,
        pipeline=Pipeline.from_dict(header["pipeline"]),
        stats=stats,
        epoch=header["epoch"],
        valid_loss=header["valid_loss"],
        train_config=header.get("train_config", {}),
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path, vocab: Vocabulary | None = None) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), vocab)
