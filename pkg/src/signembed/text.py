"""Language-tagged prompts, a corpus vocabulary and tokenization."""
from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"
RESERVED = (PAD, UNK, CLS)
PAD_ID, UNK_ID, CLS_ID = 0, 1, 2
MAX_TEXT_LEN = 64

_TAG = re.compile(r"[a-z]{2,3}")
_WORD = re.compile(r"\w+|[^\w\s]")
_PROMPT = re.compile(r"^<([a-z]{2,3})> <([a-z]{2,3})>(?: (.*))?$", re.S)


@dataclass(frozen=True)
class Prompt:
    spoken: str
    signed: str
    text: str = ""

    def render(self) -> str:
        head = f"<{self.spoken}> <{self.signed}>"
        return f"{head} {self.text}" if self.text else head

    def __str__(self):
        return self.render()


def build_prompt(text: str, spoken: str, signed: str) -> Prompt:
    for tag in (spoken, signed):
        if not isinstance(tag, str) or not _TAG.fullmatch(tag):
            raise ValidationError(f"language tag must match [a-z]{{2,3}}, got {tag!r}")
    return Prompt(spoken, signed, " ".join(text.split()))


def parse_prompt(rendered: str) -> Prompt:
    m = _PROMPT.match(rendered)
    if not m:
        raise ValidationError(f"not a tagged prompt: {rendered!r}")
    return Prompt(m.group(1), m.group(2), m.group(3) or "")


def words(text: str) -> list[str]:
    """Lowercased word and punctuation tokens."""
    return _WORD.findall(text.lower())


def tag_token(tag: str) -> str:
    return f"<{tag}>"


class Vocabulary:
    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            raise ValidationError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary tokens must be unique")
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.ids.get(token, UNK_ID)

    def to_json(self) -> str:
        return json.dumps(self.ids, ensure_ascii=False, indent=0)

    @classmethod
    def from_json(cls, text: str) -> Vocabulary:
        mapping = json.loads(text)
        tokens = [None] * len(mapping)
        for tok, i in mapping.items():
            if not 0 <= i < len(tokens) or tokens[i] is not None:
                raise ValidationError("vocabulary ids must be a permutation of 0..n-1")
            tokens[i] = tok
        return cls(tokens)

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocabulary:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.tokens, ensure_ascii=False).encode("utf-8")).hexdigest()


def build_vocab(records, min_count: int = 1) -> Vocabulary:
    """Vocabulary from the train-split texts of ``records``.

    Words below ``min_count`` are dropped; every language tag seen anywhere in
    ``records`` is kept. Order: reserved, tags (sorted), then words by
    descending count and lexicographically.
    """
    records = list(records)
    train = [r for r in records if r.split == "train"]
    if not train:
        raise ValidationError("cannot build a vocabulary without training records")
    counts = Counter(w for r in train for w in words(r.text))
    tags = sorted({tag_token(t) for r in records for t in (r.spoken_lang, r.signed_lang)})
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    kept = [w for w in kept if w not in tags and w not in RESERVED]
    return Vocabulary(list(RESERVED) + tags + kept)


@dataclass(frozen=True, eq=False)
class TokenSequence:
    ids: np.ndarray  # padded to max_text_len
    length: int  # true (unpadded) length

    def __eq__(self, other):
        return isinstance(other, TokenSequence) and self.length == other.length and np.array_equal(self.ids, other.ids)


def tokenize(prompt: Prompt, vocab: Vocabulary, max_text_len: int = MAX_TEXT_LEN) -> TokenSequence:
    toks = [CLS, tag_token(prompt.spoken), tag_token(prompt.signed)] + words(prompt.text)
    ids = [vocab.id(t) for t in toks][:max_text_len]
    out = np.full(max_text_len, PAD_ID, dtype=np.int64)
    out[: len(ids)] = ids
    return TokenSequence(out, len(ids))


# -------------------------------------------------------- gloss utilities

_GLOSS_INDEX = re.compile(r"(?:[\s_\-.#]*\d+)+$")


def clean_gloss(gloss: str) -> str:
    """Lowercase a gloss, strip its variant index and turn snake case into words.

    ``HOUSE2`` -> ``house``, ``BREAK_DOWN_1`` -> ``break down``.
    """
    g = " ".join(gloss.lower().replace("_", " ").split())
    return _GLOSS_INDEX.sub("", g).rstrip()


def filter_known_labels(manifest, known_texts, split: str = "test"):
    """Drop ``split`` records whose cleaned label is not among ``known_texts``."""
    known = {clean_gloss(t) for t in known_texts}
    keep = [
        r for r in manifest.records
        if r.split != split or clean_gloss(r.label if r.label is not None else r.text) in known
    ]
    return manifest.with_records(keep)
