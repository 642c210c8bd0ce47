"""Keypoint layouts: which keypoint lives at which index, and named subsets.

The canonical layout is the 543-point holistic layout produced by MediaPipe
Holistic: 33 body landmarks, 468 face-mesh points, then 21 points for each
hand (person's left first). Derived layouts are named by appending operations
to the base name, e.g. ``holistic|select:all-face+face_contour``, so that a
layout can always be rebuilt from the name stored in a pose file.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ValidationError

LAYOUT_TABLE_VERSION = 1

BODY_SIZE = 33
FACE_SIZE = 468
HAND_SIZE = 21

# Union of the MediaPipe face-mesh contour connections (lips, eyes, brows, oval).
FACE_CONTOUR = (
    0, 7, 10, 13, 14, 17, 21, 33, 37, 39, 40, 46, 52, 53, 54, 55, 58, 61, 63, 65,
    66, 67, 70, 78, 80, 81, 82, 84, 87, 88, 91, 93, 95, 103, 105, 107, 109, 127,
    132, 133, 136, 144, 145, 146, 148, 149, 150, 152, 153, 154, 155, 157, 158, 159,
    160, 161, 162, 163, 172, 173, 176, 178, 181, 185, 191, 234, 246, 249, 251, 263,
    267, 269, 270, 276, 282, 283, 284, 285, 288, 291, 293, 295, 296, 297, 300, 308,
    310, 311, 312, 314, 317, 318, 321, 323, 324, 332, 334, 336, 338, 356, 361, 362,
    365, 373, 374, 375, 377, 378, 379, 380, 381, 382, 384, 385, 386, 387, 388, 389,
    390, 397, 398, 400, 402, 405, 409, 415, 454, 466,
)

# Body landmark indices (MediaPipe pose numbering).
LEFT_SHOULDER, RIGHT_SHOULDER = 11, 12
LEFT_WRIST, RIGHT_WRIST = 15, 16
# Pinky, index and thumb tips duplicated by the hand model.
BODY_HAND_DUPLICATES = (17, 18, 19, 20, 21, 22)
# Knees, ankles, heels and foot tips. Hips stay: they anchor the torso.
LEGS = tuple(range(25, 33))
BODY_PAIRS = (
    (1, 4), (2, 5), (3, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16),
    (17, 18), (19, 20), (21, 22), (23, 24), (25, 26), (27, 28), (29, 30), (31, 32),
)

KNOWN_TAGS = ("all", "body", "face", "face_contour", "left_hand", "right_hand", "legs", "shoulders")


@dataclass(frozen=True)
class Component:
    name: str
    size: int


@dataclass(frozen=True)
class KeypointLayout:
    """An ordered set of keypoints with named index subsets.

    ``tags`` maps subset names to global indices, ``pairs`` lists mirrored
    left/right index pairs and ``landmarks`` names single points that
    transforms need (shoulders, body wrists, hand-model wrists).
    """

    name: str
    components: tuple[Component, ...]
    tags: dict[str, tuple[int, ...]] = field(default_factory=dict)
    pairs: tuple[tuple[int, int], ...] = ()
    landmarks: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        n = self.n_keypoints
        seen: set[int] = set()
        for i, j in self.pairs:
            if i == j or i in seen or j in seen:
                raise ValidationError(f"left/right pairs of {self.name!r} are not an involution")
            seen.update((i, j))
        for idx in list(self.tags.values()) + [tuple(self.landmarks.values())] + [tuple(seen)]:
            if any(not 0 <= i < n for i in idx):
                raise ValidationError(f"layout {self.name!r} references an index outside [0, {n})")

    @property
    def n_keypoints(self) -> int:
        return sum(c.size for c in self.components)

    def tag(self, name: str) -> tuple[int, ...]:
        if name == "all":
            return tuple(range(self.n_keypoints))
        if name not in self.tags:
            raise ValidationError(f"layout {self.name!r} has no subset {name!r}")
        return self.tags[name]

    def permutation(self) -> list[int]:
        """Index map that swaps every left/right pair (identity elsewhere)."""
        perm = list(range(self.n_keypoints))
        for i, j in self.pairs:
            perm[i], perm[j] = j, i
        return perm

    def subset(self, indices, name: str) -> KeypointLayout:
        """Layout restricted to ``indices`` (kept in ascending order)."""
        keep = sorted(set(int(i) for i in indices))
        remap = {old: new for new, old in enumerate(keep)}
        comps = []
        start = 0
        for comp in self.components:
            n = sum(1 for i in range(start, start + comp.size) if i in remap)
            if n:
                comps.append(Component(comp.name, n))
            start += comp.size
        tags = {}
        for t, idx in self.tags.items():
            kept = tuple(remap[i] for i in idx if i in remap)
            if kept:
                tags[t] = kept
        pairs = tuple((remap[i], remap[j]) for i, j in self.pairs if i in remap and j in remap)
        landmarks = {k: remap[v] for k, v in self.landmarks.items() if v in remap}
        return KeypointLayout(name, tuple(comps), tags, pairs, landmarks)

    @classmethod
    def generic(cls, n_keypoints: int, name: str = "generic") -> KeypointLayout:
        return cls(name, (Component("points", n_keypoints),))


def holistic_layout() -> KeypointLayout:
    face0 = BODY_SIZE
    lh0 = face0 + FACE_SIZE
    rh0 = lh0 + HAND_SIZE
    tags = {
        "body": tuple(range(BODY_SIZE)),
        "face": tuple(range(face0, lh0)),
        "face_contour": tuple(face0 + i for i in FACE_CONTOUR),
        "left_hand": tuple(range(lh0, rh0)),
        "right_hand": tuple(range(rh0, rh0 + HAND_SIZE)),
        "legs": LEGS,
        "shoulders": (LEFT_SHOULDER, RIGHT_SHOULDER),
        "body_hand_duplicates": BODY_HAND_DUPLICATES,
    }
    pairs = BODY_PAIRS + tuple((lh0 + i, rh0 + i) for i in range(HAND_SIZE))
    landmarks = {
        "left_shoulder": LEFT_SHOULDER,
        "right_shoulder": RIGHT_SHOULDER,
        "left_wrist": LEFT_WRIST,
        "right_wrist": RIGHT_WRIST,
        "left_hand_wrist": lh0,
        "right_hand_wrist": rh0,
    }
    comps = (
        Component("body", BODY_SIZE),
        Component("face", FACE_SIZE),
        Component("left_hand", HAND_SIZE),
        Component("right_hand", HAND_SIZE),
    )
    return KeypointLayout("holistic", comps, tags, pairs, landmarks)


_BASE_LAYOUTS = {"holistic": holistic_layout}

_TERM = re.compile(r"\s*([+-]?)\s*([a-z_]+)\s*")


def normalize_selector(expr: str) -> str:
    return re.sub(r"\s+", "", expr)


def select_indices(layout: KeypointLayout, expr: str) -> list[int]:
    """Evaluate a selector such as ``all - face + face_contour`` left to right."""
    expr = normalize_selector(expr)
    pos = 0
    selected: set[int] = set()
    first = True
    while pos < len(expr):
        m = _TERM.match(expr, pos)
        if not m or m.end() == pos:
            raise ValidationError(f"cannot parse selector {expr!r} at offset {pos}")
        sign, tag = m.groups()
        if first and sign == "-":
            raise ValidationError("selector cannot start with a subtraction")
        if not first and not sign:
            raise ValidationError(f"missing operator before {tag!r} in {expr!r}")
        idx = set(layout.tag(tag))
        selected = selected - idx if sign == "-" else selected | idx
        first = False
        pos = m.end()
    if not selected:
        raise ValidationError(f"selector {expr!r} selects no keypoints")
    return sorted(selected)


def reduce_indices(layout: KeypointLayout) -> list[int]:
    """Indices kept by the wrist-reposition reduction (body hand duplicates dropped)."""
    drop = set(layout.tags.get("body_hand_duplicates", ()))
    return [i for i in range(layout.n_keypoints) if i not in drop]


def derive_layout(layout: KeypointLayout, op: str) -> KeypointLayout:
    if op.startswith("select:"):
        expr = normalize_selector(op[len("select:"):])
        return layout.subset(select_indices(layout, expr), f"{layout.name}|select:{expr}")
    if op == "reduce":
        reduced = layout.subset(reduce_indices(layout), f"{layout.name}|reduce")
        tags = {k: v for k, v in reduced.tags.items() if k != "body_hand_duplicates"}
        return KeypointLayout(reduced.name, reduced.components, tags, reduced.pairs, reduced.landmarks)
    raise ValidationError(f"unknown layout operation {op!r}")


def resolve_layout(name: str) -> KeypointLayout:
    """Rebuild a layout from its name (base name plus ``|``-separated operations)."""
    base, *ops = name.split("|")
    if base not in _BASE_LAYOUTS:
        raise ValidationError(f"unknown layout {base!r}")
    layout = _BASE_LAYOUTS[base]()
    for op in ops:
        layout = derive_layout(layout, op)
    if layout.name != name:
        # Non-canonical spelling (e.g. spaces inside a selector).
        layout = KeypointLayout(name, layout.components, layout.tags, layout.pairs, layout.landmarks)
    return layout
