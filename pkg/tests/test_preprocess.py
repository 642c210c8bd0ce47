import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_pose
from signembed.errors import DegenerateInputError, ValidationError
from signembed.layout import KeypointLayout, holistic_layout
from signembed.pose import PoseSequence, select_components
from signembed.preprocess import (
    CorpusStats,
    anonymize,
    apply_steps,
    compute_corpus_stats,
    destandardize,
    flip_to_right_handed,
    load_stats,
    mirror,
    normalize_pose,
    reduce_and_reposition,
    save_stats,
    standardize,
)

L_SH, R_SH = 11, 12


def shoulder_pose(frames=3):
    full = holistic_layout()
    coords = np.zeros((frames, 543, 3))
    conf = np.ones((frames, 543))
    coords[:, L_SH] = (2, 2, 0)
    coords[:, R_SH] = (4, 2, 0)
    return PoseSequence(full, 25.0, coords, conf)


# ------------------------------------------------------------ normalize


def test_normalize_worked_example():
    out = normalize_pose(shoulder_pose())
    np.testing.assert_allclose(out.coords[:, L_SH], [[-0.5, 0, 0]] * 3, atol=1e-12)
    np.testing.assert_allclose(out.coords[:, R_SH], [[0.5, 0, 0]] * 3, atol=1e-12)


def _width_and_mid(seq):
    ok = (seq.confidence[:, L_SH] > 0) & (seq.confidence[:, R_SH] > 0)
    a, b = seq.coords[ok, L_SH].astype(np.float64), seq.coords[ok, R_SH].astype(np.float64)
    return np.linalg.norm(a - b, axis=1).mean(), ((a + b) / 2).mean(axis=0)


def test_normalize_postcondition_and_idempotence(rng):
    seq = random_pose(rng, frames=8)
    out = normalize_pose(seq)
    w, m = _width_and_mid(out)
    assert abs(w - 1) < 1e-6 and np.abs(m).max() < 1e-6
    np.testing.assert_array_equal(out.confidence, seq.confidence)
    again = normalize_pose(out)
    np.testing.assert_allclose(again.coords, out.coords, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 20.0), shift=st.tuples(*[st.floats(-10, 10)] * 3))
def test_normalize_similarity_invariance(seed, scale, shift):
    seq = random_pose(np.random.default_rng(seed), frames=4)
    moved = seq.with_coords(np.where(seq.mask[..., None], seq.coords * scale + np.array(shift), 0.0))
    np.testing.assert_allclose(normalize_pose(moved).coords, normalize_pose(seq).coords, atol=1e-5)


def test_normalize_spec_transform(rng):
    seq = random_pose(rng, frames=5)
    moved = seq.with_coords(np.where(seq.mask[..., None], (seq.coords.astype(np.float64) + (7, -3, 2)) * 5, 0.0))
    np.testing.assert_allclose(normalize_pose(moved).coords, normalize_pose(seq).coords, atol=1e-5)


def test_normalize_degenerate():
    seq = shoulder_pose()
    conf = seq.confidence.copy()
    conf[:, R_SH] = 0
    with pytest.raises(DegenerateInputError):
        normalize_pose(seq.with_coords(seq.coords, conf))
    coords = seq.coords.copy()
    coords[:, R_SH] = coords[:, L_SH]
    with pytest.raises(DegenerateInputError):
        normalize_pose(seq.with_coords(coords))


def test_normalize_ignores_frames_without_both_shoulders():
    seq = shoulder_pose(frames=3)
    coords, conf = seq.coords.copy(), seq.confidence.copy()
    coords[1, R_SH] = (100, 100, 0)
    conf[1, L_SH] = 0
    out = normalize_pose(seq.with_coords(coords, conf))
    np.testing.assert_allclose(out.coords[0, R_SH], [0.5, 0, 0], atol=1e-12)


# ------------------------------------------------------------- reduce


def test_reposition_worked_example():
    full = holistic_layout()
    seq = shoulder_pose(frames=1)
    coords = seq.coords.copy()
    rh = np.array(full.tag("right_hand"))
    coords[0, rh] = np.random.default_rng(0).normal(size=(21, 3))
    coords[0, full.landmarks["right_hand_wrist"]] = (1, 1, 0)
    coords[0, full.landmarks["right_wrist"]] = (1.2, 1, 0)
    lh = np.array(full.tag("left_hand"))
    coords[0, full.landmarks["left_wrist"]] = coords[0, full.landmarks["left_hand_wrist"]]
    out = reduce_and_reposition(seq.with_coords(coords))
    assert out.n_keypoints == 543 - 6
    new_rh = np.array(out.layout.tag("right_hand"))
    np.testing.assert_allclose(out.coords[0, new_rh], coords[0, rh] + (0.2, 0, 0), atol=1e-12)
    np.testing.assert_array_equal(out.coords[0, np.array(out.layout.tag("left_hand"))], coords[0, lh])


def test_reposition_preserves_hand_distances(rng):
    seq = random_pose(rng, frames=6, missing=0.0)
    out = reduce_and_reposition(seq)
    for hand in ("left_hand", "right_hand"):
        a = seq.coords[:, np.array(seq.layout.tag(hand))].astype(np.float64)
        b = out.coords[:, np.array(out.layout.tag(hand))]
        da = np.linalg.norm(a[:, :, None] - a[:, None], axis=-1)
        db = np.linalg.norm(b[:, :, None] - b[:, None], axis=-1)
        np.testing.assert_array_equal(da, db)


def test_reposition_missing_hand_untouched(rng):
    seq = random_pose(rng, frames=3)
    conf = seq.confidence.copy()
    lh = np.array(seq.layout.tag("left_hand"))
    conf[:, lh] = 0
    seq = seq.with_coords(np.where(conf[..., None] > 0, seq.coords, 0.0), conf)
    out = reduce_and_reposition(seq)
    assert np.all(out.coords[:, np.array(out.layout.tag("left_hand"))] == 0)


def test_reduce_drops_body_duplicates():
    out = reduce_and_reposition(shoulder_pose(frames=1))
    assert "body_hand_duplicates" not in out.layout.tags
    assert len(out.layout.tag("body")) == 33 - 6


# -------------------------------------------------------------- stats


def _random_corpus(rng, n=5, k=7):
    lay = KeypointLayout.generic(k)
    seqs = []
    for _ in range(n):
        f = int(rng.integers(1, 9))
        conf = (rng.random((f, k)) > 0.3).astype(np.float32)
        conf[:, -1] = 0  # never observed
        coords = np.where(conf[..., None] > 0, rng.normal(3, 2, size=(f, k, 3)), 0.0)
        seqs.append(PoseSequence(lay, 25.0, coords, conf))
    return seqs


def test_stats_two_pass_oracle(rng):
    seqs = _random_corpus(rng)
    st_ = compute_corpus_stats(seqs)
    for j in range(6):
        vals = np.concatenate([s.coords[s.confidence[:, j] > 0, j] for s in seqs]).astype(np.float64)
        mean = vals.sum(axis=0) / len(vals)
        var = ((vals - mean) ** 2).sum(axis=0) / len(vals)
        np.testing.assert_allclose(st_.mean[j], mean, atol=1e-9)
        np.testing.assert_allclose(st_.std[j], np.maximum(np.sqrt(var), 1e-6), atol=1e-9)
    np.testing.assert_array_equal(st_.mean[6], 0)
    np.testing.assert_array_equal(st_.std[6], 1)


def test_stats_constant_and_symmetric():
    lay = KeypointLayout.generic(2)
    pose = np.array([[[1.0, 2, 3], [4, 5, 6]]])
    s = compute_corpus_stats([PoseSequence(lay, 25.0, np.repeat(pose, 4, 0), np.ones((4, 2)))])
    np.testing.assert_array_equal(s.mean, pose[0])
    np.testing.assert_array_equal(s.std, 1e-6)
    s = compute_corpus_stats([PoseSequence(lay, 25.0, pose, np.ones((1, 2))), PoseSequence(lay, 25.0, -pose, np.ones((1, 2)))])
    np.testing.assert_array_equal(s.mean, 0)


def test_standardize_properties(rng):
    seqs = _random_corpus(rng, n=6)
    s = compute_corpus_stats(seqs)
    z = [standardize(x, s) for x in seqs]
    again = compute_corpus_stats(z)
    np.testing.assert_allclose(again.mean[:6], 0, atol=1e-6)
    np.testing.assert_allclose(again.std[:6], 1, atol=1e-6)
    for x, y in zip(seqs, z):
        assert np.all(y.coords[~x.mask] == 0)
        back = destandardize(y, s)
        np.testing.assert_allclose(back.coords[x.mask], x.coords[x.mask], atol=1e-6)


def test_standardize_trivial_cases():
    lay = KeypointLayout.generic(3)
    mean = np.arange(9.0).reshape(3, 3)
    s = CorpusStats(mean, np.full((3, 3), 2.0), lay.name)
    seq = PoseSequence(lay, 25.0, mean[None], np.ones((1, 3)))
    np.testing.assert_array_equal(standardize(seq, s).coords, 0)
    ident = CorpusStats(np.zeros((3, 3)), np.ones((3, 3)), lay.name)
    x = PoseSequence(lay, 25.0, np.random.default_rng(0).normal(size=(2, 3, 3)), np.ones((2, 3)))
    np.testing.assert_array_equal(standardize(x, ident).coords, x.coords)
    with pytest.raises(ValidationError):
        standardize(PoseSequence(KeypointLayout.generic(4), 25.0, np.zeros((1, 4, 3)), np.ones((1, 4))), s)


def test_anonymize(rng):
    seqs = _random_corpus(rng, n=3)
    s = compute_corpus_stats(seqs)
    x = seqs[0]
    out = anonymize(x, s)
    m0 = x.mask[0]
    assert np.array_equal(out.coords[0, m0], s.mean[m0])
    offset = rng.normal(size=(1, x.n_keypoints, 3))
    shifted = x.with_coords(np.where(x.mask[..., None], x.coords + offset, 0.0))
    np.testing.assert_allclose(anonymize(shifted, s).coords[x.mask], out.coords[x.mask], atol=1e-12)
    # frame 0 already at the mean pose: nothing changes
    np.testing.assert_allclose(anonymize(out, s).coords, out.coords, atol=1e-9)


def test_stats_file_round_trip(rng, tmp_path):
    s = compute_corpus_stats(_random_corpus(rng))
    save_stats(s, tmp_path / "s.pose")
    back = load_stats(tmp_path / "s.pose")
    np.testing.assert_array_equal(back.mean, s.mean.astype(np.float32))
    np.testing.assert_array_equal(back.std, s.std.astype(np.float32))


# --------------------------------------------------------------- mirror


def test_mirror_involution(rng):
    seq = random_pose(rng, frames=3)
    twice = mirror(mirror(seq))
    assert np.array_equal(twice.coords, seq.coords) and np.array_equal(twice.confidence, seq.confidence)


def _left_handed(rng):
    seq = random_pose(rng, frames=4)
    conf = seq.confidence.copy()
    conf[:, np.array(seq.layout.tag("right_hand"))] = 0
    return seq.with_coords(np.where(conf[..., None] > 0, seq.coords, 0.0), conf)


def test_flip_to_right_handed(rng):
    right = random_pose(rng, frames=3)
    assert flip_to_right_handed(right) is right or flip_to_right_handed(right).equals(right)
    left = _left_handed(rng)
    out = flip_to_right_handed(left)
    lh, rh = np.array(left.layout.tag("left_hand")), np.array(left.layout.tag("right_hand"))
    np.testing.assert_array_equal(out.confidence[:, rh], left.confidence[:, lh])
    np.testing.assert_array_equal(out.confidence[:, lh], left.confidence[:, rh])
    np.testing.assert_array_equal(out.coords[:, rh, 0], -left.coords[:, lh, 0])
    assert flip_to_right_handed(out).equals(out)


def test_flip_on_reduced_layouts(rng):
    left = _left_handed(rng)
    out = flip_to_right_handed(reduce_and_reposition(select_components(left, "all-face+face_contour")))
    assert out.confidence[:, np.array(out.layout.tag("right_hand"))].max() > 0


# ------------------------------------------------------------ pipeline


def test_apply_steps_order_and_stats(rng):
    seq = random_pose(rng, frames=3)
    with pytest.raises(ValidationError):
        apply_steps(seq, ["standardize"])
    with pytest.raises(ValidationError):
        apply_steps(seq, ["blur"])
    out = apply_steps(seq, ["normalize", "reduce", "select:all-face+face_contour"])
    assert out.n_keypoints == 203 - 6
