import json
from collections import Counter

import numpy as np
import pytest

from signembed.augment import resample
from signembed.errors import ValidationError
from signembed.pose import read_manifest
from signembed.synth import SynthConfig, class_name, generate_dataset, generate_examples


def raw_features(seq, frames=12):
    return resample(seq, frames).coords.astype(np.float64).ravel()


def loo_1nn_accuracy(X, y):
    D = ((X[:, None] - X[None]) ** 2).sum(-1)
    np.fill_diagonal(D, np.inf)
    return float(np.mean(np.asarray(y)[D.argmin(1)] == np.asarray(y)))


def test_generation_is_byte_identical(tmp_path):
    cfg = SynthConfig(classes=3, languages=2, examples_per_class_language=2, frames=(4, 6), seed=9)
    a, b = generate_dataset(cfg, tmp_path / "a"), generate_dataset(cfg, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 3 * 2 * 2 + 2
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert read_manifest(tmp_path / "a" / "manifest.jsonl").records == a.records == b.records
    generate_dataset(SynthConfig(**{**cfg.to_dict(), "sample_seed": 10}), tmp_path / "c")
    poses = [f for f in files if f.suffix == ".pose"]
    assert all((tmp_path / "c" / f).read_bytes() != (tmp_path / "a" / f).read_bytes() for f in poses)


def test_records_and_layout():
    cfg = SynthConfig(classes=4, languages=3, examples_per_class_language=2, frames=(5, 7),
                      layout="holistic|select:right_hand")
    pairs = list(generate_examples(cfg))
    assert len(pairs) == 24
    for rec, seq in pairs:
        assert seq.layout.n_keypoints == 21 and 5 <= seq.n_frames <= 7
        assert rec.signed_lang in cfg.language_tags and rec.label == rec.text
    assert len({class_name(i) for i in range(2000)}) == 2000


def test_class_discriminability_without_training():
    cfg = SynthConfig(classes=20, languages=2, examples_per_class_language=5, frames=(10, 14),
                      layout="holistic|select:left_hand+right_hand", seed=2)
    pairs = list(generate_examples(cfg))
    X = np.stack([raw_features(s) for _, s in pairs])
    assert loo_1nn_accuracy(X, [r.label for r, _ in pairs]) >= 0.99


def test_zero_language_noise_collapses_languages():
    base = dict(classes=3, languages=2, examples_per_class_language=20, frames=(8, 8), sigma_jitter=0.0,
                layout="holistic|select:right_hand", seed=4)
    for sigma_lang, expect_separable in ((0.0, False), (2.0, True)):
        pairs = list(generate_examples(SynthConfig(**base, sigma_lang=sigma_lang)))
        # within one class, can 1-NN tell the languages apart?
        sub = [(r, s) for r, s in pairs if r.label == pairs[0][0].label]
        acc = loo_1nn_accuracy(np.stack([raw_features(s, 8) for _, s in sub]), [r.signed_lang for r, _ in sub])
        assert (acc > 0.95) == expect_separable, (sigma_lang, acc)


def test_iconic_classes_share_a_prototype():
    cfg = SynthConfig(classes=2, languages=2, examples_per_class_language=10, frames=(8, 8), sigma_jitter=0.0,
                      sigma_lang=3.0, iconic_classes=(0,), layout="holistic|select:right_hand", seed=5)
    pairs = list(generate_examples(cfg))

    def lang_gap(label):
        by = {t: np.mean([raw_features(s, 8) for r, s in pairs if r.label == label and r.signed_lang == t], 0)
              for t in cfg.language_tags}
        return np.linalg.norm(by["ase"] - by["gsg"])

    assert lang_gap(class_name(0)) < 0.2 * lang_gap(class_name(1))


def test_split_balance():
    cfg = SynthConfig(classes=50, languages=3, examples_per_class_language=7, frames=(2, 2), seed=1)
    recs = [r for r, _ in generate_examples(cfg)]
    counts = Counter(r.split for r in recs)
    assert sum(counts.values()) == 1050
    assert abs(counts["valid"] - 105) <= 1 and abs(counts["test"] - 105) <= 1
    per_lang = Counter(r.signed_lang for r in recs if r.split == "test")
    assert all(abs(n - 35) <= 0.2 * 35 for n in per_lang.values())
    for c in range(50):
        stratum = [r for r in recs if r.label == class_name(c)]
        assert sum(r.split == "train" for r in stratum) >= 1


def test_config_validation(tmp_path):
    for bad in (dict(classes=1), dict(languages=0), dict(frames=(5, 4)), dict(sigma_lang=-1.0),
                dict(left_handed_fraction=2.0), dict(examples_per_class_language=0)):
        with pytest.raises(ValidationError):
            SynthConfig(**bad)
    with pytest.raises(ValidationError):
        SynthConfig.from_dict({"clases": 3})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"classes": 3, "frames": [4, 5]}))
    assert SynthConfig.from_json(path).frames == (4, 5)
    with pytest.raises(ValidationError):
        list(generate_examples(SynthConfig(layout="holistic|reduce")))
