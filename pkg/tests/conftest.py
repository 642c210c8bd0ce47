import numpy as np
import pytest

from signembed.layout import holistic_layout, resolve_layout
from signembed.pose import PoseSequence


def random_pose(rng, frames=6, layout=None, missing=0.1, fps=25.0):
    """Random sequence with visible shoulders/wrists and some missing points."""
    layout = layout or holistic_layout()
    k = layout.n_keypoints
    coords = rng.normal(size=(frames, k, 3))
    conf = rng.uniform(0.2, 1.0, size=(frames, k))
    conf[rng.random((frames, k)) < missing] = 0.0
    for role in ("left_shoulder", "right_shoulder", "left_wrist", "right_wrist", "left_hand_wrist", "right_hand_wrist"):
        if role in layout.landmarks:
            conf[:, layout.landmarks[role]] = 1.0
    coords = np.where(conf[..., None] > 0, coords, 0.0)
    return PoseSequence(layout, fps, coords.astype(np.float32), conf.astype(np.float32))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def contour_layout():
    return resolve_layout("holistic|select:all-face+face_contour")


TINY_MODEL = dict(embed_dim=16, video_layers=1, text_layers=1, heads=2, max_video_len=32, max_text_len=8)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    from signembed.synth import SynthConfig, generate_dataset

    cfg = SynthConfig(classes=6, languages=2, examples_per_class_language=5, frames=(6, 10), seed=3)
    return generate_dataset(cfg, tmp_path_factory.mktemp("tiny"))


@pytest.fixture(scope="session")
def tiny_run(tiny_data):
    """A few epochs on the tiny dataset; returns (checkpoint, history)."""
    from signembed.augment import AugmentConfig
    from signembed.data import Pipeline
    from signembed.train import TrainConfig, train

    tc = TrainConfig(batch_size=8, epochs=20, lr=3e-3, seed=0, augment=AugmentConfig.off())
    return train(tiny_data, Pipeline(("normalize", "select:right_hand")), TINY_MODEL, tc)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, when the acceptance module ran."""
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in mod.CRITERIA.items():
        ok, detail = mod.RESULTS.get(n, (False, "not reached"))
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
