"""Synthetic data -> contrastive training -> retrieval and recognition.

    python3 demos/quickstart.py [workdir]

Takes about a minute on a laptop CPU.
"""
import sys
import tempfile
from pathlib import Path

from signembed.augment import AugmentConfig
from signembed.data import Pipeline
from signembed.downstream import evaluate_islr, identify_language
from signembed.retrieval import evaluate_retrieval
from signembed.synth import SynthConfig, generate_dataset
from signembed.train import TrainConfig, train

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="signembed-"))

# 12 made-up signs in two made-up sign languages
cfg = SynthConfig(classes=12, languages=2, examples_per_class_language=10, frames=(10, 16), sigma_lang=1.0, seed=0)
manifest = generate_dataset(cfg, work / "data")
print(f"dataset: {len(manifest.records)} clips in {work / 'data'}")

# small dual encoder; the video side sees shoulder-normalized poses
model = dict(embed_dim=32, video_layers=2, text_layers=1, heads=4, max_video_len=32, max_text_len=8)
tc = TrainConfig(batch_size=32, epochs=30, lr=1e-3, augment=AugmentConfig.off())
ckpt, history = train(manifest, Pipeline(("normalize",)), model, tc)
print(f"trained: best epoch {ckpt.epoch}, valid loss {ckpt.valid_loss:.3f}")

report = evaluate_retrieval(ckpt, manifest, "test", "v2t")
print("video -> text:", report["metrics"], "pool", report["pool_size"])

for mode in ("zero", "knn", "probe"):
    acc = evaluate_islr(ckpt, manifest, mode, shots=5, ks=(1,))["metrics"]["accuracy"]
    print(f"recognition ({mode}): accuracy {acc:.2f}")

rec = manifest.split("test")[0]
print(f"language of {rec.id}:", identify_language(ckpt, manifest.load(rec), list(cfg.language_tags)))
