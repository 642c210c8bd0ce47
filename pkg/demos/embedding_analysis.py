"""Cross-lingual dispersion (iconicity) and centroid analogies.

    python3 demos/embedding_analysis.py [workdir]

Classes 0-2 are generated identically in every language, so after training
they should show the smallest spread across languages.
"""
import sys
import tempfile
from pathlib import Path

from signembed.analysis import analogy, centroid, embed_manifest, group_embeddings, iconicity_rank
from signembed.augment import AugmentConfig
from signembed.data import Pipeline
from signembed.synth import SynthConfig, class_name, generate_dataset
from signembed.train import TrainConfig, train

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="signembed-"))
cfg = SynthConfig(classes=10, languages=3, examples_per_class_language=8, frames=(10, 16), sigma_lang=1.0,
                  iconic_classes=(0, 1, 2), seed=9)
manifest = generate_dataset(cfg, work / "data")
model = dict(embed_dim=32, video_layers=2, text_layers=1, heads=4, max_video_len=32, max_text_len=8)
ckpt, _ = train(manifest, Pipeline(("normalize",)), model,
                TrainConfig(batch_size=32, epochs=40, lr=1e-3, augment=AugmentConfig.off()))

records, Z, _ = embed_manifest(ckpt, manifest)
groups = group_embeddings(records, Z, "concept", "signed_lang")
print("iconic by construction:", [class_name(i) for i in range(3)])
for key, score in iconicity_rank(groups):
    print(f"  {key:8s} dispersion {score:.4f}")

cents = {g.key: centroid(g) for g in groups}
a, b, c = class_name(3), class_name(4), class_name(5)
print(f"{a} - {b} + {c} ~", analogy(a, b, c, cents)[:3])
