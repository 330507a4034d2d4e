# End-to-end at miniature scale: synthesize data, pre-train the three-branch
# model jointly, then run episodic evaluation per branch mask.
#
# Takes a couple of minutes on one core. The full-size protocol (60+ epochs,
# 2000 episodes) lives in tests/test_acceptance.py and the CLI.

import tempfile

from mostats import dataio, datagen, fewshot, model, pretrain
from mostats.losses import EnsembleWeights

with tempfile.TemporaryDirectory() as tmp:
    manifest = datagen.generate_dataset(f"{tmp}/ds", classes=15, per_class=30,
                                        image_shape=(3, 16, 16), skew=1.0, seed=1)
    base = dataio.load_split(manifest, "base")
    novel = dataio.load_split(manifest, "novel")
    print(f"base: {len(base.images)} images over {base.n_classes} classes; "
          f"novel: {len(novel.images)} over {novel.n_classes}")

    cfg = model.BackboneConfig(blocks=[(8, True), (16, True), (24, False)],
                               in_shape=(3, 16, 16), normalization="per-channel")
    tcfg = pretrain.TrainConfig(epochs=8, batch_size=16, lr0=0.01, schedule=[],
                                weights=EnsembleWeights(1.0, 1.0, 1.0), seed=3,
                                loss_reduction="mean", checkpoint_every=100,
                                proj_dim=32)
    ckpt_path, log = pretrain.pretrain(base, cfg, tcfg, f"{tmp}/run")
    print("\nper-epoch overall loss:",
          " ".join(f"{r.overall:.2f}" for r in log))

    ckpt = model.load_checkpoint(ckpt_path)
    print("\n3-way 1-shot accuracy by branch mask (200 episodes):")
    for mask in ((1,), (2,), (3,), (1, 2, 3)):
        s = fewshot.evaluate(ckpt, novel, way=3, shot=1, query=10, episodes=200,
                             enabled_branches=mask, seed=11)
        name = "ensemble" if len(mask) == 3 else f"branch {mask[0]}"
        print(f"  {name:<9s}: {s.mean:5.2f} +/- {s.ci95:.2f}")
