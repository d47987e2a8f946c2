"""Train lwnet20 on a seeded synthetic scene and score it.

Run: python demos/02_train_synthetic.py [epochs]

The scene has four classes with distinct spectral signatures plus Gaussian
noise. 25 pixels per class train the network, 10 validate it and the rest
are the test set. On one CPU an epoch takes a few seconds.
"""

import sys

from lwnet3d import OptimizerConfig, SplitSpec, build_model, evaluate, make_splits, synth_scene
from lwnet3d.experiment import prepare
from lwnet3d.training import train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
seed = 1

scene = synth_scene(4, 16, 48, 48, 0.05, seed=seed)
splits = make_splits(scene, SplitSpec(25, 10, seed=seed))
data = prepare(scene, splits, S=9)
print(f"train {data.train[0].shape}, val {len(data.val[1])}, test {len(data.test[1])}")

model = build_model("lwnet20", 4, seed=seed)
cfg = OptimizerConfig(epochs=epochs, seed=seed)
model, records = train(model, data.train, data.val, cfg)
for r in records:
    print(f"epoch {r.epoch:>3}  loss {r.train_loss:.4f}  val loss {r.val_loss:.4f}  "
          f"val OA {r.val_oa:.3f}")

print()
print(evaluate(model, *data.test).to_text())
