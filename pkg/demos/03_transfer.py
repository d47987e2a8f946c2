"""Pretrain on a 16-class scene, then reuse everything but the classifier.

Run: python demos/03_transfer.py

The target scene has fewer classes and a different band count. Only the
final fully connected layer is re-created; the convolutional trunk keeps
its pretrained weights and is fine-tuned together with the new head.
"""

import numpy as np

from lwnet3d import (
    Checkpoint,
    OptimizerConfig,
    SplitSpec,
    TransferPlan,
    build_model,
    evaluate,
    load_transfer,
    make_splits,
    save_checkpoint,
    synth_scene,
)
from lwnet3d.experiment import prepare
from lwnet3d.training import train
from lwnet3d.transfer import TransferReport

source = synth_scene(16, 16, 64, 64, 0.05, seed=1000)
# Voronoi regions vary in size, so small classes give up at most half their pixels
sizes = np.bincount(source.labels.ravel(), minlength=17)
per_class = {c: min(40, int(sizes[c]) // 2) for c in range(1, 17)}
src = prepare(source, make_splits(source, SplitSpec(per_class, 0, seed=0)), S=9)
pre = build_model("lwnet20", 16, seed=1000)
print("pretraining on the 16-class source ...")
train(pre, src.train, None, OptimizerConfig(epochs=10))
ckpt = Checkpoint.from_bytes(save_checkpoint(pre))

# 24 bands here against 16 in the source: the trunk does not care
target = synth_scene(4, 24, 48, 48, 0.05, seed=0)
data = prepare(target, make_splits(target, SplitSpec(25, 10, seed=0)), S=9)
# a short budget: given enough epochs both models end up near 0.98 here
budget = OptimizerConfig(epochs=3, lr_drop_epoch=50)

rep = TransferReport([], [])
tuned = load_transfer(ckpt, TransferPlan(4), seed=0, report=rep)
print(f"transferred {len(rep.transferred)} tensors, reinitialized {rep.reinitialized}")
train(tuned, data.train, data.val, budget)

scratch = build_model("lwnet20", 4, seed=0)
train(scratch, data.train, data.val, budget)

print(f"fine-tuned test OA {evaluate(tuned, *data.test).oa:.4f}")
print(f"from scratch       {evaluate(scratch, *data.test).oa:.4f}")
