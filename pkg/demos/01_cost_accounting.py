"""Where the parameters of lwnet20 live, and why it is small.

Run: python demos/01_cost_accounting.py

Counts are printed two ways. ``paper`` mode keeps only the stem and the
main-path convolutions of each block; ``full`` mode counts every learnable
number, BatchNorm and shortcut projections included.
"""

from lwnet3d import build_model, count_macs, count_params
from lwnet3d.cost import cnn_lr_layer_specs

model = build_model("lwnet20", num_classes=9)

main_path = count_params(model, "paper")
print(main_path.to_text())
print()
print("per group:", main_path.group_params())
print("everything else:", main_path.excluded)

full = count_params(model, "full")
print(f"\nfull count {full.total_params:,} = {main_path.total_params:,} + "
      f"{sum(main_path.excluded.values()):,}")

# the residual baseline with the same depth is far heavier
resnet = count_params(build_model("resnet20", num_classes=9), "paper")
print(f"resnet20 main path: {resnet.total_params:,}")

cnn_lr = count_params(cnn_lr_layer_specs(), "paper")
print(f"3-D-CNN-LR convolutions: {cnn_lr.total_params:,}")

# MACs depend on the input; a 200-band 27x27 patch is a typical size
macs = count_macs(model, (1, 1, 200, 27, 27))
print(f"\nMACs for one 200x27x27 cube: {macs.total_macs:,}")
for row in macs.rows[:3]:
    print(f"  {row.name:<24} {row.out_shape}  {row.macs:,}")
