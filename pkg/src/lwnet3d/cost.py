"""Parameter and multiply-accumulate (MAC) accounting.

``full`` mode counts every learnable element. ``paper`` mode counts only
the stem convolution and the main-path convolutions of each block. That
is how the 763,008 figure for lwnet20 is obtained.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .layers import BatchNorm3d, Conv3d, Linear, Module, Sequential
from .models import ModelGraph, _Residual
from .tensor import triple

MODES = ("full", "paper")


@dataclass(frozen=True)
class ConvSpec:
    """A convolution described only by its geometry."""

    name: str
    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int]
    groups: int = 1

    @property
    def params(self) -> int:
        k = int(np.prod(triple(self.kernel, "kernel")))
        return k * (self.in_channels // self.groups) * self.out_channels


@dataclass
class CostRow:
    name: str
    layer: str
    params: int
    macs: int = 0
    out_shape: tuple[int, ...] | None = None

    @property
    def group(self) -> str:
        return self.name.split(".", 1)[0]


@dataclass
class CostReport:
    rows: list[CostRow]
    mode: str = "full"
    input_shape: tuple[int, ...] | None = None
    excluded: dict[str, int] = field(default_factory=dict)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def group_params(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.rows:
            out[r.group] = out.get(r.group, 0) + r.params
        return out

    def to_text(self) -> str:
        show_macs = self.input_shape is not None
        lines = [f"mode: {self.mode}" + (f"  input: {self.input_shape}" if show_macs else "")]
        hdr = f"{'layer':<34}{'type':<16}{'params':>12}"
        if show_macs:
            hdr += f"{'MACs':>16}  output"
        lines.append(hdr)
        lines.append("-" * len(hdr))
        for r in self.rows:
            line = f"{r.name:<34}{r.layer:<16}{r.params:>12,d}"
            if show_macs:
                line += f"{r.macs:>16,d}  {r.out_shape}"
            lines.append(line)
        lines.append("-" * len(hdr))
        for g, n in self.group_params().items():
            lines.append(f"{'group ' + g:<50}{n:>12,d}")
        if self.excluded:
            for k, n in self.excluded.items():
                lines.append(f"{'not counted: ' + k:<50}{n:>12,d}")
        total = f"{'total':<50}{self.total_params:>12,d}"
        if show_macs:
            total += f"{self.total_macs:>16,d}"
        lines.append(total)
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["name,type,params,macs,output_shape"]
        for r in self.rows:
            shape = "x".join(map(str, r.out_shape)) if r.out_shape else ""
            lines.append(f"{r.name},{r.layer},{r.params},{r.macs},{shape}")
        lines.append(f"total,,{self.total_params},{self.total_macs},")
        return "\n".join(lines) + "\n"


def _leaf_params(mod: Module) -> int:
    return sum(p.data.size for p in mod._params.values())


def _counted(mod: Module, mode: str) -> bool:
    if mode == "full":
        return bool(mod._params)
    return isinstance(mod, Conv3d) and mod.role in ("stem", "main")


def _category(mod: Module) -> str:
    if isinstance(mod, BatchNorm3d):
        return "batchnorm"
    if isinstance(mod, Linear):
        return "classifier"
    if isinstance(mod, Conv3d) and mod.role == "shortcut":
        return "shortcut"
    return "conv"


def trace(module: Module, shape, prefix: str = "") -> Iterator[tuple[str, Module, tuple, tuple]]:
    """Yield ``(name, leaf, in_shape, out_shape)`` for every leaf layer,
    propagating shapes without computing activations."""
    if isinstance(module, ModelGraph):
        for name in ["stem"] + [f"stage{s}" for s in range(1, module.num_stages + 1)] + ["pool", "fc"]:
            child = getattr(module, name)
            for item in trace(child, shape, name):
                yield item
            shape = child.out_shape(shape)
        return
    if isinstance(module, _Residual):
        yield from trace(module.main, shape, f"{prefix}.main")
        if module.shortcut is not None:
            yield from trace(module.shortcut, shape, f"{prefix}.shortcut")
        return
    if isinstance(module, Sequential):
        for name, child in module.children():
            yield from trace(child, shape, f"{prefix}.{name}")
            shape = child.out_shape(shape)
        return
    yield prefix, module, tuple(shape), tuple(module.out_shape(shape))


def count_params(graph, mode: str = "full") -> CostReport:
    """Parameter report for a ModelGraph, a Module, or a list of ConvSpec."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if isinstance(graph, Sequence) and all(isinstance(s, ConvSpec) for s in graph):
        return CostReport([CostRow(s.name, "conv", s.params) for s in graph], mode)
    rows, excluded = [], {}
    for name, mod in graph.named_modules():
        if not mod._params:
            continue
        n = _leaf_params(mod)
        if _counted(mod, mode):
            rows.append(CostRow(name, type(mod).__name__, n))
        else:
            cat = _category(mod)
            excluded[cat] = excluded.get(cat, 0) + n
    return CostReport(rows, mode, excluded=excluded)


def count_macs(graph: Module, input_shape, mode: str = "full") -> CostReport:
    """Per-layer MACs: output elements times the kernel volume times input
    channels per group for convolutions, ``out * in`` per row for linear
    layers, zero for pooling, normalization and activations."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    input_shape = tuple(int(s) for s in input_shape)
    rows = []
    for name, mod, in_shape, out_shape in trace(graph, input_shape):
        if mode == "paper" and not _counted(mod, mode):
            continue
        params = _leaf_params(mod)
        macs = mod.macs(in_shape)
        if mode == "full" and not (params or macs):
            continue
        rows.append(CostRow(name, type(mod).__name__, params, macs, out_shape))
    return CostReport(rows, mode, input_shape=input_shape)


def learnable_convs(graph: Module, mode: str = "paper") -> list[str]:
    return [n for n, m in graph.named_modules() if isinstance(m, Conv3d) and _counted(m, mode)]


def main_path_params(block: Module) -> int:
    """Parameters of a block's main-path convolutions only."""
    return sum(
        m.weight.data.size for _, m in block.named_modules()
        if isinstance(m, Conv3d) and m.role == "main"
    )


def cnn_lr_layer_specs() -> list[ConvSpec]:
    """The three bias-free convolutions of the 3-D-CNN-LR Indian Pines
    network, kept as a size reference for lwnet20."""
    return [
        ConvSpec("conv1", 1, 128, (4, 4, 32)),
        ConvSpec("conv2", 128, 192, (5, 5, 32)),
        ConvSpec("conv3", 192, 256, (4, 4, 32)),
    ]
