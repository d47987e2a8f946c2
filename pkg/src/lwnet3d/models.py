"""Residual blocks, the lightweight (LW) unit and whole-network builders."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (
    AdaptiveAvgPool3d,
    AvgPool3d,
    BatchNorm3d,
    Conv3d,
    Linear,
    LogSoftmax,
    MaxPool3d,
    Module,
    ReLU,
    Sequential,
)

# name -> (block kind, blocks per stage)
ARCHITECTURES: dict[str, tuple[str, tuple[int, int, int, int]]] = {
    "lwnet20": ("lw", (1, 2, 2, 1)),
    "resnet10": ("basic", (1, 1, 1, 1)),
    "resnet14a": ("basic", (1, 2, 2, 1)),
    "resnet18": ("basic", (2, 2, 2, 2)),
    "resnet34": ("basic", (3, 4, 6, 3)),
    "resnet38": ("basic", (3, 5, 7, 3)),
    "resnet14b": ("bottleneck", (1, 1, 1, 1)),
    "resnet20": ("bottleneck", (1, 2, 2, 1)),
    "resnet26": ("bottleneck", (2, 2, 2, 2)),
    "resnet50": ("bottleneck", (3, 4, 6, 3)),
    "resnet56": ("bottleneck", (3, 5, 7, 3)),
}

BOTTLENECK_EXPANSION = 4


class _Residual(Module):
    """Main path plus shortcut, summed; optional ReLU after the sum."""

    relu_after_add = True

    def _main(self) -> Sequential:
        raise NotImplementedError

    def forward(self, x):
        out = self.main.forward(x)
        out = out + (self.shortcut.forward(x) if self.shortcut is not None else x)
        if self.relu_after_add:
            out = self.out_relu.forward(out)
        return out

    def backward(self, grad):
        if self.relu_after_add:
            grad = self.out_relu.backward(grad)
        gx = self.main.backward(grad)
        if self.shortcut is not None:
            return gx + self.shortcut.backward(grad)
        return gx + grad

    def out_shape(self, shape):
        main = self.main.out_shape(shape)
        short = self.shortcut.out_shape(shape) if self.shortcut is not None else tuple(shape)
        if main != short:
            raise ValueError(f"residual shapes differ: main {main} vs shortcut {short}")
        return main


class _Named(Sequential):
    """Sequential whose children carry explicit names."""

    def __init__(self, **layers: Module):
        Module.__init__(self)
        for name, layer in layers.items():
            setattr(self, name, layer)


@dataclass(frozen=True)
class LwUnitConfig:
    in_channels: int
    out_channels: int
    expansion: int = 4
    stride: int = 1

    def __post_init__(self):
        if self.expansion < 1:
            raise ValueError("expansion must be a positive integer")
        if self.stride == 1 and self.in_channels != self.out_channels:
            raise ValueError("stride-1 LW unit needs in_channels == out_channels")
        if self.stride == 2 and self.out_channels != 2 * self.in_channels:
            raise ValueError("stride-2 LW unit needs out_channels == 2 * in_channels")
        if self.stride not in (1, 2):
            raise ValueError("LW unit stride must be 1 or 2")

    @property
    def hidden(self) -> int:
        return self.expansion * self.out_channels


class LWUnit(_Residual):
    """Pointwise expand, 3x3x3 depthwise, pointwise project.

    Stride-2 units double the channels and carry the stride on the
    depthwise layer; their shortcut is a 2x2x2 average pool followed by a
    pointwise projection and BN. The pool keeps partial edge windows so
    that odd extents match the padded depthwise path.
    """

    relu_after_add = False

    def __init__(self, cfg: LwUnitConfig, rng, bn_eps=1e-5, bn_momentum=0.1):
        Module.__init__(self)
        self.cfg = cfg
        h = cfg.hidden
        bn = lambda c: BatchNorm3d(c, bn_eps, bn_momentum)  # noqa: E731
        self.main = _Named(
            pw1=Conv3d(cfg.in_channels, h, 1, rng=rng),
            bn1=bn(h),
            relu1=ReLU(),
            dw=Conv3d(h, h, 3, stride=cfg.stride, padding=1, groups=h, rng=rng),
            bn2=bn(h),
            relu2=ReLU(),
            pw2=Conv3d(h, cfg.out_channels, 1, rng=rng),
            bn3=bn(cfg.out_channels),
        )
        if cfg.stride == 1:
            self.shortcut = None
        else:
            self.shortcut = _Named(
                pool=AvgPool3d(2, 2, ceil_mode=True),
                conv=Conv3d(cfg.in_channels, cfg.out_channels, 1, rng=rng, role="shortcut"),
                bn=bn(cfg.out_channels),
            )


def lw_unit_forward(x, unit: LWUnit):
    return unit.forward(x)


class BasicBlock(_Residual):
    def __init__(self, in_channels, width, stride, rng, bn_eps=1e-5, bn_momentum=0.1):
        Module.__init__(self)
        bn = lambda c: BatchNorm3d(c, bn_eps, bn_momentum)  # noqa: E731
        self.main = _Named(
            conv1=Conv3d(in_channels, width, 3, stride=stride, padding=1, rng=rng),
            bn1=bn(width),
            relu1=ReLU(),
            conv2=Conv3d(width, width, 3, padding=1, rng=rng),
            bn2=bn(width),
        )
        self.shortcut = _projection(in_channels, width, stride, rng, bn)
        self.out_relu = ReLU()


class Bottleneck(_Residual):
    def __init__(self, in_channels, width, stride, rng, bn_eps=1e-5, bn_momentum=0.1):
        Module.__init__(self)
        out = BOTTLENECK_EXPANSION * width
        bn = lambda c: BatchNorm3d(c, bn_eps, bn_momentum)  # noqa: E731
        self.main = _Named(
            conv1=Conv3d(in_channels, width, 1, rng=rng),
            bn1=bn(width),
            relu1=ReLU(),
            conv2=Conv3d(width, width, 3, stride=stride, padding=1, rng=rng),
            bn2=bn(width),
            relu2=ReLU(),
            conv3=Conv3d(width, out, 1, rng=rng),
            bn3=bn(out),
        )
        self.shortcut = _projection(in_channels, out, stride, rng, bn)
        self.out_relu = ReLU()


def _projection(in_channels, out_channels, stride, rng, bn):
    if stride == 1 and in_channels == out_channels:
        return None
    return _Named(
        conv=Conv3d(in_channels, out_channels, 1, stride=stride, rng=rng, role="shortcut"),
        bn=bn(out_channels),
    )


def residual_block_forward(x, block: _Residual):
    return block.forward(x)


@dataclass
class ModelConfig:
    arch: str
    num_classes: int
    seed: int = 0
    widths: tuple[int, ...] = (32, 64, 128, 256)
    blocks: tuple[int, ...] | None = None
    expansion: int = 4
    stem_kernel: tuple[int, int, int] = (8, 3, 3)
    pool_kernel: tuple[int, int, int] = (3, 3, 3)
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("widths", "blocks", "stem_kernel", "pool_kernel"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for k in ("widths", "blocks", "stem_kernel", "pool_kernel"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


class ModelGraph(Module):
    """stem -> stage1..stage4 -> global average pool -> fc -> log_softmax."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.arch not in ARCHITECTURES:
            raise ValueError(
                f"unknown architecture {config.arch!r}; choose from {sorted(ARCHITECTURES)}"
            )
        if config.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        kind, default_blocks = ARCHITECTURES[config.arch]
        blocks = tuple(config.blocks) if config.blocks is not None else default_blocks
        if len(blocks) != len(config.widths) or min(blocks) < 1:
            raise ValueError("need one positive block count per stage width")
        self.config = config
        self.kind = kind
        rng = np.random.default_rng(config.seed)
        eps, mom = config.bn_eps, config.bn_momentum

        self.stem = _Named(
            conv=Conv3d(1, config.widths[0], config.stem_kernel, rng=rng, role="stem"),
            bn=BatchNorm3d(config.widths[0], eps, mom),
            relu=ReLU(),
            pool=MaxPool3d(config.pool_kernel, 2),
        )
        channels = config.widths[0]
        for s, (width, count) in enumerate(zip(config.widths, blocks), start=1):
            units = []
            for i in range(count):
                stride = 2 if (i == 0 and s > 1) else 1
                if kind == "lw":
                    cfg = LwUnitConfig(channels, width, config.expansion, stride)
                    units.append(LWUnit(cfg, rng, eps, mom))
                    channels = width
                elif kind == "basic":
                    units.append(BasicBlock(channels, width, stride, rng, eps, mom))
                    channels = width
                else:
                    units.append(Bottleneck(channels, width, stride, rng, eps, mom))
                    channels = BOTTLENECK_EXPANSION * width
            setattr(self, f"stage{s}", Sequential(*units))
        self.num_stages = len(blocks)
        self.feature_width = channels
        self.pool = AdaptiveAvgPool3d()
        self.fc = Linear(channels, config.num_classes, rng=rng)
        self.log_softmax = LogSoftmax()

    @property
    def arch(self) -> str:
        return self.config.arch

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def stages(self) -> list[Sequential]:
        return [getattr(self, f"stage{s}") for s in range(1, self.num_stages + 1)]

    def _extractor(self):
        return [self.stem, *self.stages, self.pool]

    def features(self, x):
        """Pooled pre-classifier features, shape (N, feature_width)."""
        x = np.asarray(x, dtype=self.fc.weight.data.dtype)
        for mod in self._extractor():
            x = mod.forward(x)
        return x

    def forward(self, x):
        return self.log_softmax.forward(self.fc.forward(self.features(x)))

    def backward(self, grad):
        grad = self.fc.backward(self.log_softmax.backward(grad))
        for mod in reversed(self._extractor()):
            grad = mod.backward(grad)
        return grad

    def out_shape(self, shape):
        for mod in self._extractor():
            shape = mod.out_shape(shape)
        return self.fc.out_shape(shape)

    def activation_shapes(self, shape) -> dict[str, tuple[int, ...]]:
        """Output shape after the stem conv, the stem and each stage."""
        shapes = {"stem.conv": self.stem.conv.out_shape(shape)}
        shape = self.stem.out_shape(shape)
        shapes["stem"] = shape
        for s, stage in enumerate(self.stages, start=1):
            shape = stage.out_shape(shape)
            shapes[f"stage{s}"] = shape
        shapes["pool"] = self.pool.out_shape(shape)
        shapes["fc"] = self.fc.out_shape(shapes["pool"])
        return shapes

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        """Log-probabilities in eval mode, computed in chunks."""
        was_training = self.training
        self.eval()
        try:
            parts = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        finally:
            self.train(was_training)
            for _, mod in self.named_modules():
                object.__setattr__(mod, "_cache", None)
        return np.concatenate(parts, axis=0)


def build_model(arch: str, num_classes: int, seed: int = 0, **overrides) -> ModelGraph:
    """Build a seeded network; ``overrides`` set ModelConfig fields such as
    ``widths``/``blocks`` for miniature variants or ``pool_kernel=(2, 3, 3)``."""
    return ModelGraph(ModelConfig(arch=arch, num_classes=num_classes, seed=seed, **overrides))


def learnable_layer_count(model: ModelGraph) -> int:
    """Stem and main-path convolutions plus the classifier; shortcut
    projections are not counted as layers."""
    convs = sum(
        1 for _, m in model.named_modules() if isinstance(m, Conv3d) and m.role != "shortcut"
    )
    return convs + 1


__all__ = [
    "ARCHITECTURES",
    "BasicBlock",
    "Bottleneck",
    "LWUnit",
    "LwUnitConfig",
    "ModelConfig",
    "ModelGraph",
    "build_model",
    "learnable_layer_count",
    "lw_unit_forward",
    "residual_block_forward",
]
