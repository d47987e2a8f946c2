"""Layer modules with cached forward state and explicit backward passes.

A module's ``forward`` stores what its ``backward`` needs; ``backward``
consumes that cache exactly once, accumulates into each parameter's
``grad`` and returns the gradient with respect to the module input.
Containers replay their children in reverse order, which makes the chain
of caches the gradient tape of a training step.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import DTYPE, triple


class Parameter:
    """A learnable array and its accumulated gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = data
        self.grad = np.zeros_like(data)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Parameter(shape={self.data.shape}, dtype={self.data.dtype})"


class Module:
    """Base class; attributes that are Modules, Parameters or names listed in
    ``_buffer_names`` form the hierarchical state of the model."""

    _buffer_names: tuple[str, ...] = ()

    def __init__(self):
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "training", True)
        object.__setattr__(self, "_cache", None)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Parameter):
            self._params[name] = value
        object.__setattr__(self, name, value)

    # state ------------------------------------------------------------
    def children(self) -> Iterator[tuple[str, "Module"]]:
        yield from self._modules.items()

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for mod_name, mod in self.named_modules(prefix):
            for name, p in mod._params.items():
                yield (f"{mod_name}.{name}" if mod_name else name), p

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for mod_name, mod in self.named_modules(prefix):
            for name in mod._buffer_names:
                yield (f"{mod_name}.{name}" if mod_name else name), getattr(mod, name)

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters then buffers, module by module, in construction order."""
        state = {}
        for mod_name, mod in self.named_modules():
            pre = f"{mod_name}." if mod_name else ""
            for name, p in mod._params.items():
                state[pre + name] = p.data
            for name in mod._buffer_names:
                state[pre + name] = getattr(mod, name)
        return state

    def load_state(self, name: str, value: np.ndarray) -> None:
        mod_path, _, leaf = name.rpartition(".")
        mod = self
        for part in mod_path.split(".") if mod_path else ():
            mod = mod._modules[part]
        current = mod._params[leaf].data if leaf in mod._params else getattr(mod, leaf)
        if current.shape != value.shape:
            raise ValueError(f"{name}: shape {value.shape} != {current.shape}")
        value = np.array(value, dtype=current.dtype)
        if leaf in mod._params:
            mod._params[leaf].data = value
            mod._params[leaf].grad = np.zeros_like(value)
        else:
            object.__setattr__(mod, leaf, value)

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def astype(self, dtype) -> "Module":
        for _, mod in self.named_modules():
            for p in mod._params.values():
                p.data = p.data.astype(dtype)
                p.grad = np.zeros_like(p.data)
            for name in mod._buffer_names:
                object.__setattr__(mod, name, getattr(mod, name).astype(dtype))
        return self

    # computation -----------------------------------------------------
    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def out_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(shape)

    def macs(self, shape: tuple[int, ...]) -> int:
        return 0

    def _take_cache(self):
        cache = self._cache
        if cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a matching forward")
        object.__setattr__(self, "_cache", None)
        return cache

    def _save(self, *items):
        object.__setattr__(self, "_cache", items)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=DTYPE) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv3d(Module):
    """Bias-free 3-D convolution.

    ``role`` tags the layer for cost accounting: ``"stem"``, ``"main"`` (a
    block's main path) or ``"shortcut"``.
    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0,
                 groups=1, rng=None, role="main"):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ValueError("in/out channels must be divisible by groups")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel = triple(kernel, "kernel")
        self.stride = triple(stride, "stride")
        self.padding = triple(padding, "padding", 0)
        self.groups = groups
        self.role = role
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (out_channels, in_channels // groups) + self.kernel
        fan_in = (in_channels // groups) * int(np.prod(self.kernel))
        self.weight = Parameter(he_normal(rng, shape, fan_in))

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        self._save(x)
        return F.conv3d(x, self.weight.data, self.stride, self.padding, self.groups)

    def backward(self, grad):
        (x,) = self._take_cache()
        gx, gw = F.conv3d_backward(x, self.weight.data, grad, self.stride, self.padding, self.groups)
        self.weight.grad += gw
        return gx

    def out_shape(self, shape):
        if shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {shape[1]}")
        sp = tuple(
            F.conv_output_size(n, k, s, p)
            for n, k, s, p in zip(shape[2:], self.kernel, self.stride, self.padding)
        )
        return (shape[0], self.out_channels) + sp

    def macs(self, shape):
        out = self.out_shape(shape)
        per_output = int(np.prod(self.kernel)) * self.in_channels // self.groups
        return int(np.prod(out)) * per_output

    def __repr__(self):
        return (f"Conv3d({self.in_channels}, {self.out_channels}, kernel={self.kernel}, "
                f"stride={self.stride}, padding={self.padding}, groups={self.groups})")


class BatchNorm3d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels, dtype=DTYPE))
        self.beta = Parameter(np.zeros(channels, dtype=DTYPE))
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        gamma, beta = self.gamma.data, self.beta.data
        if not self.training:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            scale = (gamma * inv_std).reshape(1, -1, 1, 1, 1)
            shift = (beta - self.running_mean * gamma * inv_std).reshape(1, -1, 1, 1, 1)
            x_hat = (x - self.running_mean.reshape(1, -1, 1, 1, 1)) * inv_std.reshape(1, -1, 1, 1, 1)
            self._save("eval", inv_std, x_hat)
            return x * scale + shift
        out, x_hat, inv_std, mean, var = F.batchnorm_train(x, gamma, beta, self.eps)
        m = x.size // x.shape[1]
        mom = self.momentum
        dt = self.running_mean.dtype
        self.running_mean = ((1 - mom) * self.running_mean + mom * mean).astype(dt)
        self.running_var = ((1 - mom) * self.running_var + mom * var * m / (m - 1)).astype(dt)
        self._save("train", inv_std, x_hat)
        return out

    def backward(self, grad):
        mode, inv_std, x_hat = self._take_cache()
        if mode == "eval":
            self.gamma.grad += (grad * x_hat).sum(axis=(0, 2, 3, 4))
            self.beta.grad += grad.sum(axis=(0, 2, 3, 4))
            return grad * (self.gamma.data * inv_std).reshape(1, -1, 1, 1, 1)
        gx, gg, gb = F.batchnorm_train_backward(grad, x_hat, inv_std, self.gamma.data)
        self.gamma.grad += gg
        self.beta.grad += gb
        return gx

    def __repr__(self):
        return f"BatchNorm3d({self.channels})"


class ReLU(Module):
    def forward(self, x):
        self._save(x)
        return F.relu(x)

    def backward(self, grad):
        (x,) = self._take_cache()
        return F.relu_backward(x, grad)

    def __repr__(self):
        return "ReLU()"


class MaxPool3d(Module):
    def __init__(self, kernel, stride):
        super().__init__()
        self.kernel = triple(kernel, "kernel")
        self.stride = triple(stride, "stride")

    def forward(self, x):
        out, arg = F.maxpool3d(x, self.kernel, self.stride)
        self._save(x, arg)
        return out

    def backward(self, grad):
        x, arg = self._take_cache()
        return F.maxpool3d_backward(x, arg, grad, self.kernel, self.stride)

    def out_shape(self, shape):
        return tuple(shape[:2]) + tuple(
            F.conv_output_size(n, k, s) for n, k, s in zip(shape[2:], self.kernel, self.stride)
        )

    def __repr__(self):
        return f"MaxPool3d(kernel={self.kernel}, stride={self.stride})"


class AvgPool3d(Module):
    def __init__(self, kernel, stride, ceil_mode=False):
        super().__init__()
        self.kernel = triple(kernel, "kernel")
        self.stride = triple(stride, "stride")
        self.ceil_mode = ceil_mode

    def forward(self, x):
        self._save(x.shape)
        return F.avgpool3d(x, self.kernel, self.stride, self.ceil_mode)

    def backward(self, grad):
        (shape,) = self._take_cache()
        return F.avgpool3d_backward(shape, grad, self.kernel, self.stride, self.ceil_mode)

    def out_shape(self, shape):
        return tuple(shape[:2]) + tuple(
            F._pool_extent(n, k, s, self.ceil_mode)
            for n, k, s in zip(shape[2:], self.kernel, self.stride)
        )

    def __repr__(self):
        return f"AvgPool3d(kernel={self.kernel}, stride={self.stride}, ceil_mode={self.ceil_mode})"


class AdaptiveAvgPool3d(Module):
    """Global mean over (D, H, W), flattened to (N, C)."""

    def forward(self, x):
        self._save(x.shape)
        return F.adaptive_avgpool3d(x).reshape(x.shape[0], x.shape[1])

    def backward(self, grad):
        (shape,) = self._take_cache()
        return F.adaptive_avgpool3d_backward(shape, grad.reshape(shape[:2] + (1, 1, 1)))

    def out_shape(self, shape):
        if min(shape[2:]) < 1:
            raise ValueError(f"adaptive pooling needs non-empty extents, got {shape}")
        return tuple(shape[:2])

    def __repr__(self):
        return "AdaptiveAvgPool3d()"


class Linear(Module):
    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(he_normal(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features, dtype=DTYPE))

    def forward(self, x):
        self._save(x)
        return F.linear(x, self.weight.data, self.bias.data)

    def backward(self, grad):
        (x,) = self._take_cache()
        gx, gw, gb = F.linear_backward(x, self.weight.data, grad)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx

    def out_shape(self, shape):
        if shape[1] != self.in_features:
            raise ValueError(f"expected {self.in_features} features, got {shape[1]}")
        return (shape[0], self.out_features)

    def macs(self, shape):
        return shape[0] * self.in_features * self.out_features

    def __repr__(self):
        return f"Linear({self.in_features}, {self.out_features})"


class LogSoftmax(Module):
    def forward(self, x):
        out = F.log_softmax(x)
        self._save(out)
        return out

    def backward(self, grad):
        (out,) = self._take_cache()
        return F.log_softmax_backward(out, grad)

    def __repr__(self):
        return "LogSoftmax()"


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def __iter__(self):
        return iter(self._modules.values())

    def __len__(self):
        return len(self._modules)

    def __getitem__(self, i):
        return list(self._modules.values())[i]

    def forward(self, x):
        for layer in self:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(list(self)):
            grad = layer.backward(grad)
        return grad

    def out_shape(self, shape):
        for layer in self:
            shape = layer.out_shape(shape)
        return shape
