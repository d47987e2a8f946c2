"""Hyperspectral scenes, sample-cube extraction, splits and normalization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .tensor import DTYPE


@dataclass
class HsiScene:
    """A (height, width, bands) cube and its (height, width) label raster.

    Label 0 marks unlabeled pixels; classes are 1..C.
    """

    cube: np.ndarray
    labels: np.ndarray
    class_names: list[str] | None = None

    def __post_init__(self):
        self.cube = np.asarray(self.cube)
        self.labels = np.asarray(self.labels)
        if self.cube.ndim != 3 or self.labels.ndim != 2:
            raise ValueError("cube must be (H, W, L) and labels (H, W)")
        if self.cube.shape[:2] != self.labels.shape:
            raise ValueError(
                f"cube extents {self.cube.shape[:2]} differ from labels {self.labels.shape}"
            )
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("negative label id")

    @property
    def height(self) -> int:
        return self.cube.shape[0]

    @property
    def width(self) -> int:
        return self.cube.shape[1]

    @property
    def bands(self) -> int:
        return self.cube.shape[2]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0

    def labeled(self) -> np.ndarray:
        """(row, col) of every labeled pixel, row-major order."""
        return np.argwhere(self.labels > 0)


@dataclass
class SampleCube:
    data: np.ndarray  # (1, L, S, S)
    label: int
    origin: tuple[int, int]


def _check_size(S: int) -> int:
    if S < 1 or S % 2 == 0:
        raise ValueError(f"window size must be odd, got {S}")
    return S


def pad_scene(scene: HsiScene, S: int) -> np.ndarray:
    """Band-first (L, H + S - 1, W + S - 1) cube, mirror-reflected at borders."""
    r = (_check_size(S) - 1) // 2
    cube = np.transpose(scene.cube, (2, 0, 1))
    if r == 0:
        return cube
    if r >= min(scene.height, scene.width):
        raise ValueError(f"window {S} too large for a {scene.height}x{scene.width} scene")
    return np.pad(cube, ((0, 0), (r, r), (r, r)), mode="reflect")


def extract_cube(scene: HsiScene, row: int, col: int, S: int, padded=None) -> SampleCube:
    """The S x S x L neighborhood centered on a labeled pixel, as (1, L, S, S)."""
    _check_size(S)
    label = int(scene.labels[row, col])
    if label == 0:
        raise ValueError(f"pixel ({row}, {col}) is unlabeled")
    padded = pad_scene(scene, S) if padded is None else padded
    data = padded[:, row : row + S, col : col + S][None].astype(DTYPE)
    return SampleCube(data, label, (int(row), int(col)))


def extract_cubes(scene: HsiScene, coords, S: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack cubes for ``coords`` into (N, 1, L, S, S) samples and 0-based labels."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    padded = pad_scene(scene, S)
    x = np.empty((len(coords), 1, scene.bands, S, S), dtype=DTYPE)
    y = np.empty(len(coords), dtype=np.int64)
    for i, (r, c) in enumerate(coords):
        cube = extract_cube(scene, r, c, S, padded)
        x[i] = cube.data
        y[i] = cube.label - 1
    return x, y


Count = Union[int, Mapping[int, int], Sequence[int]]


@dataclass
class SplitSpec:
    """Per-class sample counts. ``test`` is ``"remainder"`` or a count."""

    train: Count
    val: Count = 0
    test: Union[str, Count] = "remainder"
    seed: int = 0

    def count(self, which: str, cls: int) -> int:
        value = getattr(self, which)
        if isinstance(value, (int, np.integer)):
            return int(value)
        if isinstance(value, Mapping):
            return int(value.get(cls, 0))
        return int(value[cls - 1])


@dataclass
class Splits:
    train: np.ndarray = field(default_factory=lambda: np.empty((0, 2), np.int64))
    val: np.ndarray = field(default_factory=lambda: np.empty((0, 2), np.int64))
    test: np.ndarray = field(default_factory=lambda: np.empty((0, 2), np.int64))

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def make_splits(scene: HsiScene, spec: SplitSpec) -> Splits:
    """Seeded per-class sampling without replacement into disjoint splits."""
    rng = np.random.default_rng(spec.seed)
    parts: dict[str, list] = {"train": [], "val": [], "test": []}
    for cls in range(1, scene.num_classes + 1):
        pix = np.argwhere(scene.labels == cls)
        n_tr, n_va = spec.count("train", cls), spec.count("val", cls)
        n_te = len(pix) - n_tr - n_va if spec.test == "remainder" else spec.count("test", cls)
        if min(n_tr, n_va, n_te) < 0 or n_tr + n_va + n_te > len(pix):
            raise ValueError(
                f"class {cls} has {len(pix)} labeled pixels, "
                f"requested {n_tr} train + {n_va} val + {max(n_te, 0)} test"
            )
        order = pix[rng.permutation(len(pix))]
        parts["train"].append(order[:n_tr])
        parts["val"].append(order[n_tr : n_tr + n_va])
        parts["test"].append(order[n_tr + n_va : n_tr + n_va + n_te])
    return Splits(**{
        k: (np.concatenate(v) if v else np.empty((0, 2), np.int64)).astype(np.int64)
        for k, v in parts.items()
    })


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(~(self.std > 0)):
            bad = np.flatnonzero(~(self.std > 0)).tolist()
            raise ValueError(f"zero-variance band(s) {bad}")

    @classmethod
    def from_cubes(cls, cubes: np.ndarray) -> "NormStats":
        """Per-band population statistics of (N, 1, L, S, S) samples."""
        axes = (0, 1, 3, 4)
        c = np.asarray(cubes, dtype=np.float64)
        return cls(c.mean(axis=axes), c.std(axis=axes))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "NormStats":
        return cls(np.asarray(d["mean"], np.float64), np.asarray(d["std"], np.float64))


def normalize(cubes: np.ndarray, stats: NormStats) -> np.ndarray:
    if cubes.shape[2] != len(stats.mean):
        raise ValueError(f"{cubes.shape[2]} bands but stats cover {len(stats.mean)}")
    shape = (1, 1, -1, 1, 1)
    out = (cubes - stats.mean.reshape(shape)) / stats.std.reshape(shape)
    return out.astype(cubes.dtype if cubes.dtype.kind == "f" else DTYPE)


def denormalize(cubes: np.ndarray, stats: NormStats) -> np.ndarray:
    shape = (1, 1, -1, 1, 1)
    return cubes * stats.std.reshape(shape) + stats.mean.reshape(shape)


def inflate_rgb(image: np.ndarray, l: int) -> np.ndarray:
    """Repeat an (m, n, 3) image ``l`` times along the band axis."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (m, n, 3) image, got {image.shape}")
    if l < 1:
        raise ValueError("l must be >= 1")
    return np.tile(image, (1, 1, l))


def synth_scene(classes: int, bands: int, height: int, width: int, noise: float,
                seed: int = 0, bumps: int = 3) -> HsiScene:
    """Fully labeled scene with one smooth spectral signature per class.

    Signatures are sums of Gaussian bumps over the band axis; the label
    raster is a Voronoi partition with one site per class.
    """
    if classes < 2 or bands < 8:
        raise ValueError("need classes >= 2 and bands >= 8")
    if height < 1 or width < 1 or height * width < classes:
        raise ValueError(f"degenerate extents {height}x{width} for {classes} classes")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    band = np.arange(bands, dtype=np.float64)
    sig = np.zeros((classes, bands))
    for k in range(classes):
        amp = rng.uniform(0.5, 1.5, bumps)
        center = rng.uniform(0, bands - 1, bumps)
        width_ = rng.uniform(0.08, 0.25, bumps) * bands
        sig[k] = (amp[:, None] * np.exp(-0.5 * ((band - center[:, None]) / width_[:, None]) ** 2)).sum(0)
    # distinct pixel sites, one per class
    flat = rng.choice(height * width, size=classes, replace=False)
    sites = np.stack(np.unravel_index(flat, (height, width)), axis=1).astype(np.float64)
    rr, cc = np.mgrid[0:height, 0:width]
    d2 = (rr[..., None] - sites[:, 0]) ** 2 + (cc[..., None] - sites[:, 1]) ** 2
    labels = d2.argmin(axis=-1) + 1
    cube = sig[labels - 1] + noise * rng.standard_normal((height, width, bands))
    return HsiScene(cube.astype(DTYPE), labels.astype(np.uint16),
                    [f"class{k}" for k in range(1, classes + 1)])


def signatures(scene: HsiScene) -> np.ndarray:
    """Mean spectrum of each class, shape (C, L)."""
    return np.stack([scene.cube[scene.labels == k].mean(axis=0)
                     for k in range(1, scene.num_classes + 1)])
