"""Scene, label, split and PPM file formats.

All binary integers are little-endian.

* HSC scene: ``b"HSC1"``, u32 height, width, bands, dtype code (1 = f32),
  then band-sequential samples.
* HSL labels: ``b"HSL1"``, u32 height, width, then row-major u16 labels.
* Split file: UTF-8 text; a ``# split: train|val|test`` header opens each
  section, followed by ``row,col,class`` lines.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import HsiScene, Splits

HSC_MAGIC = b"HSC1"
HSL_MAGIC = b"HSL1"
DTYPE_F32 = 1
SPLIT_NAMES = ("train", "val", "test")


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


def encode_hsc(cube: np.ndarray) -> bytes:
    h, w, b = cube.shape
    header = HSC_MAGIC + struct.pack("<4I", h, w, b, DTYPE_F32)
    body = np.ascontiguousarray(np.transpose(cube, (2, 0, 1)), dtype="<f4").tobytes()
    return header + body


def decode_hsc(buf: bytes) -> np.ndarray:
    if buf[:4] != HSC_MAGIC or len(buf) < 20:
        raise FormatError("not an HSC1 scene file")
    h, w, b, code = struct.unpack_from("<4I", buf, 4)
    if code != DTYPE_F32:
        raise FormatError(f"unsupported HSC dtype code {code}")
    n = h * w * b
    if len(buf) != 20 + 4 * n:
        raise FormatError(f"HSC payload has {len(buf) - 20} bytes, expected {4 * n}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=20).reshape(b, h, w)
    return np.ascontiguousarray(data.transpose(1, 2, 0)).astype(np.float32)


def encode_hsl(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise FormatError("labels must fit in u16")
    h, w = labels.shape
    return HSL_MAGIC + struct.pack("<2I", h, w) + labels.astype("<u2").tobytes()


def decode_hsl(buf: bytes) -> np.ndarray:
    if buf[:4] != HSL_MAGIC or len(buf) < 12:
        raise FormatError("not an HSL1 label file")
    h, w = struct.unpack_from("<2I", buf, 4)
    if len(buf) != 12 + 2 * h * w:
        raise FormatError("HSL payload size does not match its header")
    return np.frombuffer(buf, dtype="<u2", offset=12).reshape(h, w).astype(np.uint16)


def write_scene(scene: HsiScene, cube_path, label_path) -> None:
    Path(cube_path).write_bytes(encode_hsc(scene.cube))
    Path(label_path).write_bytes(encode_hsl(scene.labels))


def read_scene(cube_path, label_path=None) -> HsiScene:
    cube = decode_hsc(Path(cube_path).read_bytes())
    if label_path is None:
        labels = np.zeros(cube.shape[:2], dtype=np.uint16)
    else:
        labels = decode_hsl(Path(label_path).read_bytes())
    if labels.shape != cube.shape[:2]:
        raise FormatError(f"label raster {labels.shape} does not match scene {cube.shape[:2]}")
    return HsiScene(cube, labels)


def format_splits(splits: Splits, labels: np.ndarray) -> str:
    lines = []
    for name, coords in zip(SPLIT_NAMES, splits):
        lines.append(f"# split: {name}")
        lines.extend(f"{r},{c},{int(labels[r, c])}" for r, c in coords)
    return "\n".join(lines) + "\n"


def parse_splits(text: str) -> tuple[Splits, dict[str, np.ndarray]]:
    """Return the splits and, per split, the class column of each row."""
    rows: dict[str, list] = {k: [] for k in SPLIT_NAMES}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            if key.strip() != "split" or value.strip() not in rows:
                raise FormatError(f"line {lineno}: bad split header {line!r}")
            current = value.strip()
            continue
        if current is None:
            raise FormatError(f"line {lineno}: data before any '# split:' header")
        try:
            r, c, k = (int(v) for v in line.split(","))
        except ValueError:
            raise FormatError(f"line {lineno}: expected row,col,class") from None
        rows[current].append((r, c, k))
    arr = {k: np.asarray(v, dtype=np.int64).reshape(-1, 3) for k, v in rows.items()}
    splits = Splits(*(arr[k][:, :2] for k in SPLIT_NAMES))
    return splits, {k: arr[k][:, 2] for k in SPLIT_NAMES}


def write_splits(splits: Splits, labels, path) -> None:
    Path(path).write_text(format_splits(splits, labels), encoding="utf-8")


def read_splits(path, labels: np.ndarray | None = None) -> Splits:
    splits, classes = parse_splits(Path(path).read_text(encoding="utf-8"))
    if labels is not None:
        for name, coords in zip(SPLIT_NAMES, splits):
            if len(coords) == 0:
                continue
            if (coords < 0).any() or (coords[:, 0] >= labels.shape[0]).any() or (
                coords[:, 1] >= labels.shape[1]
            ).any():
                raise FormatError(f"{name} split has coordinates outside the scene")
            if not np.array_equal(labels[coords[:, 0], coords[:, 1]], classes[name]):
                raise FormatError(f"{name} split classes disagree with the label raster")
    return splits


def read_ppm(path) -> np.ndarray:
    """Binary 8-bit PPM (P6) as an (m, n, 3) uint8 array."""
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P6":
        raise FormatError("only binary P6 PPM is supported")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("malformed PPM header") from None
    if maxval != 255:
        raise FormatError("only 8-bit PPM is supported")
    pos += 1  # single whitespace after maxval
    n = width * height * 3
    if len(buf) - pos < n:
        raise FormatError("truncated PPM pixel data")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos).reshape(height, width, 3).copy()


def write_ppm(image: np.ndarray, path) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + image.tobytes())
