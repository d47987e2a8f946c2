import struct

import numpy as np
import pytest

from lwnet3d.data import HsiScene, SplitSpec, make_splits, synth_scene
from lwnet3d.fileio import (
    FormatError,
    decode_hsc,
    decode_hsl,
    encode_hsc,
    encode_hsl,
    format_splits,
    parse_splits,
    read_ppm,
    read_scene,
    read_splits,
    write_ppm,
    write_scene,
    write_splits,
)


def test_hsc_layout():
    cube = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
    buf = encode_hsc(cube)
    assert buf[:4] == b"HSC1"
    assert struct.unpack_from("<4I", buf, 4) == (2, 3, 4, 1)
    # band-sequential: the first H*W values are band 0
    first = np.frombuffer(buf, "<f4", 6, 20)
    np.testing.assert_array_equal(first, cube[..., 0].ravel())
    np.testing.assert_array_equal(decode_hsc(buf), cube)


def test_hsl_layout():
    labels = np.array([[0, 1, 2], [3, 4, 65535]], dtype=np.uint16)
    buf = encode_hsl(labels)
    assert buf[:4] == b"HSL1" and struct.unpack_from("<2I", buf, 4) == (2, 3)
    np.testing.assert_array_equal(decode_hsl(buf), labels)


@pytest.mark.parametrize("bad", [b"", b"HSC0" + bytes(16), b"HSC1" + struct.pack("<4I", 2, 2, 2, 1)])
def test_hsc_rejects_bad(bad):
    with pytest.raises(FormatError):
        decode_hsc(bad)


def test_hsc_rejects_unknown_dtype():
    with pytest.raises(FormatError):
        decode_hsc(b"HSC1" + struct.pack("<4I", 1, 1, 1, 7) + bytes(4))


def test_scene_roundtrip(tmp_path):
    scene = synth_scene(4, 16, 12, 10, 0.05, seed=2)
    write_scene(scene, tmp_path / "s.hsc", tmp_path / "s.hsl")
    back = read_scene(tmp_path / "s.hsc", tmp_path / "s.hsl")
    assert back.cube.tobytes() == scene.cube.tobytes()
    np.testing.assert_array_equal(back.labels, scene.labels)


def test_split_file_roundtrip(tmp_path):
    scene = synth_scene(3, 8, 10, 10, 0.0, seed=0)
    splits = make_splits(scene, SplitSpec(2, 1, seed=0))
    text = format_splits(splits, scene.labels)
    assert text.startswith("# split: train\n")
    write_splits(splits, scene.labels, tmp_path / "split.txt")
    back = read_splits(tmp_path / "split.txt", scene.labels)
    for a, b in zip(splits, back):
        np.testing.assert_array_equal(a, b)


def test_split_file_errors(tmp_path):
    with pytest.raises(FormatError):
        parse_splits("1,2,3\n")
    with pytest.raises(FormatError):
        parse_splits("# split: holdout\n")
    with pytest.raises(FormatError):
        parse_splits("# split: train\n1;2;3\n")
    labels = np.ones((4, 4), dtype=np.uint16)
    (tmp_path / "s.txt").write_text("# split: train\n0,0,2\n")
    with pytest.raises(FormatError):
        read_splits(tmp_path / "s.txt", labels)
    (tmp_path / "s.txt").write_text("# split: test\n9,0,1\n")
    with pytest.raises(FormatError):
        read_splits(tmp_path / "s.txt", labels)


def test_ppm_roundtrip_and_comments(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    write_ppm(img, tmp_path / "a.ppm")
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)
    (tmp_path / "b.ppm").write_bytes(b"P6\n# comment\n7 5\n255\n" + img.tobytes())
    np.testing.assert_array_equal(read_ppm(tmp_path / "b.ppm"), img)


@pytest.mark.parametrize("data", [b"P3\n1 1\n255\n0 0 0", b"P6\n2 2\n255\n" + bytes(5),
                                  b"P6\n1 1\n65535\n" + bytes(6), b"P6\n1"])
def test_ppm_rejects_malformed(tmp_path, data):
    (tmp_path / "x.ppm").write_bytes(data)
    with pytest.raises(FormatError):
        read_ppm(tmp_path / "x.ppm")


def test_scene_without_labels(tmp_path):
    scene = HsiScene(np.ones((2, 2, 8), np.float32), np.ones((2, 2), np.uint16))
    write_scene(scene, tmp_path / "c.hsc", tmp_path / "c.hsl")
    assert read_scene(tmp_path / "c.hsc").labels.max() == 0
