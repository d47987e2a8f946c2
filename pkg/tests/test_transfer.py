import struct

import numpy as np
import pytest

from lwnet3d.models import build_model
from lwnet3d.training import OptimizerConfig
from lwnet3d.transfer import (
    Checkpoint,
    CheckpointError,
    TransferPlan,
    TransferReport,
    fine_tune,
    load_checkpoint,
    load_transfer,
    read_checkpoint,
    save_checkpoint,
    write_checkpoint,
)

MINI = dict(widths=(4, 8, 16, 32), blocks=(1, 1, 1, 1))


def perturb_stats(model, seed=0):
    rng = np.random.default_rng(seed)
    for _, m in model.named_modules():
        if hasattr(m, "running_var"):
            m.running_mean = rng.standard_normal(m.channels).astype(np.float32)
            m.running_var = rng.uniform(0.5, 2, m.channels).astype(np.float32)
    return model


def test_checkpoint_header_and_tensor_count():
    model = build_model("lwnet20", 4, seed=0, **MINI)
    buf = save_checkpoint(model, {"note": "x"})
    assert buf[:4] == b"LWCK"
    version, count = struct.unpack_from("<2I", buf, 4)
    n_params = len(model.parameters())
    n_stats = sum(2 for _, m in model.named_modules() if hasattr(m, "running_var"))
    assert version == 1 and count == n_params + n_stats
    first_name_len = struct.unpack_from("<H", buf, 12)[0]
    assert buf[14 : 14 + first_name_len] == b"stem.conv.weight"


def test_save_load_save_identical(tmp_path):
    model = perturb_stats(build_model("lwnet20", 4, seed=1))
    buf = save_checkpoint(model, {"seed": 1})
    again = save_checkpoint(load_checkpoint(buf), {"seed": 1})
    assert buf == again
    write_checkpoint(model, tmp_path / "m.lwck", {"seed": 1})
    ck = read_checkpoint(tmp_path / "m.lwck")
    assert ck.to_bytes() == buf
    assert ck.arch == "lwnet20" and ck.num_classes == 4 and ck.metadata["seed"] == 1
    for k, v in model.state_dict().items():
        assert ck.tensors[k].tobytes() == v.tobytes()


def test_fresh_models_serialize_identically():
    assert save_checkpoint(build_model("resnet14b", 3, seed=5)) == save_checkpoint(build_model("resnet14b", 3, seed=5))


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 9) + b[8:],
    lambda b: b[:-3],
    lambda b: b + b"\0",
])
def test_corrupt_checkpoints_rejected(mutate):
    buf = save_checkpoint(build_model("lwnet20", 2, **MINI))
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(mutate(buf))


def test_transfer_across_classes_and_bands():
    src = perturb_stats(build_model("lwnet20", 9, seed=2))
    ckpt = Checkpoint.from_bytes(save_checkpoint(src))
    report = TransferReport([], [])
    dst = load_transfer(ckpt, TransferPlan(16), seed=3, report=report)
    assert report.reinitialized == ["fc.weight", "fc.bias"]
    assert dst.fc.weight.shape == (16, 256)
    s, d = src.state_dict(), dst.state_dict()
    for k in s:
        if not k.startswith("fc."):
            assert s[k].tobytes() == d[k].tobytes()
    assert sorted(report.transferred) == sorted(k for k in s if not k.startswith("fc."))
    src.eval(), dst.eval()
    rng = np.random.default_rng(0)
    for bands in (36, 64, 103):
        x = rng.standard_normal((2, 1, bands, 19, 19)).astype(np.float32)
        assert src.features(x).tobytes() == dst.features(x).tobytes()
        assert dst.forward(x).shape == (2, 16)


def test_transfer_without_exclusion_reproduces_source():
    src = perturb_stats(build_model("lwnet20", 4, seed=2, **MINI)).eval()
    dst = load_transfer(Checkpoint.from_bytes(save_checkpoint(src)), TransferPlan(4, exclude=())).eval()
    x = np.random.default_rng(1).standard_normal((3, 1, 12, 9, 9)).astype(np.float32)
    assert src.forward(x).tobytes() == dst.forward(x).tobytes()


def test_transfer_rejects_incompatible_topology():
    ckpt = Checkpoint.from_bytes(save_checkpoint(build_model("lwnet20", 4, **MINI)))
    ckpt.tensors["stage1.0.main.pw1.weight"] = np.zeros((3, 4, 1, 1, 1), np.float32)
    with pytest.raises(CheckpointError):
        load_transfer(ckpt, TransferPlan(4))
    ckpt = Checkpoint.from_bytes(save_checkpoint(build_model("lwnet20", 4, **MINI)))
    ckpt.tensors["bogus"] = np.zeros(1, np.float32)
    with pytest.raises(CheckpointError):
        load_transfer(ckpt, TransferPlan(4))


def test_fine_tune_zero_epochs_is_identity():
    model = build_model("lwnet20", 2, **MINI)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    x = np.zeros((4, 1, 12, 9, 9), np.float32)
    fine_tune(model, (x, np.array([0, 1, 0, 1])), None, OptimizerConfig(epochs=0))
    assert all(np.array_equal(before[k], v) for k, v in model.state_dict().items())
