import numpy as np
import pytest

from msp_pretrain.exceptions import CheckpointError
from msp_pretrain.nn import AdamWState
from msp_pretrain.pipeline.checkpoints import (
    MAGIC,
    Checkpoint,
    FileCheckpoints,
    checkpoint_bytes,
    extract_encoder,
    load_checkpoint,
    model_from_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from msp_pretrain.selfcheck import micro_model


@pytest.fixture
def ckpt(msp_micro_model):
    optimizer = AdamWState.for_params(msp_micro_model.params, lr=3e-4)
    for name in msp_micro_model.params:
        optimizer.m[name] += 0.25
        optimizer.v[name] += 0.5
    optimizer.step = 7
    return Checkpoint.capture(msp_micro_model, optimizer, config_text="MspConfig.seed = 3\n")


def test_bytes_are_stable(ckpt):
    data = checkpoint_bytes(ckpt)
    assert data.startswith(MAGIC + b"\n")
    assert checkpoint_bytes(parse_checkpoint(data)) == data


def test_round_trip_values(ckpt, tmp_path):
    path = save_checkpoint(ckpt, tmp_path / "a.mspckpt")
    loaded = load_checkpoint(path)
    assert loaded.step == 7
    assert loaded.config_text == "MspConfig.seed = 3\n"
    assert loaded.optimizer.lr == 3e-4
    assert loaded.params.checksum() == ckpt.params.checksum()
    assert loaded.ema.checksum() == ckpt.ema.checksum()
    name = next(iter(ckpt.params))
    np.testing.assert_array_equal(loaded.optimizer.v[name], ckpt.optimizer.v[name])


def test_restore_into_fresh_model(ckpt, msp_micro_config):
    model = micro_model(msp_micro_config(), seed=99)
    optimizer = AdamWState.for_params(model.params)
    ckpt.restore(model, optimizer)
    assert model.params.checksum() == ckpt.params.checksum()
    assert optimizer.step == 7


def test_restore_shape_mismatch(ckpt, msp_micro_config):
    other = micro_model(msp_micro_config(width=4, heads=2))
    with pytest.raises(CheckpointError):
        ckpt.restore(other, AdamWState.for_params(other.params))


def test_model_from_checkpoint(ckpt, msp_micro_model):
    model = model_from_checkpoint(ckpt, msp_micro_model.spec)
    assert model.params.checksum() == ckpt.params.checksum()


def test_extract_encoder(ckpt):
    encoder = extract_encoder(ckpt)
    assert encoder and all(name.startswith("encoder.") for name in encoder)
    assert not any(p.requires_grad for p in encoder.values())


@pytest.mark.parametrize(
    "mangle",
    [
        lambda d: b"NOTCKPT\n" + d[9:],
        lambda d: d[: d.find(b"\nend\n")],
        lambda d: d[:-1],
        lambda d: d + b"\0",
        lambda d: d.replace(b"format 1", b"format 2", 1),
        lambda d: d.replace(b"step 7", b"stride 7", 1),
    ],
)
def test_corrupt_files_rejected(ckpt, mangle):
    with pytest.raises(CheckpointError):
        parse_checkpoint(mangle(checkpoint_bytes(ckpt)))


def test_file_checkpoints(ckpt, tmp_path):
    store = FileCheckpoints(root_dir=str(tmp_path))
    assert store.list_checkpoints() == []
    paths = store.create_checkpoint(ckpt)
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["ckpt-7.mspckpt", "last.mspckpt"]
    assert store.list_checkpoints() == [7]
    assert store.resolve("7") == paths[0]
    assert store.resolve("last") == paths[1]
    assert store.resolve(paths[0]) == paths[0]
    with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
        assert a.read() == b.read()
    store.delete_checkpoint(7)
    assert store.list_checkpoints() == []
    with pytest.raises(CheckpointError):
        store.resolve("7")
    with pytest.raises(CheckpointError):
        store.delete_checkpoint(7)
