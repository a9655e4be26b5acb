import numpy as np
import pytest

from msp_pretrain.exceptions import EmptyInputError, TrainingError
from msp_pretrain.nn import AdamWState
from msp_pretrain.pipeline.checkpoints import FileCheckpoints, load_checkpoint
from msp_pretrain.pipeline.trainer import (
    METRICS_HEADER,
    TrainMetrics,
    epoch_batches,
    pretrain,
    read_metrics_csv,
    scene_forward,
    steps_per_epoch,
    train_step,
    write_metrics_csv,
)
from msp_pretrain.selfcheck import micro_model, micro_scene


def scenes(n=2):
    return [micro_scene(seed=i) for i in range(n)]


def test_metrics_row_blanks_disabled_targets():
    m = TrainMetrics(step=3, loss_total=1.5, losses={"sc": 0.5, "dsf": None}, lr=0.001, seconds=0.25, n_scenes=2)
    assert m.csv_row() == "3,1.5,0.5,,,,0.001,0.250000"


def test_metrics_csv_round_trip(tmp_path):
    path = str(tmp_path / "metrics.csv")
    write_metrics_csv(path, ["1,2.0,1.0,1.0,,,0.001,0.5"])
    assert open(path).readline().strip() == METRICS_HEADER
    (row,) = read_metrics_csv(path)
    assert row["step"] == 1.0 and row["loss_color"] is None


def test_read_rejects_other_files(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n")
    with pytest.raises(ValueError):
        read_metrics_csv(str(path))


def test_epoch_batches():
    assert steps_per_epoch(5, 2) == 3
    batches = epoch_batches(5, 2, seed=0, epoch=1)
    assert [len(b) for b in batches] == [2, 2, 1]
    assert sorted(np.concatenate(batches).tolist()) == list(range(5))
    np.testing.assert_array_equal(np.concatenate(batches), np.concatenate(epoch_batches(5, 2, 0, 1)))


def test_scene_forward_is_seeded(msp_micro_config):
    config = msp_micro_config()
    model = micro_model(config)
    cloud = micro_scene(seed=1)
    a = scene_forward(model, cloud, config, step=0, scene_id=0)
    b = scene_forward(model, cloud, config, step=0, scene_id=0)
    assert a.skipped is None
    assert a.total == b.total
    assert set(a.losses) == set(config.targets)
    c = scene_forward(model, cloud, config, step=1, scene_id=0)
    assert c.total != a.total


def test_scene_forward_skips_degenerate_mask(msp_micro_config):
    config = msp_micro_config(mask_ratio=0.0)
    outcome = scene_forward(micro_model(config), micro_scene(), config, step=0, scene_id=0)
    assert outcome.skipped == "degenerate_mask"


def test_train_step_updates_model_and_ema(msp_micro_config):
    config = msp_micro_config()
    model = micro_model(config)
    optimizer = AdamWState.for_params(model.params, lr=1e-2)
    before, ema_before = model.params.checksum(), model.ema.shadow.checksum()
    metrics = train_step(model, scenes(), config, optimizer, step=0)
    assert metrics.step == 1 and metrics.n_scenes == 2
    assert np.isfinite(metrics.loss_total)
    assert metrics.losses["pointset"] is None
    assert model.params.checksum() != before
    assert model.ema.shadow.checksum() != ema_before
    assert all(model.params[n].grad is None for n in model.params)
    assert optimizer.step == 1


def test_train_step_threads_match_serial(msp_micro_config):
    config = msp_micro_config()
    results = []
    for threads in (1, 2):
        model = micro_model(config)
        train_step(model, scenes(3), config, AdamWState.for_params(model.params), step=0, threads=threads)
        results.append(model.params.checksum())
    assert results[0] == results[1]


def test_all_degenerate_batch(msp_micro_config):
    config = msp_micro_config(mask_ratio=0.0)
    model = micro_model(config)
    with pytest.raises(TrainingError) as e:
        train_step(model, scenes(), config, AdamWState.for_params(model.params), step=4)
    assert e.value.step == 5


def test_empty_batch(msp_micro_config):
    config = msp_micro_config()
    model = micro_model(config)
    with pytest.raises(EmptyInputError):
        train_step(model, [], config, AdamWState.for_params(model.params), step=0)
    with pytest.raises(EmptyInputError):
        pretrain(config, [])


def test_resume_matches_unbroken_run(msp_micro_config, msp_out_dir):
    config = msp_micro_config(epochs=2, batch_size=1, checkpoint_every=2)
    events = []
    final = pretrain(config, scenes(), out_dir=str(msp_out_dir), emit=lambda action, **d: events.append(action))
    assert final.step == 4
    assert events == ["start", "checkpoint", "checkpoint", "finish"]
    full_rows = read_metrics_csv(str(msp_out_dir / "metrics.csv"))
    assert [r["step"] for r in full_rows] == [1.0, 2.0, 3.0, 4.0]

    store = FileCheckpoints(root_dir=str(msp_out_dir))
    assert store.list_checkpoints() == [2, 4]
    resumed = pretrain(config, scenes(), out_dir=str(msp_out_dir), resume=load_checkpoint(store.resolve("2")))
    assert resumed.params.checksum() == final.params.checksum()
    assert resumed.ema.checksum() == final.ema.checksum()
    rows = read_metrics_csv(str(msp_out_dir / "metrics.csv"))
    assert [r["loss_total"] for r in rows] == [r["loss_total"] for r in full_rows]


@pytest.mark.integration_test
def test_loss_goes_down(msp_micro_config):
    config = msp_micro_config(epochs=30, batch_size=1, lr=5e-3, checkpoint_every=0, targets=["sc", "color"])
    data = scenes(1)
    model = micro_model(config)
    optimizer = AdamWState.for_params(model.params, lr=config.lr)
    losses = [train_step(model, data, config, optimizer, step=s).loss_total for s in range(30)]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])
