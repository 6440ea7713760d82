"""Tests for level training, stacking invariants, and stack IO."""
import numpy as np
import pytest
import torch

from porestack.data import ENGINEERED_CHANNELS, PHYSICAL_CHANNELS
from porestack.errors import DataError, TrainingError
from porestack.features import fit_norm_stats, windows_for, with_engineered_channels
from porestack.models import Checkpoint, ModelSpec, build_model, mse_loss
from porestack.stacking import (LevelDataset, StackedModel, TrainConfig,
                                build_level_dataset, input_channels_for,
                                load_stack, save_stack, stack_refine,
                                train_correction_level, train_level0,
                                train_model, window_tensors)

from test_data import make_sim

TINY_SPEC = ModelSpec(family="convlstm", in_steps=2, out_steps=2,
                      in_channels=7, out_channels=4,
                      hidden_channels=4, num_layers=1, kernel_size=3)


def tiny_corpus(n_sims=3, n_steps=6, h=8, w=8):
    sims = [with_engineered_channels(make_sim(f"s{k}", n_steps, h, w, seed=k))
            for k in range(n_sims)]
    stats = fit_norm_stats(sims)
    train_w = windows_for(sims[:-1], TINY_SPEC.in_steps, TINY_SPEC.out_steps)
    val_w = windows_for(sims[-1:], TINY_SPEC.in_steps, TINY_SPEC.out_steps)
    return sims, stats, train_w, val_w


def quick_cfg(**kw):
    defaults = dict(lr=1e-3, batch_size=4, max_epochs=3, patience=2, seed=0)
    defaults.update(kw)
    return TrainConfig(**defaults)


def random_checkpoint(spec, stats_hash="h", level=0, seed=0):
    torch.manual_seed(seed)
    model = build_model(spec)
    return Checkpoint(spec=spec, state_dict=model.state_dict(),
                      stats_hash=stats_hash, level=level)


def test_train_config_validation():
    with pytest.raises(TrainingError):
        TrainConfig(lr=0.0)
    with pytest.raises(TrainingError):
        TrainConfig(batch_size=0)
    with pytest.raises(TrainingError):
        TrainConfig(max_epochs=0)
    with pytest.raises(TrainingError):
        TrainConfig(patience=0)


def test_input_channels_for():
    assert input_channels_for(4) == PHYSICAL_CHANNELS
    assert input_channels_for(7) == PHYSICAL_CHANNELS + ENGINEERED_CHANNELS
    with pytest.raises(DataError):
        input_channels_for(5)


def test_window_tensors_shapes_and_ranges():
    _, stats, train_w, _ = tiny_corpus()
    x, y = window_tensors(train_w, stats)
    assert x.dtype == torch.float32 and y.dtype == torch.float32
    assert x.shape == (len(train_w), 2, 7, 8, 8)
    assert y.shape == (len(train_w), 2, 4, 8, 8)
    # targets are min-max normalized against the full corpus, so training
    # windows land inside [0, 1]
    assert float(y.min()) >= 0.0 and float(y.max()) <= 1.0
    # the exempt engineered channels pass through untouched
    raw = np.stack([w.inputs for w in train_w])
    np.testing.assert_array_equal(x[:, :, 5].numpy(), raw[:, :, 5])
    np.testing.assert_array_equal(x[:, :, 6].numpy(), raw[:, :, 6])
    with pytest.raises(TrainingError):
        window_tensors([], stats)


def test_train_model_is_deterministic():
    _, stats, train_w, val_w = tiny_corpus()
    x_t, y_t = window_tensors(train_w, stats)
    x_v, y_v = window_tensors(val_w, stats)
    ck_a = train_model(TINY_SPEC, x_t, y_t, x_v, y_v, quick_cfg(), "h")
    ck_b = train_model(TINY_SPEC, x_t, y_t, x_v, y_v, quick_cfg(), "h")
    assert ck_a.content_hash() == ck_b.content_hash()
    assert [e["val_loss"] for e in ck_a.log] == [e["val_loss"] for e in ck_b.log]
    ck_c = train_model(TINY_SPEC, x_t, y_t, x_v, y_v, quick_cfg(seed=1), "h")
    assert ck_c.content_hash() != ck_a.content_hash()


def test_train_model_restores_best_epoch_weights():
    _, stats, train_w, val_w = tiny_corpus()
    x_t, y_t = window_tensors(train_w, stats)
    x_v, y_v = window_tensors(val_w, stats)
    ck = train_model(TINY_SPEC, x_t, y_t, x_v, y_v,
                     quick_cfg(max_epochs=6, patience=6), "h")
    best_logged = min(e["val_loss"] for e in ck.log)
    model = ck.build()
    with torch.no_grad():
        total = 0.0
        for k in range(0, len(x_v), 4):
            pred = model(x_v[k:k + 4])
            total += float(mse_loss(pred, y_v[k:k + 4])) * len(pred)
    assert total / len(x_v) == pytest.approx(best_logged, rel=1e-6)


def test_train_model_early_stopping_stops_on_plateau():
    # a vanishing learning rate freezes the weights, so validation loss
    # repeats bit for bit and patience must cut the run short
    _, stats, train_w, val_w = tiny_corpus()
    x_t, y_t = window_tensors(train_w, stats)
    x_v, y_v = window_tensors(val_w, stats)
    cfg = quick_cfg(lr=1e-30, max_epochs=50, patience=3)
    ck = train_model(TINY_SPEC, x_t, y_t, x_v, y_v, cfg, "h")
    assert len(ck.log) == cfg.patience + 1


def test_train_model_rejects_empty_sets():
    _, stats, train_w, val_w = tiny_corpus()
    x_t, y_t = window_tensors(train_w, stats)
    x_v, y_v = window_tensors(val_w, stats)
    empty_x, empty_y = x_t[:0], y_t[:0]
    with pytest.raises(TrainingError):
        train_model(TINY_SPEC, empty_x, empty_y, x_v, y_v, quick_cfg(), "h")
    with pytest.raises(TrainingError):
        train_model(TINY_SPEC, x_t, y_t, empty_x, empty_y, quick_cfg(), "h")


def test_train_level0_checks_channel_count():
    sims = [make_sim(f"s{k}", 6, 8, 8, seed=k) for k in range(2)]
    stats = fit_norm_stats(sims)
    wins = windows_for(sims, 2, 2)  # physical only: 4 channels
    with pytest.raises(TrainingError, match="channels"):
        train_level0(TINY_SPEC, wins, wins, stats, quick_cfg())


def test_train_level0_runs_and_labels_level():
    _, stats, train_w, val_w = tiny_corpus()
    ck = train_level0(TINY_SPEC, train_w, val_w, stats, quick_cfg(max_epochs=1))
    assert ck.level == 0
    assert ck.stats_hash == stats.content_hash()
    assert len(ck.log) == 1


def test_stacked_model_validates_level_numbering():
    base = random_checkpoint(TINY_SPEC, level=0)
    wrong = random_checkpoint(TINY_SPEC.correction_spec(), level=2, seed=1)
    with pytest.raises(TrainingError, match="level"):
        StackedModel([base, wrong])


def test_stacked_model_validates_stats_hash():
    base = random_checkpoint(TINY_SPEC, stats_hash="a")
    other = random_checkpoint(TINY_SPEC.correction_spec(), stats_hash="b",
                              level=1, seed=1)
    with pytest.raises(TrainingError, match="statistics"):
        StackedModel([base, other])


def test_stacked_model_validates_family_and_correction_shape():
    base = random_checkpoint(TINY_SPEC)
    tau_spec = ModelSpec(family="tau", in_steps=2, out_steps=2, in_channels=4,
                         out_channels=4, hidden_spatial=4, hidden_temporal=8,
                         blocks=1)
    with pytest.raises(TrainingError, match="famil"):
        StackedModel([base, random_checkpoint(tau_spec, level=1)])
    # a "correction" that still wants the 7-channel input cannot chain
    bad = random_checkpoint(TINY_SPEC, level=1, seed=2)
    with pytest.raises(TrainingError, match="consume"):
        StackedModel([base, bad])


def test_stacked_model_requires_base():
    with pytest.raises(TrainingError):
        StackedModel([])


def test_stack_refine_chains_levels_and_traces():
    base = random_checkpoint(TINY_SPEC)
    corr_spec = TINY_SPEC.correction_spec()
    stack = StackedModel([
        base,
        random_checkpoint(corr_spec, level=1, seed=1),
        random_checkpoint(corr_spec, level=2, seed=2),
    ])
    assert stack.levels == 2
    x = torch.rand(3, 2, 7, 8, 8)
    trace = []
    y = stack_refine(stack, x, trace)
    assert y.shape == (3, 2, 4, 8, 8)
    assert len(trace) == 3
    assert torch.equal(trace[-1], y)
    # each level transforms its predecessor's output
    assert not torch.equal(trace[0], trace[1])
    # the final output really is the last network applied to the trace
    manual = stack.models()[2](trace[1])
    assert torch.allclose(manual, y)


def test_stack_refine_rejects_bad_inputs():
    stack = StackedModel([random_checkpoint(TINY_SPEC)])
    with pytest.raises(DataError):
        stack_refine(stack, torch.rand(2, 7, 8, 8))
    with pytest.raises(DataError):
        stack_refine(stack, torch.rand(1, 2, 4, 8, 8))


def test_build_level_dataset_anchors_and_shapes():
    sims, stats, train_w, _ = tiny_corpus()
    stack = StackedModel([random_checkpoint(TINY_SPEC,
                                            stats_hash=stats.content_hash())])
    ds = build_level_dataset(stack, train_w, stats)
    assert ds.prefix_levels == 1
    assert ds.anchors == [(w.sim_id, w.t) for w in train_w]
    assert ds.predictions.shape == ds.targets.shape
    assert ds.predictions.shape == (len(train_w), 2, 4, 8, 8)
    # the rows are exactly the stack outputs, in window order
    x, _ = window_tensors(train_w, stats)
    expected = stack_refine(stack, x)
    np.testing.assert_allclose(ds.predictions, expected.numpy(), atol=1e-6)


def test_build_level_dataset_rejects_foreign_stats():
    sims, stats, train_w, _ = tiny_corpus()
    stack = StackedModel([random_checkpoint(TINY_SPEC, stats_hash="foreign")])
    with pytest.raises(TrainingError, match="statistics"):
        build_level_dataset(stack, train_w, stats)


def test_level_dataset_validation():
    good = dict(prefix_levels=1, anchors=[("s0", 1)],
                predictions=np.zeros((1, 2, 4, 8, 8), np.float32),
                targets=np.zeros((1, 2, 4, 8, 8), np.float32))
    LevelDataset(**good)
    with pytest.raises(DataError):
        LevelDataset(**{**good, "targets": np.zeros((2, 2, 4, 8, 8), np.float32)})
    with pytest.raises(DataError):
        LevelDataset(**{**good, "anchors": []})
    with pytest.raises(DataError):
        LevelDataset(**{**good, "prefix_levels": 0})


def test_train_correction_level_leaves_prefix_frozen():
    _, stats, train_w, val_w = tiny_corpus()
    cfg = quick_cfg(max_epochs=1)
    level0 = train_level0(TINY_SPEC, train_w, val_w, stats, cfg)
    before = level0.content_hash()
    stack = StackedModel([level0])
    train_ds = build_level_dataset(stack, train_w, stats)
    val_ds = build_level_dataset(stack, val_w, stats)
    level1 = train_correction_level(1, train_ds, val_ds, TINY_SPEC, cfg,
                                    stats.content_hash())
    assert level0.content_hash() == before
    assert level1.level == 1
    assert level1.spec == TINY_SPEC.correction_spec()
    # the two checkpoints assemble into a consistent stack
    stacked = StackedModel([level0, level1])
    assert stacked.levels == 1


def test_train_correction_level_rejects_prefix_mismatch():
    _, stats, train_w, val_w = tiny_corpus()
    cfg = quick_cfg(max_epochs=1)
    level0 = train_level0(TINY_SPEC, train_w, val_w, stats, cfg)
    stack = StackedModel([level0])
    train_ds = build_level_dataset(stack, train_w, stats)
    val_ds = build_level_dataset(stack, val_w, stats)
    with pytest.raises(TrainingError, match="2"):
        train_correction_level(2, train_ds, val_ds, TINY_SPEC, cfg,
                               stats.content_hash())
    with pytest.raises(TrainingError, match="start at 1"):
        train_correction_level(0, train_ds, val_ds, TINY_SPEC, cfg,
                               stats.content_hash())


def test_save_load_stack_round_trip(tmp_path):
    corr = TINY_SPEC.correction_spec()
    stack = StackedModel([
        random_checkpoint(TINY_SPEC),
        random_checkpoint(corr, level=1, seed=1),
    ])
    out = save_stack(stack, tmp_path / "stack")
    loaded = load_stack(out)
    assert loaded.levels == stack.levels
    for a, b in zip(stack.checkpoints, loaded.checkpoints):
        assert a.content_hash() == b.content_hash()
    x = torch.rand(1, 2, 7, 8, 8)
    assert torch.equal(stack_refine(stack, x), stack_refine(loaded, x))


def test_load_stack_detects_swapped_weights(tmp_path):
    corr = TINY_SPEC.correction_spec()
    stack = StackedModel([
        random_checkpoint(TINY_SPEC),
        random_checkpoint(corr, level=1, seed=1),
    ])
    out = save_stack(stack, tmp_path / "stack")
    # overwrite level 1 with different weights of the same architecture
    from porestack.models import save_checkpoint
    impostor = random_checkpoint(corr, level=1, seed=9)
    save_checkpoint(impostor, out / "level_01.pt")
    with pytest.raises(TrainingError, match="differ"):
        load_stack(out)


def test_load_stack_requires_manifest(tmp_path):
    with pytest.raises(TrainingError, match="stack.json"):
        load_stack(tmp_path)
    (tmp_path / "stack.json").write_text('{"format": "something-else"}\n')
    with pytest.raises(TrainingError, match="manifest"):
        load_stack(tmp_path)
