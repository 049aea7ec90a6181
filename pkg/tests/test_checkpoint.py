"""Checkpoint container: byte stability, f32 drift bound, error taxonomy."""

import json

import numpy as np
import pytest

from overlapreg.checkpoint import (
    CheckpointError,
    checkpoint_from_training,
    load_checkpoint,
    restore_store,
    save_checkpoint,
)
from overlapreg.losses import LossConfig
from overlapreg.network import ModelConfig, build_pyramid, forward_pair, init_params
from overlapreg.synth import GenConfig, make_pair, sample_shape
from overlapreg.training import OptimConfig, TrainState, fit

MODEL = ModelConfig(
    voxel=0.22, levels=3, widths=(6, 8, 8), final_dim=5, k_graph=4, heads=4, temperature=0.05
)


def trained_checkpoint(seed=0, epochs=1):
    store = init_params(MODEL, seed=seed)
    sample = make_pair(
        GenConfig(kind="blob", n_full=160, p_v=0.7, n_keep=100, jitter_sigma=0.005, seed=9)
    )
    state, _ = fit([sample], store, MODEL, LossConfig(n_anchors=32), OptimConfig(lr=0.002), epochs)
    return checkpoint_from_training(store, MODEL, OptimConfig(lr=0.002), state), store


def test_save_load_save_byte_identical(tmp_path):
    ckpt, _ = trained_checkpoint()
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    save_checkpoint(ckpt, str(a))
    save_checkpoint(load_checkpoint(str(a)), str(b))
    assert a.read_bytes() == b.read_bytes()


def test_reload_preserves_state_and_quantizes_parameters(tmp_path):
    ckpt, store = trained_checkpoint(epochs=2)
    path = str(tmp_path / "c.ckpt")
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert back.epoch == 2
    assert back.model == MODEL
    assert back.optim.lr == 0.002
    assert back.seeds == {"init": 0, "shuffle": 0}
    restored, state = restore_store(back)
    assert state.epoch == 2
    for name, tensor in store.params.items():
        got = restored.params[name].data
        np.testing.assert_array_equal(got, tensor.data.astype(np.float32).astype(np.float64))
    for name, v in store.velocity.items():
        np.testing.assert_array_equal(
            restored.velocity[name], v.astype(np.float32).astype(np.float64)
        )


def test_forward_drift_after_reload_below_1e6(tmp_path):
    ckpt, store = trained_checkpoint()
    path = str(tmp_path / "d.ckpt")
    save_checkpoint(ckpt, path)
    restored, _ = restore_store(load_checkpoint(path))
    p = build_pyramid(sample_shape("blob", 70, seed=3), MODEL)
    q = build_pyramid(sample_shape("blob", 65, seed=4), MODEL)
    before = forward_pair(p, q, store, MODEL)
    after = forward_pair(p, q, restored, MODEL)
    assert np.abs(before.out_p.descriptors.data - after.out_p.descriptors.data).max() < 1e-6
    assert np.abs(before.out_q.overlap.data - after.out_q.overlap.data).max() < 1e-6


def _rewrite_manifest(path, mutate):
    with open(path, "rb") as fh:
        header = fh.readline()
        blob = fh.read()
    manifest = json.loads(header)
    mutate(manifest)
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest).encode() + b"\n")
        fh.write(blob)


def test_version_mismatch_error(tmp_path):
    ckpt, _ = trained_checkpoint()
    path = str(tmp_path / "v.ckpt")
    save_checkpoint(ckpt, path)
    _rewrite_manifest(path, lambda m: m.update(format_version=99))
    with pytest.raises(CheckpointError, match="unsupported checkpoint version"):
        load_checkpoint(path)


def test_truncated_blob_error(tmp_path):
    ckpt, _ = trained_checkpoint()
    path = tmp_path / "t.ckpt"
    save_checkpoint(ckpt, str(path))
    raw = path.read_bytes()
    path.write_bytes(raw[:-40])
    with pytest.raises(CheckpointError, match="truncated blob"):
        load_checkpoint(str(path))


def test_shape_mismatch_error(tmp_path):
    ckpt, _ = trained_checkpoint()
    path = str(tmp_path / "s.ckpt")
    save_checkpoint(ckpt, path)

    def corrupt(manifest):
        manifest["tensors"][0]["shape"] = [1, 1]

    _rewrite_manifest(path, corrupt)
    with pytest.raises(CheckpointError, match="shape mismatch"):
        load_checkpoint(path)


def test_restore_into_different_architecture_fails(tmp_path):
    ckpt, _ = trained_checkpoint()
    path = str(tmp_path / "arch.ckpt")
    save_checkpoint(ckpt, path)

    def widen(manifest):
        manifest["model"]["widths"] = [8, 8, 8]

    _rewrite_manifest(path, widen)
    with pytest.raises(CheckpointError, match="shape mismatch"):
        restore_store(load_checkpoint(path))


def test_garbage_header_error(tmp_path):
    path = tmp_path / "g.ckpt"
    path.write_bytes(b"\x00\x01\x02 not json\n1234")
    with pytest.raises(CheckpointError, match="manifest"):
        load_checkpoint(str(path))
