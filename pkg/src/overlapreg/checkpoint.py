"""Checkpoint container: one JSON manifest line followed by an f32 blob.

The manifest carries the architecture config, training state, seeds, and a
tensor directory (name/shape/offset/length in bytes). Parameters and
optimizer momenta are stored as little-endian float32, so a reload changes
forward outputs by at most f32 quantization (bounded below 1e-6 in tests).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .network import ModelConfig, init_params
from .training import OptimConfig, TrainState

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass(frozen=True)
class Checkpoint:
    """Everything needed to resume training or run inference."""

    model: ModelConfig
    optim: OptimConfig
    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]
    epoch: int
    matchability_on: bool
    seeds: dict[str, int]
    format_version: int = CHECKPOINT_VERSION

    @property
    def lr(self) -> float:
        return self.optim.lr_at(self.epoch)


def checkpoint_from_training(
    store: ad.ParamStore,
    model: ModelConfig,
    optim: OptimConfig,
    state: TrainState,
) -> Checkpoint:
    return Checkpoint(
        model=model,
        optim=optim,
        params=store.state_dict(),
        velocity={k: v.copy() for k, v in store.velocity.items()},
        epoch=state.epoch,
        matchability_on=state.matchability_on,
        seeds={"init": store.seed, "shuffle": optim.shuffle_seed},
    )


def restore_store(ckpt: Checkpoint) -> tuple[ad.ParamStore, TrainState]:
    """Rebuild a ParamStore (f64) and TrainState from checkpoint contents."""
    store = init_params(ckpt.model, seed=ckpt.seeds.get("init", 0))
    try:
        store.load_state_dict({k: v.astype(np.float64) for k, v in ckpt.params.items()})
    except ValueError as exc:
        raise CheckpointError(f"shape mismatch restoring parameters: {exc}") from exc
    for name, v in ckpt.velocity.items():
        if name not in store.params:
            raise CheckpointError(f"shape mismatch restoring parameters: unknown momentum {name!r}")
        if v.shape != store.params[name].data.shape:
            raise CheckpointError(f"shape mismatch restoring parameters: momentum {name!r}")
        store.velocity[name] = v.astype(np.float64)
    return store, TrainState(epoch=ckpt.epoch, matchability_on=ckpt.matchability_on)


def _directory(
    tensors: dict[str, np.ndarray], kind: str, offset: int
) -> tuple[list[dict], list[np.ndarray], int]:
    entries = []
    blobs = []
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        length = data.size * 4
        entries.append(
            {
                "kind": kind,
                "name": name,
                "shape": list(arr.shape),
                "offset": offset,
                "length": length,
            }
        )
        blobs.append(data)
        offset += length
    return entries, blobs, offset


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    entries_p, blobs_p, offset = _directory(ckpt.params, "param", 0)
    entries_v, blobs_v, offset = _directory(ckpt.velocity, "velocity", offset)
    manifest = {
        "format_version": ckpt.format_version,
        "model": asdict(ckpt.model),
        "optim": asdict(ckpt.optim),
        "train_state": {
            "epoch": ckpt.epoch,
            "matchability_on": ckpt.matchability_on,
            "lr": ckpt.lr,
        },
        "seeds": ckpt.seeds,
        "tensors": entries_p + entries_v,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs_p + blobs_v:
            fh.write(blob.tobytes())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        header = fh.readline()
        blob = fh.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})"
        )
    try:
        model = ModelConfig(
            **{**manifest["model"], "widths": tuple(manifest["model"]["widths"])}
        )
        optim = OptimConfig(**manifest["optim"])
        train_state = manifest["train_state"]
        seeds = {k: int(v) for k, v in manifest["seeds"].items()}
        directory = manifest["tensors"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"incomplete checkpoint manifest: {exc}") from exc

    params: dict[str, np.ndarray] = {}
    velocity: dict[str, np.ndarray] = {}
    for entry in directory:
        shape = tuple(entry["shape"])
        offset, length = entry["offset"], entry["length"]
        if int(np.prod(shape)) * 4 != length:
            raise CheckpointError(
                f"shape mismatch for tensor {entry['name']!r}: shape {shape} vs {length} bytes"
            )
        if offset + length > len(blob):
            raise CheckpointError(
                f"truncated blob: tensor {entry['name']!r} needs bytes up to "
                f"{offset + length}, blob has {len(blob)}"
            )
        arr = np.frombuffer(blob[offset : offset + length], dtype="<f4").reshape(shape)
        target = params if entry["kind"] == "param" else velocity
        target[entry["name"]] = arr.copy()
    return Checkpoint(
        model=model,
        optim=optim,
        params=params,
        velocity=velocity,
        epoch=int(train_state["epoch"]),
        matchability_on=bool(train_state["matchability_on"]),
        seeds=seeds,
        format_version=version,
    )
