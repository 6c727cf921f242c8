"""Checkpoint container.

A checkpoint is a zip archive with two members:

    manifest.json   kind, frozen flag, run config, training state and one entry
                    {name, shape, dtype, byte_offset, byte_length} per tensor
    tensors.bin     all tensors back to back, little-endian, C order

The run config in the manifest rebuilds the module a checkpoint belongs to, and the
manifest shapes are checked against that module before anything is copied.
"""

import io
import json
import logging
import math
import os
import zipfile
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import torch
from torch import nn

from stylemotion.config import RunConfig, from_dict
from stylemotion.core import ZIP_EPOCH, FaceSplit
from stylemotion.discriminators import StyleDiscriminator, SyncDiscriminator, freeze
from stylemotion.errors import CheckpointError, ConfigError
from stylemotion.model import MotionGenerator

logger = logging.getLogger("stylemotion")

FORMAT_NAME = "stylemotion-checkpoint"
FORMAT_VERSION = 1
MANIFEST_MEMBER = "manifest.json"
TENSORS_MEMBER = "tensors.bin"

KINDS = ("generator", "sync", "style")

_DTYPES = {
    torch.float16: "float16",
    torch.float32: "float32",
    torch.float64: "float64",
    torch.int32: "int32",
    torch.int64: "int64",
    torch.bool: "bool",
}


@dataclass(frozen=True)
class Checkpoint:
    kind: str
    tensors: dict[str, torch.Tensor]
    config: dict | None = None
    frozen: bool = False
    state: dict[str, Any] = field(default_factory=dict)

    def run_config(self) -> RunConfig:
        if self.config is None:
            raise CheckpointError("Checkpoint carries no run config.")
        try:
            return from_dict(self.config)
        except ConfigError as exc:
            message = f"Checkpoint config is invalid: {exc}"
            raise CheckpointError(message) from exc


def save_checkpoint(
    path: str | os.PathLike,
    tensors: Mapping[str, torch.Tensor],
    kind: str,
    config: RunConfig | None = None,
    frozen: bool = False,
    state: Mapping[str, Any] | None = None,
) -> None:
    if kind not in KINDS:
        message = f"Unknown checkpoint kind '{kind}', expected one of {KINDS}."
        raise CheckpointError(message)
    blob = io.BytesIO()
    entries = []
    for name, tensor in tensors.items():
        if tensor.dtype not in _DTYPES:
            message = f"Tensor '{name}' has unsupported dtype {tensor.dtype}."
            raise CheckpointError(message, tensor=name)
        array = tensor.detach().cpu().contiguous().numpy()
        data = array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(array.shape),
                "dtype": _DTYPES[tensor.dtype],
                "byte_offset": blob.tell(),
                "byte_length": len(data),
            }
        )
        blob.write(data)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": kind,
        "frozen": frozen,
        "config": config.to_dict() if config is not None else None,
        "state": dict(state or {}),
        "tensors": entries,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for member, payload in (
            (MANIFEST_MEMBER, json.dumps(manifest, indent=2).encode("utf-8")),
            (TENSORS_MEMBER, blob.getvalue()),
        ):
            archive.writestr(zipfile.ZipInfo(member, date_time=ZIP_EPOCH), payload)
    logger.debug("Saved %s checkpoint with %s tensors to %s.", kind, len(entries), path)


def _read_tensor(entry: Any, blob: bytes) -> tuple[str, torch.Tensor]:  # noqa: ANN401
    try:
        name = str(entry["name"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError("Manifest entry without a tensor name.") from exc
    try:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        shape = tuple(int(n) for n in entry["shape"])
        offset = int(entry["byte_offset"])
        length = int(entry.get("byte_length", math.prod(shape) * dtype.itemsize))
    except (KeyError, TypeError, ValueError) as exc:
        message = f"Manifest entry for tensor '{name}' is malformed: {exc!r}"
        raise CheckpointError(message, tensor=name) from exc
    if entry["dtype"] not in _DTYPES.values():
        message = f"Tensor '{name}' has unsupported dtype {entry['dtype']}."
        raise CheckpointError(message, tensor=name)
    if math.prod(shape) * dtype.itemsize != length:
        message = f"Tensor '{name}': shape {shape} does not match {length} bytes."
        raise CheckpointError(message, tensor=name)
    if offset < 0 or offset + length > len(blob):
        message = f"Tensor '{name}' lies outside the tensor blob."
        raise CheckpointError(message, tensor=name)
    array = np.frombuffer(blob, dtype=dtype, count=math.prod(shape), offset=offset)
    return name, torch.from_numpy(array.astype(dtype.newbyteorder("="))).reshape(shape)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    """Read a checkpoint written by `save_checkpoint`.

    Raises:
        CheckpointError: If the archive or its manifest is malformed.
    """
    try:
        with zipfile.ZipFile(path) as archive:
            manifest = json.loads(archive.read(MANIFEST_MEMBER))
            blob = archive.read(TENSORS_MEMBER)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        message = f"{path} is not a readable checkpoint: {exc}"
        raise CheckpointError(message) from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT_NAME:
        message = f"{path} is not a {FORMAT_NAME} archive."
        raise CheckpointError(message)
    if manifest.get("version") != FORMAT_VERSION:
        message = f"{path}: unsupported checkpoint version {manifest.get('version')}."
        raise CheckpointError(message)

    tensors = {}
    for entry in manifest.get("tensors", []):
        name, tensor = _read_tensor(entry, blob)
        if name in tensors:
            message = f"Tensor '{name}' appears twice in the manifest."
            raise CheckpointError(message, tensor=name)
        tensors[name] = tensor
    logger.debug("Loaded %s tensors from %s.", len(tensors), path)
    return Checkpoint(
        kind=str(manifest.get("kind")),
        tensors=tensors,
        config=manifest.get("config"),
        frozen=bool(manifest.get("frozen", False)),
        state=dict(manifest.get("state") or {}),
    )


def restore(module: nn.Module, checkpoint: Checkpoint) -> nn.Module:
    """Copy the checkpoint tensors into `module` after checking names and shapes.

    Raises:
        CheckpointError: Naming the first missing, unexpected or misshapen tensor.
    """
    expected = module.state_dict()
    for name, tensor in expected.items():
        if name not in checkpoint.tensors:
            message = f"Checkpoint is missing tensor '{name}'."
            raise CheckpointError(message, tensor=name)
        stored = checkpoint.tensors[name]
        if stored.shape != tensor.shape:
            message = (
                f"Tensor '{name}' has shape {tuple(stored.shape)} in the checkpoint, "
                f"the model expects {tuple(tensor.shape)}."
            )
            raise CheckpointError(message, tensor=name)
    for name in checkpoint.tensors:
        if name not in expected:
            message = f"Checkpoint holds unexpected tensor '{name}'."
            raise CheckpointError(message, tensor=name)
    module.load_state_dict(checkpoint.tensors)
    return module


def _expect_kind(checkpoint: Checkpoint, kind: str) -> None:
    if checkpoint.kind != kind:
        message = f"Expected a {kind} checkpoint, got a {checkpoint.kind} checkpoint."
        raise CheckpointError(message)


def save_generator(
    path: str | os.PathLike,
    generator: MotionGenerator,
    config: RunConfig,
    state: Mapping[str, Any] | None = None,
) -> None:
    state = {"lower_indices": list(generator.split.lower_indices), **(state or {})}
    save_checkpoint(path, generator.state_dict(), "generator", config, state=state)


def load_generator(path: str | os.PathLike) -> tuple[MotionGenerator, RunConfig]:
    checkpoint = load_checkpoint(path)
    _expect_kind(checkpoint, "generator")
    config = checkpoint.run_config()
    lower = checkpoint.state.get("lower_indices", config.data.lower_indices)
    generator = MotionGenerator(config.model, FaceSplit(tuple(lower)))
    dtype = getattr(torch, config.train.precision)
    return restore(generator.to(dtype), checkpoint).eval(), config


def save_discriminator(
    path: str | os.PathLike,
    discriminator: SyncDiscriminator | StyleDiscriminator,
    config: RunConfig,
    metric: float,
) -> None:
    """Save a pretrained critic with the frozen flag set."""
    if isinstance(discriminator, StyleDiscriminator):
        kind, state = "style", {"num_styles": discriminator.num_styles}
    else:
        kind, state = "sync", {}
    state["metric"] = metric
    save_checkpoint(
        path, discriminator.state_dict(), kind, config, frozen=True, state=state
    )


def load_sync_disc(path: str | os.PathLike) -> SyncDiscriminator:
    checkpoint = load_checkpoint(path)
    _expect_kind(checkpoint, "sync")
    config = checkpoint.run_config()
    discriminator = SyncDiscriminator(
        config.model.vocab_size,
        config.model.window,
        width=config.discriminator.width,
        embed_dim=config.discriminator.embed_dim,
    )
    tensors = checkpoint.tensors
    discriminator.to(next(iter(tensors.values())).dtype if tensors else torch.float32)
    return freeze(restore(discriminator, checkpoint))


def load_style_disc(path: str | os.PathLike) -> StyleDiscriminator:
    checkpoint = load_checkpoint(path)
    _expect_kind(checkpoint, "style")
    config = checkpoint.run_config()
    try:
        num_styles = int(checkpoint.state["num_styles"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError("Style checkpoint does not record num_styles.") from exc
    discriminator = StyleDiscriminator(
        num_styles, config.train.clip_length, width=config.discriminator.width
    )
    discriminator.to(getattr(torch, config.train.precision))
    return freeze(restore(discriminator, checkpoint))
