"""Weight checkpoint archives.

A checkpoint is a zip file holding ``config.json``, a ``tensors.json``
manifest (canonical name -> shape, in order), and one raw little-endian
float32 blob per parameter under ``tensors/``. Backbone parameters use
the ``stage{i}.block{j}.{component}`` naming scheme. Archive bytes are
deterministic: fixed entry order and timestamps.
"""

from __future__ import annotations

import io
import json
import re
import zipfile
from pathlib import Path

import numpy as np
import torch

from .config import FthnetConfig
from .model import FTHNet

FORMAT = "fthnet-checkpoint-v1"
_EPOCH = (1980, 1, 1, 0, 0, 0)

_TO_CANONICAL = [
    (re.compile(r"^backbone\.patch_embed\.(.+)$"), r"patch_embed.\1"),
    (re.compile(r"^backbone\.stages\.(\d+)\.blocks\.(\d+)\.(.+)$"), r"stage\1.block\2.\3"),
    (re.compile(r"^backbone\.stages\.(\d+)\.downsample\.(.+)$"), r"stage\1.downsample.\2"),
    (re.compile(r"^dpn\.blocks\.(\d+)\.(.+)$"), r"dpb\1.\2"),
]
_FROM_CANONICAL = [
    (re.compile(r"^patch_embed\.(.+)$"), r"backbone.patch_embed.\1"),
    (re.compile(r"^stage(\d+)\.block(\d+)\.(.+)$"), r"backbone.stages.\1.blocks.\2.\3"),
    (re.compile(r"^stage(\d+)\.downsample\.(.+)$"), r"backbone.stages.\1.downsample.\2"),
    (re.compile(r"^dpb(\d+)\.(.+)$"), r"dpn.blocks.\1.\2"),
]


class CheckpointError(ValueError):
    pass


def canonical_name(torch_name: str) -> str:
    for pattern, repl in _TO_CANONICAL:
        if pattern.match(torch_name):
            return pattern.sub(repl, torch_name)
    return torch_name


def torch_name(canonical: str) -> str:
    for pattern, repl in _FROM_CANONICAL:
        if pattern.match(canonical):
            return pattern.sub(repl, canonical)
    return canonical


def save_checkpoint(path: str | Path, model: FTHNet) -> None:
    state = model.state_dict()
    entries = sorted((canonical_name(k), v) for k, v in state.items())
    manifest = [{"name": name, "shape": list(t.shape)} for name, t in entries]
    payload = {"format": FORMAT, "config": model.config.to_dict()}
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        def add(name: str, data: bytes):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, data)

        add("config.json", json.dumps(payload, indent=2, sort_keys=True).encode())
        add("tensors.json", json.dumps(manifest, indent=2).encode())
        for name, tensor in entries:
            arr = tensor.detach().cpu().numpy().astype("<f4")
            add(f"tensors/{name}.f32", arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[FthnetConfig, dict[str, torch.Tensor]]:
    path = Path(path)
    with zipfile.ZipFile(path, "r") as zf:
        payload = json.loads(zf.read("config.json"))
        if payload.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unknown checkpoint format {payload.get('format')!r}")
        cfg = FthnetConfig.from_dict(payload["config"])
        manifest = json.loads(zf.read("tensors.json"))
        state: dict[str, torch.Tensor] = {}
        for entry in manifest:
            raw = zf.read(f"tensors/{entry['name']}.f32")
            arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
            state[torch_name(entry["name"])] = torch.from_numpy(arr)
    return cfg, state


def load_model(path: str | Path) -> FTHNet:
    cfg, state = load_checkpoint(path)
    model = FTHNet(cfg)
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise CheckpointError(f"{path}: state mismatch, missing={missing}, unexpected={unexpected}")
    model.eval()
    return model
