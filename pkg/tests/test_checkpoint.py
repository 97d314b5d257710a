"""Checkpoint archive format: naming scheme, roundtrip, determinism."""

import zipfile

import pytest
import torch

from fthnet import config
from fthnet.checkpoint import (canonical_name, load_checkpoint, load_model,
                               save_checkpoint, torch_name)
from fthnet.model import build_model


class TestNaming:
    @pytest.mark.parametrize("torch_n,canon", [
        ("backbone.stages.0.blocks.1.attn.q_w", "stage0.block1.attn.q_w"),
        ("backbone.stages.2.downsample.weight", "stage2.downsample.weight"),
        ("backbone.patch_embed.weight", "patch_embed.weight"),
        ("dpn.blocks.3.proj.bias", "dpb3.proj.bias"),
        ("hypernet.merges.0.weight", "hypernet.merges.0.weight"),
    ])
    def test_translation_roundtrip(self, torch_n, canon):
        assert canonical_name(torch_n) == canon
        assert torch_name(canon) == torch_n

    def test_every_parameter_roundtrips(self, tiny_model):
        for name in tiny_model.state_dict():
            assert torch_name(canonical_name(name)) == name

    def test_scheme_present_in_archive(self, tmp_path, tiny_model):
        path = tmp_path / "m.fthnet"
        save_checkpoint(path, tiny_model)
        with zipfile.ZipFile(path) as zf:
            names = zf.namelist()
        assert "config.json" in names
        assert any(n.startswith("tensors/stage0.block0.") for n in names)
        assert any(n.startswith("tensors/patch_embed.") for n in names)


class TestRoundtrip:
    def test_weights_and_config_preserved(self, tmp_path, tiny_model, tiny_cfg):
        path = tmp_path / "m.fthnet"
        save_checkpoint(path, tiny_model)
        cfg, state = load_checkpoint(path)
        assert cfg == tiny_cfg
        original = tiny_model.state_dict()
        assert set(state) == set(original)
        for k in original:
            assert torch.equal(state[k], original[k]), k

    def test_loaded_model_same_scores(self, tmp_path, tiny_model, rng):
        path = tmp_path / "m.fthnet"
        save_checkpoint(path, tiny_model)
        again = load_model(path)
        x = torch.tensor(rng.random((2, 64, 64, 3)), dtype=torch.float32)
        assert torch.equal(tiny_model(x), again(x))

    def test_archive_bytes_deterministic(self, tmp_path, tiny_model):
        a, b = tmp_path / "a.fthnet", tmp_path / "b.fthnet"
        save_checkpoint(a, tiny_model)
        save_checkpoint(b, tiny_model)
        assert a.read_bytes() == b.read_bytes()

    def test_tensors_little_endian_f32(self, tmp_path, tiny_model):
        import json
        import numpy as np

        path = tmp_path / "m.fthnet"
        save_checkpoint(path, tiny_model)
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("tensors.json"))
            entry = manifest[0]
            raw = zf.read(f"tensors/{entry['name']}.f32")
        arr = np.frombuffer(raw, dtype="<f4")
        assert arr.size == int(np.prod(entry["shape"]))
