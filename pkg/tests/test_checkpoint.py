"""Checkpoint archive format: exact tensor roundtrips, optimizer state,
architecture guards, and RNG restoration."""

import dataclasses
import json

import numpy as np
import pytest
import torch

from pptformer.checkpoint import (
    FORMAT_VERSION,
    check_architecture,
    configs_from_manifest,
    load_checkpoint,
    load_manifest,
    save_checkpoint,
)
from pptformer.config import ModelConfig, TrainConfig
from pptformer.errors import InvalidArgumentError
from pptformer.training import build_variant_model

MICRO = ModelConfig(base_channels=4, levels=2, blocks_per_level=(1, 1),
                    heads_per_level=(1, 2), refinement_blocks=0)
TRAIN = TrainConfig(total_steps=4, patch_size=8, batch_size=1, seed=0)


def _stepped_model_and_optimizer(seed=0, steps=2):
    model = build_variant_model(MICRO, "full", seed=seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=1e-3)
    torch.manual_seed(seed + 1)
    for _ in range(steps):
        x = torch.rand(1, 3, 8, 8)
        m = torch.rand(1, 3, 8, 8)
        pyramid = model.ppfgnet(m)
        loss = model.irnet(x, pyramid, clamp=False).square().mean()
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return model, optimizer


class TestRoundtrip:
    def test_parameters_restore_bitwise(self, tmp_path):
        model, opt = _stepped_model_and_optimizer()
        prefix = str(tmp_path / "ckpt")
        save_checkpoint(prefix, model, opt, model_config=MICRO, train_config=TRAIN, step=2)

        other = build_variant_model(MICRO, "full", seed=77)
        load_checkpoint(prefix, other)
        for (ka, va), (kb, vb) in zip(model.state_dict().items(), other.state_dict().items()):
            assert ka == kb
            assert torch.equal(va, vb), ka

    def test_optimizer_moments_restore_bitwise(self, tmp_path):
        model, opt = _stepped_model_and_optimizer()
        prefix = str(tmp_path / "ckpt")
        save_checkpoint(prefix, model, opt, model_config=MICRO, train_config=TRAIN, step=2)

        other = build_variant_model(MICRO, "full", seed=77)
        other_opt = torch.optim.AdamW(other.parameters(), lr=1e-3)
        load_checkpoint(prefix, other, other_opt)

        for (pa, pb) in zip(model.parameters(), other.parameters()):
            sa, sb = opt.state[pa], other_opt.state[pb]
            assert torch.equal(sa["exp_avg"], sb["exp_avg"])
            assert torch.equal(sa["exp_avg_sq"], sb["exp_avg_sq"])
            assert float(sa["step"]) == float(sb["step"]) == 2.0

    def test_data_rng_continues_identically(self, tmp_path):
        model, opt = _stepped_model_and_optimizer()
        rng = np.random.default_rng(123)
        rng.integers(0, 1000, size=7)  # advance to a nontrivial state
        prefix = str(tmp_path / "ckpt")
        save_checkpoint(prefix, model, opt, model_config=MICRO, train_config=TRAIN,
                        step=2, data_rng=rng)
        expected = rng.integers(0, 1000, size=5)

        fresh = np.random.default_rng(0)
        load_checkpoint(prefix, model, data_rng=fresh)
        assert np.array_equal(fresh.integers(0, 1000, size=5), expected)

    def test_torch_rng_roundtrip(self, tmp_path):
        model, _ = _stepped_model_and_optimizer()
        gen = torch.Generator().manual_seed(42)
        torch.rand(3, generator=gen)
        prefix = str(tmp_path / "ckpt")
        save_checkpoint(prefix, model, model_config=MICRO, train_config=TRAIN,
                        step=0, torch_rng=gen)
        expected = torch.rand(4, generator=gen)
        fresh = torch.Generator().manual_seed(7)
        load_checkpoint(prefix, model, torch_rng=fresh)
        assert torch.equal(torch.rand(4, generator=fresh), expected)


class TestManifest:
    def test_sidecar_contents(self, tmp_path):
        model, _ = _stepped_model_and_optimizer()
        prefix = str(tmp_path / "ckpt")
        save_checkpoint(prefix, model, model_config=MICRO, train_config=TRAIN,
                        step=3, variant="no_inter")
        manifest = load_manifest(prefix)
        assert manifest["format_version"] == FORMAT_VERSION == 1
        assert manifest["step"] == 3
        assert manifest["variant"] == "no_inter"
        mc, tc = configs_from_manifest(manifest)
        assert mc == MICRO
        assert tc == TRAIN

    def test_unsupported_version_rejected(self, tmp_path):
        model, _ = _stepped_model_and_optimizer()
        prefix = str(tmp_path / "ckpt")
        save_checkpoint(prefix, model, model_config=MICRO, train_config=TRAIN, step=0)
        path = prefix + ".json"
        doc = json.loads(open(path).read())
        doc["format_version"] = 99
        open(path, "w").write(json.dumps(doc))
        with pytest.raises(InvalidArgumentError):
            load_manifest(prefix)

    def test_missing_files_raise_not_found(self, tmp_path):
        model, _ = _stepped_model_and_optimizer()
        with pytest.raises(FileNotFoundError):
            load_checkpoint(str(tmp_path / "ghost"), model)
        with pytest.raises(FileNotFoundError):
            load_manifest(str(tmp_path / "ghost"))


class TestArchitectureGuard:
    def test_mismatch_names_the_field(self, tmp_path):
        model, _ = _stepped_model_and_optimizer()
        prefix = str(tmp_path / "ckpt")
        save_checkpoint(prefix, model, model_config=MICRO, train_config=TRAIN, step=0)
        wider = dataclasses.replace(MICRO, base_channels=8)
        other = build_variant_model(wider, "full", seed=0)
        with pytest.raises(InvalidArgumentError, match="base_channels"):
            load_checkpoint(prefix, other)

    def test_check_passes_on_equal_config(self):
        manifest = {"model_config": MICRO.to_dict()}
        check_architecture(manifest, MICRO)

    def test_variant_shape_mismatch_is_caught_without_strict_arch(self, tmp_path):
        model, _ = _stepped_model_and_optimizer()
        prefix = str(tmp_path / "ckpt")
        save_checkpoint(prefix, model, model_config=MICRO, train_config=TRAIN, step=0)
        bare = build_variant_model(MICRO, "no_parser", seed=0)
        with pytest.raises(InvalidArgumentError):
            load_checkpoint(prefix, bare, strict_arch=False)


class TestArchiveLayout:
    def test_key_paths_are_stable(self, tmp_path):
        model, opt = _stepped_model_and_optimizer()
        rng = np.random.default_rng(0)
        gen = torch.Generator()
        prefix = str(tmp_path / "ckpt")
        save_checkpoint(prefix, model, opt, model_config=MICRO, train_config=TRAIN,
                        step=2, torch_rng=gen, data_rng=rng)
        with np.load(prefix + ".npz") as archive:
            keys = set(archive.files)
        names = [n for n, _ in model.named_parameters()]
        for name in names:
            assert f"param/{name}" in keys
            assert f"opt/exp_avg/{name}" in keys
            assert f"opt/exp_avg_sq/{name}" in keys
            assert f"opt/step/{name}" in keys
        assert "rng/torch" in keys
        prefixes = {k.split("/")[0] for k in keys}
        assert prefixes == {"param", "opt", "rng"}
