"""End-to-end command-line behavior, run in-process for stable coverage of
exit codes and artifacts."""

import csv
from pathlib import Path

import numpy as np
import torch

from pptformer.checkpoint import save_checkpoint
from pptformer.cli import EXIT_INVALID, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main
from pptformer.config import ModelConfig, TrainConfig
from pptformer.imgio import load_image
from pptformer.training import build_variant_model

MICRO_MODEL = [
    "--override", "model.base_channels=4",
    "--override", "model.levels=2",
    "--override", "model.blocks_per_level=[1, 1]",
    "--override", "model.heads_per_level=[1, 2]",
    "--override", "model.refinement_blocks=0",
]
MICRO_TRAIN = [
    "--override", "train.total_steps=2",
    "--override", "train.patch_size=8",
    "--override", "train.batch_size=1",
    "--override", "train.checkpoint_every=0",
    "--override", "train.log_every=1",
]

MICRO_CONFIG = ModelConfig(base_channels=4, levels=2, blocks_per_level=(1, 1),
                           heads_per_level=(1, 2), refinement_blocks=0)


def _synth(out, n=4, size=24, seed=5, degradation="low_light", split="train"):
    code = main(["synth", "--out", str(out), "--n-images", str(n), "--size", str(size),
                 "--seed", str(seed), "--degradation", degradation, "--split", split])
    assert code == EXIT_OK
    return Path(out) / "manifest.csv"


def _zero_reconstruction_checkpoint(prefix):
    """A checkpoint whose model is the identity map on any input."""
    model = build_variant_model(MICRO_CONFIG, "full", seed=0)
    with torch.no_grad():
        model.irnet.reconstruct.weight.zero_()
    save_checkpoint(str(prefix), model, model_config=MICRO_CONFIG,
                    train_config=TrainConfig(total_steps=2, patch_size=8, batch_size=1),
                    step=0, variant="full")
    return str(prefix)


class TestSynth:
    def test_writes_triples_and_manifest(self, tmp_path):
        manifest = _synth(tmp_path / "d", n=4)
        for sub in ("clean", "degraded", "parser"):
            files = sorted((tmp_path / "d" / sub).glob("*.png"))
            assert len(files) == 4
        rows = list(csv.reader(manifest.open()))
        assert rows[0] == ["degraded", "clean", "parser"]
        assert len(rows) == 5

    def test_same_seed_reproduces_identical_trees(self, tmp_path):
        _synth(tmp_path / "a", n=3)
        _synth(tmp_path / "b", n=3)
        for rel in sorted(p.relative_to(tmp_path / "a")
                          for p in (tmp_path / "a").rglob("*") if p.is_file()):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_low_light_output_is_darker(self, tmp_path):
        _synth(tmp_path / "d", n=2, degradation="low_light")
        for i in range(2):
            clean = load_image(tmp_path / "d" / "clean" / f"{i:04d}.png")
            degraded = load_image(tmp_path / "d" / "degraded" / f"{i:04d}.png")
            assert degraded.mean() < clean.mean()


class TestParse:
    def _manifest_without_parsers(self, tmp_path):
        _synth(tmp_path / "d", n=3)
        path = tmp_path / "d" / "manifest.csv"
        rows = list(csv.reader(path.open()))
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(rows[0])
            for row in rows[1:]:
                writer.writerow([row[0], row[1], ""])
        return path

    def test_populates_cache_and_never_rewrites(self, tmp_path, capsys):
        manifest = self._manifest_without_parsers(tmp_path)
        assert main(["parse", "--manifest", str(manifest)]) == EXIT_OK
        assert "3 written" in capsys.readouterr().out
        cache = tmp_path / "d" / "parser_cache" / "train"
        files = sorted(cache.glob("*.png"))
        assert len(files) == 3
        stamps = {f.name: f.stat().st_mtime_ns for f in files}

        assert main(["parse", "--manifest", str(manifest)]) == EXIT_OK
        assert "0 written, 3 already present" in capsys.readouterr().out
        for f in sorted(cache.glob("*.png")):
            assert f.stat().st_mtime_ns == stamps[f.name]

    def test_precomputed_rows_are_skipped(self, tmp_path, capsys):
        manifest = _synth(tmp_path / "d", n=2)
        assert main(["parse", "--manifest", str(manifest)]) == EXIT_OK
        assert "0 written, 2 already present" in capsys.readouterr().out
        assert not (tmp_path / "d" / "parser_cache").exists()

    def test_cache_dir_env_var_is_honored(self, tmp_path, monkeypatch):
        manifest = self._manifest_without_parsers(tmp_path)
        monkeypatch.setenv("PPT_CACHE_DIR", str(tmp_path / "envcache"))
        assert main(["parse", "--manifest", str(manifest)]) == EXIT_OK
        assert len(list((tmp_path / "envcache" / "train").glob("*.png"))) == 3

    def test_cached_maps_match_the_stub_exactly(self, tmp_path):
        from pptformer.parsers import stub_parse

        manifest = self._manifest_without_parsers(tmp_path)
        main(["parse", "--manifest", str(manifest)])
        degraded = load_image(tmp_path / "d" / "degraded" / "0000.png")
        cached = load_image(tmp_path / "d" / "parser_cache" / "train" / "0000.png")
        assert np.array_equal(cached, stub_parse(degraded, n_segments=6, seed=0))


class TestTrain:
    def _train_args(self, manifest, out):
        return (["train", "--out", str(out)] + MICRO_MODEL + MICRO_TRAIN +
                ["--override", f"data.train_manifest={manifest}"])

    def test_artifacts_and_exit_code(self, tmp_path):
        manifest = _synth(tmp_path / "d", n=3)
        out = tmp_path / "run"
        assert main(self._train_args(manifest, out)) == EXIT_OK
        assert (out / "config.yaml").is_file()
        assert (out / "metrics.log").is_file()
        assert (out / "ckpt_final.npz").is_file()
        assert (out / "train_metrics.csv").is_file()
        log = (out / "metrics.log").read_text().strip().splitlines()
        assert len(log) == 2 and log[0].startswith("step=1 ")

    def test_repeat_runs_and_archived_config_replays_are_identical(self, tmp_path):
        manifest = _synth(tmp_path / "d", n=3)
        first = tmp_path / "r1"
        again = tmp_path / "r2"
        replay = tmp_path / "r3"
        assert main(self._train_args(manifest, first)) == EXIT_OK
        assert main(self._train_args(manifest, again)) == EXIT_OK
        assert main(["train", "--config", str(first / "config.yaml"),
                     "--out", str(replay)]) == EXIT_OK
        lines = [(p / "metrics.log").read_text().splitlines()[0]
                 for p in (first, again, replay)]
        assert lines[0] == lines[1] == lines[2]

    def test_missing_manifest_config_is_invalid(self, tmp_path):
        assert main(["train", "--out", str(tmp_path / "x")] + MICRO_MODEL) == EXIT_INVALID

    def test_resuming_nan_checkpoint_exits_numeric(self, tmp_path):
        manifest = _synth(tmp_path / "d", n=3)
        model = build_variant_model(MICRO_CONFIG, "full", seed=0)
        with torch.no_grad():
            model.irnet.feat_extract.weight.fill_(float("nan"))
        prefix = tmp_path / "poisoned"
        save_checkpoint(str(prefix), model, model_config=MICRO_CONFIG,
                        train_config=TrainConfig(total_steps=2, patch_size=8, batch_size=1),
                        step=0, variant="full")
        out = tmp_path / "run"
        code = main(self._train_args(manifest, out) + ["--resume", str(prefix)])
        assert code == EXIT_NUMERIC
        assert list(out.glob("nan_batch_step1.npz"))


class TestEval:
    def _identity_manifest(self, tmp_path):
        """Degraded and clean point at the same files: perfect restoration
        is the identity, which the zeroed model realizes exactly."""
        _synth(tmp_path / "d", n=2)
        path = tmp_path / "d" / "manifest.csv"
        rows = list(csv.reader(path.open()))
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(rows[0])
            for row in rows[1:]:
                writer.writerow([row[0], row[0], row[2]])
        return path

    def test_identity_model_saturates_both_metrics(self, tmp_path, capsys):
        manifest = self._identity_manifest(tmp_path)
        prefix = _zero_reconstruction_checkpoint(tmp_path / "ckpt")
        out = tmp_path / "eval"
        code = main(["eval", "--checkpoint", prefix, "--manifest", str(manifest),
                     "--out", str(out)])
        assert code == EXIT_OK
        assert "psnr=100.0000" in capsys.readouterr().out
        rows = list(csv.reader((out / "eval_metrics.csv").open()))
        assert rows[-1][0] == "mean"
        assert rows[-1][1] == "100.000000"
        assert rows[-1][2] == "1.000000"

    def test_missing_checkpoint_is_an_io_failure(self, tmp_path):
        manifest = self._identity_manifest(tmp_path)
        code = main(["eval", "--checkpoint", str(tmp_path / "nope"),
                     "--manifest", str(manifest)])
        assert code == EXIT_IO


class TestInfer:
    def test_identity_model_reproduces_the_input(self, tmp_path):
        _synth(tmp_path / "d", n=1)
        prefix = _zero_reconstruction_checkpoint(tmp_path / "ckpt")
        image_path = tmp_path / "d" / "degraded" / "0000.png"
        out = tmp_path / "out"
        code = main(["infer", "--checkpoint", prefix, "--image", str(image_path),
                     "--out", str(out), "--figure"])
        assert code == EXIT_OK
        restored = load_image(out / "0000_restored.png")
        assert np.array_equal(restored, load_image(image_path))
        assert (out / "0000_comparison.png").is_file()

    def test_explicit_parser_map_is_used(self, tmp_path):
        _synth(tmp_path / "d", n=1)
        prefix = _zero_reconstruction_checkpoint(tmp_path / "ckpt")
        image_path = tmp_path / "d" / "degraded" / "0000.png"
        parser_path = tmp_path / "d" / "parser" / "0000.png"
        out = tmp_path / "out"
        code = main(["infer", "--checkpoint", prefix, "--image", str(image_path),
                     "--parser", str(parser_path), "--out", str(out)])
        assert code == EXIT_OK
        assert (out / "0000_restored.png").is_file()


class TestAblate:
    def test_two_variants_share_a_seed_and_render_artifacts(self, tmp_path):
        train_manifest = _synth(tmp_path / "train", n=2)
        val_manifest = _synth(tmp_path / "val", n=1, seed=9, split="val")
        out = tmp_path / "ab"
        code = main(["ablate", "--variants", "full,no_parser", "--out", str(out)]
                    + MICRO_MODEL + MICRO_TRAIN
                    + ["--override", "train.total_steps=1",
                       "--override", f"data.train_manifest={train_manifest}",
                       "--override", f"data.val_manifest={val_manifest}"])
        assert code == EXIT_OK
        rows = list(csv.DictReader((out / "ablation.csv").open()))
        assert [r["variant"] for r in rows] == ["full", "no_parser"]
        assert rows[0]["seed"] == rows[1]["seed"]
        assert (out / "ablation.png").is_file()

    def test_unknown_variant_is_invalid(self, tmp_path):
        train_manifest = _synth(tmp_path / "train", n=1)
        val_manifest = _synth(tmp_path / "val", n=1, seed=9, split="val")
        code = main(["ablate", "--variants", "bogus", "--out", str(tmp_path / "x")]
                    + MICRO_MODEL
                    + ["--override", f"data.train_manifest={train_manifest}",
                       "--override", f"data.val_manifest={val_manifest}"])
        assert code == EXIT_INVALID


class TestExitCodes:
    def test_unknown_override_key_is_invalid(self, tmp_path):
        assert main(["train", "--out", str(tmp_path),
                     "--override", "train.warmup=5"]) == EXIT_INVALID

    def test_unknown_ablation_value_is_invalid(self, tmp_path):
        assert main(["train", "--out", str(tmp_path),
                     "--override", "train.ablation=bogus"]) == EXIT_INVALID
