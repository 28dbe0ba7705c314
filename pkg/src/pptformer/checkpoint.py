"""Checkpoint archive: flat named-tensor npz plus a JSON sidecar manifest.

A checkpoint is a pair of files sharing a prefix:

    <prefix>.npz    parameter/optimizer tensors and RNG blobs
    <prefix>.json   ModelConfig, TrainConfig, step, variant, numpy RNG state

npz keys use stable, documented paths:

    param/<name>            model parameter, <name> from named_parameters()
    opt/exp_avg/<name>      AdamW first moment for that parameter
    opt/exp_avg_sq/<name>   AdamW second moment
    opt/step/<name>         AdamW per-parameter step counter
    rng/torch               torch.Generator state bytes

The learning-rate schedule is a pure function of (step, config), so the
sidecar's step and train_config fully determine schedule state on resume.
"""

import json
import os

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .errors import InvalidArgumentError

FORMAT_VERSION = 1


def _named_params(model):
    return dict(model.named_parameters())


def save_checkpoint(prefix, model, optimizer=None, *, model_config, train_config,
                    step, variant="full", torch_rng=None, data_rng=None, extra=None):
    """Write <prefix>.npz and <prefix>.json; returns the prefix."""
    arrays = {}
    for name, p in _named_params(model).items():
        arrays[f"param/{name}"] = p.detach().cpu().numpy()

    if optimizer is not None:
        for name, p in _named_params(model).items():
            state = optimizer.state.get(p)
            if not state:  # parameter not yet stepped
                continue
            arrays[f"opt/exp_avg/{name}"] = state["exp_avg"].detach().cpu().numpy()
            arrays[f"opt/exp_avg_sq/{name}"] = state["exp_avg_sq"].detach().cpu().numpy()
            step_t = state["step"]
            arrays[f"opt/step/{name}"] = (
                step_t.detach().cpu().numpy() if torch.is_tensor(step_t)
                else np.asarray(step_t)
            )

    if torch_rng is not None:
        arrays["rng/torch"] = torch_rng.get_state().numpy()

    manifest = {
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "variant": variant,
        "model_config": model_config.to_dict(),
        "train_config": train_config.to_dict(),
    }
    if data_rng is not None:
        manifest["data_rng_state"] = data_rng.bit_generator.state
    if extra:
        manifest["extra"] = extra

    os.makedirs(os.path.dirname(os.path.abspath(prefix)) or ".", exist_ok=True)
    np.savez(prefix + ".npz", **arrays)
    with open(prefix + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return prefix


def load_manifest(prefix):
    path = prefix + ".json"
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint manifest not found: {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise InvalidArgumentError(
            f"unsupported checkpoint format_version {manifest.get('format_version')}"
        )
    return manifest


def check_architecture(manifest, model_config):
    """Raise with the differing field names if the checkpoint was built differently."""
    stored = manifest["model_config"]
    current = model_config.to_dict()
    diffs = [k for k in sorted(set(stored) | set(current))
             if stored.get(k) != current.get(k)]
    if diffs:
        detail = ", ".join(f"{k}: checkpoint={stored.get(k)!r} config={current.get(k)!r}"
                           for k in diffs)
        raise InvalidArgumentError(f"checkpoint/config architecture mismatch ({detail})")


def load_checkpoint(prefix, model, optimizer=None, torch_rng=None, data_rng=None,
                    strict_arch=True):
    """Load tensors into an already-built model (and optimizer); returns the manifest."""
    npz_path = prefix + ".npz"
    if not os.path.isfile(npz_path):
        raise FileNotFoundError(f"checkpoint archive not found: {npz_path}")
    manifest = load_manifest(prefix)
    if strict_arch:
        check_architecture(manifest, model.config)

    with np.load(npz_path) as archive:
        arrays = {k: archive[k] for k in archive.files}

    params = _named_params(model)
    stored = {k[len("param/"):] for k in arrays if k.startswith("param/")}
    missing = sorted(set(params) - stored)
    unexpected = sorted(stored - set(params))
    if missing or unexpected:
        raise InvalidArgumentError(
            f"parameter set mismatch (missing={missing[:4]}, unexpected={unexpected[:4]})"
        )
    with torch.no_grad():
        for name, p in params.items():
            value = torch.from_numpy(arrays[f"param/{name}"])
            if value.shape != p.shape:
                raise InvalidArgumentError(
                    f"shape mismatch for {name}: checkpoint {tuple(value.shape)} vs model {tuple(p.shape)}"
                )
            p.copy_(value)

    if optimizer is not None:
        for name, p in params.items():
            key = f"opt/exp_avg/{name}"
            if key not in arrays:
                continue
            state = optimizer.state.setdefault(p, {})
            state["exp_avg"] = torch.from_numpy(arrays[key]).clone()
            state["exp_avg_sq"] = torch.from_numpy(arrays[f"opt/exp_avg_sq/{name}"]).clone()
            step_arr = arrays[f"opt/step/{name}"]
            state["step"] = torch.from_numpy(np.asarray(step_arr, dtype=np.float32)).reshape(())

    if torch_rng is not None and "rng/torch" in arrays:
        torch_rng.set_state(torch.from_numpy(arrays["rng/torch"]))
    if data_rng is not None and "data_rng_state" in manifest:
        state = manifest["data_rng_state"]
        # JSON round-trips the PCG64 state dict with string keys intact.
        data_rng.bit_generator.state = state

    return manifest


def configs_from_manifest(manifest):
    return (ModelConfig.from_dict(manifest["model_config"]),
            TrainConfig.from_dict(manifest["train_config"]))
