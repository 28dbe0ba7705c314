"""Training loop: AdamW + cosine annealing, patch sampling, spatial/frequency
L1 loss, checkpointing, and the ablation matrix.
"""

import csv
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ckpt
from .config import ABLATION_VARIANTS, TrainConfig
from .data import RestorationSample, random_hflip, sample_patch
from .errors import InvalidArgumentError, NumericError
from .evaluation import MetricReport, evaluate_pair
from .fusion import BiPPF
from .model import build_model, restore
from .profiling import count_parameters, estimate_flops


def lr_at(step, config):
    """Cosine annealing from lr_init at step 0 to lr_final at total_steps."""
    if step < 0 or step > config.total_steps:
        raise InvalidArgumentError(
            f"step {step} outside [0, {config.total_steps}]"
        )
    span = config.lr_init - config.lr_final
    return config.lr_final + 0.5 * span * (1.0 + math.cos(math.pi * step / config.total_steps))


def restoration_loss(pred, target, fft_weight):
    """L1 in pixel space plus weighted L1 over the DFT's real/imaginary parts.

    Returns (total, spatial, frequency) scalars; the frequency term is
    reported unweighted.
    """
    if pred.shape != target.shape:
        raise InvalidArgumentError(f"loss shape mismatch: {pred.shape} vs {target.shape}")
    spatial = (pred - target).abs().mean()
    spectrum_diff = torch.fft.fft2(pred) - torch.fft.fft2(target)
    frequency = torch.view_as_real(spectrum_diff).abs().mean()
    return spatial + fft_weight * frequency, spatial, frequency


# ---------------------------------------------------------------------------
# Ablation model edits
# ---------------------------------------------------------------------------

class SFTFusion(nn.Module):
    """Scale-and-shift conditioning baseline: x * (1 + gamma(m)) + beta(m)."""

    def __init__(self, dim, m_channels=None, bias=False):
        super().__init__()
        m_channels = dim if m_channels is None else m_channels
        self.mlp = nn.Sequential(
            nn.Conv2d(m_channels, dim, kernel_size=1, bias=bias),
            nn.GELU(),
            nn.Conv2d(dim, dim * 2, kernel_size=1, bias=bias),
        )

    def forward(self, x, m):
        gamma, beta = self.mlp(m).chunk(2, dim=1)
        return x * (1.0 + gamma) + beta


def apply_sft_fusion(model):
    """Replace every bidirectional fusion block with the SFT baseline, in place."""
    replaced = 0
    for module in model.modules():
        for child_name, child in list(module.named_children()):
            if isinstance(child, BiPPF):
                sft = SFTFusion(child.x_proj.in_channels, child.m_proj.in_channels)
                setattr(module, child_name, sft)
                replaced += 1
    if replaced == 0:
        raise InvalidArgumentError("model has no fusion blocks to replace")
    return model


def build_variant_model(model_config, variant, seed=None):
    """Build a model for one ablation variant; optional seed pins initialization."""
    if variant not in ABLATION_VARIANTS:
        raise InvalidArgumentError(f"unknown ablation variant {variant!r}")
    if seed is not None:
        torch.manual_seed(seed)
    model = build_model(model_config, variant)
    if variant == "sft_fusion":
        apply_sft_fusion(model)
    return model


def default_parser_provider(variant):
    """What feeds the parser branch: the parser map, or the degraded image itself."""
    if variant == "degraded_as_parser":
        return lambda sample: sample.degraded
    if variant == "no_parser":
        return lambda sample: None
    return lambda sample: sample.parser


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    model: nn.Module
    optimizer: torch.optim.Optimizer
    step: int = 0
    data_rng: np.random.Generator = None
    best_val: float = float("nan")
    history: list = field(default_factory=list)  # dict per logged step

    @property
    def last_loss(self):
        return self.history[-1]["loss"] if self.history else float("nan")


def _stack(images):
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def make_batch(dataset, config, rng, parser_provider):
    """Sample a batch of aligned (degraded, clean, parser) patches."""
    needs_parser = parser_provider(dataset[0]) is not None
    degraded, clean, parser = [], [], []
    for i in rng.integers(0, len(dataset), size=config.batch_size):
        s = dataset[int(i)]
        s = RestorationSample(s.degraded, s.clean, parser_provider(s), s.name)
        if s.parser is None and needs_parser:
            raise InvalidArgumentError(f"sample {s.name} has no parser map")
        s = sample_patch(s, config.patch_size, rng)
        s = random_hflip(s, rng)
        degraded.append(s.degraded)
        clean.append(s.clean)
        if needs_parser:
            parser.append(s.parser)
    return _stack(degraded), _stack(clean), _stack(parser) if needs_parser else None


def _snapshot_nan_batch(out_dir, step, batch):
    degraded, clean, parser = batch
    path = os.path.join(out_dir, f"nan_batch_step{step}.npz")
    arrays = {"degraded": degraded.detach().cpu().numpy(),
              "clean": clean.detach().cpu().numpy(), "step": np.asarray(step)}
    if parser is not None:
        arrays["parser"] = parser.detach().cpu().numpy()
    np.savez(path, **arrays)
    return path


def train(config, dataset, model, parser_provider=None, *, out_dir=None,
          resume_from=None, log_stream=None):
    """Run the optimization loop; returns the final TrainState.

    ``dataset`` is a non-empty list of RestorationSample. ``parser_provider``
    maps a sample to the full-resolution map fed to the parser branch (cropped
    and flipped together with the image pair); it defaults to the variant's
    convention from the config.
    """
    if not dataset:
        raise InvalidArgumentError("dataset is empty")
    if parser_provider is None:
        parser_provider = default_parser_provider(config.ablation)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.lr_init,
        betas=(config.beta1, config.beta2), weight_decay=config.weight_decay,
    )
    state = TrainState(model=model, optimizer=optimizer,
                       data_rng=np.random.default_rng(config.seed))

    if resume_from is not None:
        manifest = ckpt.load_checkpoint(resume_from, model, optimizer,
                                        data_rng=state.data_rng)
        state.step = manifest["step"]

    log_path = os.path.join(out_dir, "metrics.log") if out_dir else None
    log_fh = open(log_path, "a") if log_path else None
    try:
        model.train()
        while state.step < config.total_steps:
            step = state.step + 1
            lr = lr_at(step - 1, config)
            for group in optimizer.param_groups:
                group["lr"] = lr

            batch = make_batch(dataset, config, state.data_rng, parser_provider)
            degraded, clean, parser = batch
            try:
                pred = model(degraded, parser, clamp=False)
                total, spatial, frequency = restoration_loss(pred, clean, config.loss_fft_weight)
                if not torch.isfinite(total):
                    raise NumericError(f"non-finite loss at step {step}")
            except NumericError as exc:
                # Blocks also self-check their inputs; either way, keep the
                # exact batch so the failure can be replayed offline.
                snapshot = _snapshot_nan_batch(out_dir, step, batch) if out_dir else "<no out_dir>"
                raise NumericError(f"{exc}; offending batch saved to {snapshot}") from None

            optimizer.zero_grad(set_to_none=True)
            total.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            state.step = step

            if step % config.log_every == 0 or step == config.total_steps:
                record = {"step": step, "lr": lr, "loss": total.detach().item(),
                          "loss_spatial": spatial.detach().item(),
                          "loss_fft": frequency.detach().item()}
                state.history.append(record)
                line = " ".join(f"{k}={record[k]:.8g}" if k != "step" else f"step={record[k]}"
                                for k in ("step", "lr", "loss", "loss_spatial", "loss_fft"))
                if log_fh:
                    log_fh.write(line + "\n")
                    log_fh.flush()
                if log_stream:
                    print(line, file=log_stream)

            if out_dir and config.checkpoint_every > 0 and step % config.checkpoint_every == 0:
                ckpt.save_checkpoint(
                    os.path.join(out_dir, f"ckpt_step{step}"), model, optimizer,
                    model_config=model.config, train_config=config, step=step,
                    variant=config.ablation, data_rng=state.data_rng,
                )
    finally:
        if log_fh:
            log_fh.close()

    if out_dir and config.total_steps > 0:
        ckpt.save_checkpoint(
            os.path.join(out_dir, "ckpt_final"), model, optimizer,
            model_config=model.config, train_config=config, step=state.step,
            variant=config.ablation, data_rng=state.data_rng,
        )
    return state


def evaluate_model(model, dataset, variant="full", metric_mode="rgb"):
    """MetricReport of the model over whole images (padded, clamped)."""
    provider = default_parser_provider(variant)
    report = MetricReport(metric_mode=metric_mode)
    for sample in dataset:
        out = restore(model, sample.degraded, provider(sample))
        report.add(sample.name, evaluate_pair(out, sample.clean, metric_mode))
    return report


# ---------------------------------------------------------------------------
# Ablation matrix
# ---------------------------------------------------------------------------

def run_ablation(variants, base_config, model_config, dataset, val_dataset,
                 out_dir=None, metric_mode="rgb", log_stream=None):
    """Train each variant under an identical seed/budget; returns report rows.

    Each row records the shared seed so reports are self-certifying about
    comparability.
    """
    rows = []
    for variant in variants:
        if variant not in ABLATION_VARIANTS:
            raise InvalidArgumentError(f"unknown ablation variant {variant!r}")
        config = TrainConfig(**{**base_config.to_dict(), "ablation": variant})
        model = build_variant_model(model_config, variant, seed=config.seed)
        variant_dir = os.path.join(out_dir, variant) if out_dir else None
        if log_stream:
            print(f"[ablate] training variant {variant!r}", file=log_stream)
        state = train(config, dataset, model, out_dir=variant_dir)
        report = evaluate_model(model, val_dataset, variant, metric_mode)
        summary = report.summary()
        rows.append({
            "variant": variant,
            "seed": config.seed,
            "steps": config.total_steps,
            "ssim": summary["ssim"],
            "psnr": summary["psnr"],
            "params": count_parameters(model),
            "flops": estimate_flops(model, config.patch_size),
            "final_loss": state.last_loss,
        })
        if log_stream:
            print(f"[ablate] {variant}: ssim={summary['ssim']:.6f} psnr={summary['psnr']:.4f}",
                  file=log_stream)
    return rows


ABLATION_REPORT_COLUMNS = ("variant", "seed", "steps", "ssim", "psnr",
                           "params", "flops", "final_loss")


def ablation_table(rows):
    """Render report rows as CSV (machine-readable table)."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=ABLATION_REPORT_COLUMNS)
    writer.writeheader()
    for row in rows:
        out = dict(row)
        out["ssim"] = f"{row['ssim']:.6f}"
        out["psnr"] = f"{row['psnr']:.4f}"
        out["final_loss"] = f"{row['final_loss']:.6g}"
        writer.writerow(out)
    return buf.getvalue()
