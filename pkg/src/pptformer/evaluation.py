"""Restoration quality metrics.

All metrics take (H, W, 3) or (H, W) float arrays with values in [0, 1] and
compute in float64. PSNR/MAE treat channels as flat samples; SSIM averages a
per-channel score. `metric_mode="luma"` converts both images to BT.601
full-range luma first, which is how most deraining/enhancement numbers are
reported.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

# BT.601 full-range luma weights.
_LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# PSNR is unbounded as MSE -> 0; identical images report this cap instead of inf.
PSNR_CAP_DB = 100.0

# SSIM constants for unit dynamic range.
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise InvalidArgumentError(f"expected (H, W) or (H, W, C) arrays, got {a.shape}")
    return a, b


def to_luma(image):
    """(H, W, 3) RGB -> (H, W) BT.601 full-range luma."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidArgumentError(f"expected (H, W, 3) image, got {image.shape}")
    r, g, b = image[..., 0], image[..., 1], image[..., 2]
    return _LUMA_WEIGHTS[0] * r + _LUMA_WEIGHTS[1] * g + _LUMA_WEIGHTS[2] * b


def mae(pred, target):
    pred, target = _check_pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def psnr(pred, target, peak=1.0):
    """Peak signal-to-noise ratio in dB; capped at 100 dB when MSE is zero."""
    if peak <= 0:
        raise InvalidArgumentError(f"peak must be positive, got {peak}")
    pred, target = _check_pair(pred, target)
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / mse))


def _gaussian_kernel(size=_SSIM_WINDOW, sigma=_SSIM_SIGMA):
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    kernel = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def _filter_valid(image, kernel):
    """Separable correlation keeping only fully covered (valid) windows."""
    size = kernel.size
    out = np.apply_along_axis(lambda row: np.convolve(row, kernel[::-1], mode="valid"), 1, image)
    out = np.apply_along_axis(lambda col: np.convolve(col, kernel[::-1], mode="valid"), 0, out)
    assert out.shape == (image.shape[0] - size + 1, image.shape[1] - size + 1)
    return out


def _ssim_single(pred, target):
    if min(pred.shape) < _SSIM_WINDOW:
        raise InvalidArgumentError(
            f"image {pred.shape} smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} SSIM window"
        )
    kernel = _gaussian_kernel()
    c1 = _SSIM_K1**2
    c2 = _SSIM_K2**2

    mu_p = _filter_valid(pred, kernel)
    mu_t = _filter_valid(target, kernel)
    mu_pp = _filter_valid(pred * pred, kernel)
    mu_tt = _filter_valid(target * target, kernel)
    mu_pt = _filter_valid(pred * target, kernel)

    var_p = mu_pp - mu_p**2
    var_t = mu_tt - mu_t**2
    cov = mu_pt - mu_p * mu_t

    num = (2.0 * mu_p * mu_t + c1) * (2.0 * cov + c2)
    den = (mu_p**2 + mu_t**2 + c1) * (var_p + var_t + c2)
    return float(np.mean(num / den))


def ssim(pred, target):
    """Mean SSIM with an 11-tap Gaussian window (sigma 1.5), valid padding.

    Color images score each channel independently and average.
    """
    pred, target = _check_pair(pred, target)
    if pred.ndim == 2:
        return _ssim_single(pred, target)
    return float(np.mean([_ssim_single(pred[..., c], target[..., c]) for c in range(pred.shape[2])]))


def evaluate_pair(pred, target, metric_mode="rgb"):
    """All three metrics for one restored/reference pair."""
    if metric_mode not in ("rgb", "luma"):
        raise InvalidArgumentError(f"metric_mode must be 'rgb' or 'luma', got {metric_mode!r}")
    pred, target = _check_pair(pred, target)
    if metric_mode == "luma":
        pred, target = to_luma(pred), to_luma(target)
    return {"psnr": psnr(pred, target), "ssim": ssim(pred, target), "mae": mae(pred, target)}


@dataclass
class MetricReport:
    """Per-image metric rows plus aggregate means."""

    metric_mode: str = "rgb"
    rows: list = field(default_factory=list)  # (name, {"psnr": ..., "ssim": ..., "mae": ...})

    def add(self, name, metrics):
        self.rows.append((str(name), dict(metrics)))

    def mean(self, key):
        if not self.rows:
            raise InvalidArgumentError("report has no rows")
        return float(np.mean([m[key] for _, m in self.rows]))

    def summary(self):
        return {k: self.mean(k) for k in ("psnr", "ssim", "mae")}

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["name", "psnr", "ssim", "mae"])
        for name, m in self.rows:
            writer.writerow([name, f"{m['psnr']:.6f}", f"{m['ssim']:.6f}", f"{m['mae']:.6f}"])
        s = self.summary()
        writer.writerow(["mean", f"{s['psnr']:.6f}", f"{s['ssim']:.6f}", f"{s['mae']:.6f}"])
        return buf.getvalue()

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def format_summary(self):
        s = self.summary()
        return (f"images={len(self.rows)} mode={self.metric_mode} "
                f"psnr={s['psnr']:.4f} ssim={s['ssim']:.6f} mae={s['mae']:.6f}")
