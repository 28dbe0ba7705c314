"""Parser maps and the parser-feature branch (PPFGNet).

A parser map is a 3-channel image rendering of a segmentation of the degraded
input. Maps are either precomputed offline and loaded from disk, or produced
by the built-in stub parser: a deterministic grid-seeded k-means over
(r, g, b, x/W, y/H) pixel features with each segment drawn in a seeded
constant color. PPFGNet turns the map into multi-scale features aligned with
the restoration branch's levels.
"""

from pathlib import Path

import numpy as np
import torch.nn as nn
import torch.nn.functional as F

from .backbone import Downsample
from .config import ModelConfig
from .errors import InvalidArgumentError
from .imgio import load_image, quantize_unit


def load_parser(path, expected_hw=None, auto_resize=False):
    """Load a precomputed parser map scaled to [0, 1].

    If expected_hw is given, the map must match it spatially unless
    auto_resize is enabled (nearest-neighbor, segments stay piecewise
    constant).
    """
    arr = load_image(path)
    if expected_hw is not None and arr.shape[:2] != tuple(expected_hw):
        if not auto_resize:
            raise InvalidArgumentError(
                f"parser map {path} is {arr.shape[:2]}, expected {tuple(expected_hw)}"
            )
        arr = _resize_nearest(arr, expected_hw)
    return arr


def _resize_nearest(arr, hw):
    h, w = hw
    rows = np.floor((np.arange(h) + 0.5) * arr.shape[0] / h).astype(int)
    cols = np.floor((np.arange(w) + 0.5) * arr.shape[1] / w).astype(int)
    return arr[rows][:, cols]


def kmeans_segments(image, n_segments, max_iters=50):
    """Deterministic Lloyd k-means over (r, g, b, x/W, y/H) pixel features.

    Centers initialize on an even grid over the image. Returns (labels (H, W),
    centers (k, 5)); empty clusters keep their last center and may leave
    fewer than n_segments populated labels.
    """
    if n_segments < 1:
        raise InvalidArgumentError("n_segments must be >= 1")
    h, w = image.shape[:2]
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    feats = np.concatenate(
        [image.reshape(h * w, 3).astype(np.float64),
         (xs.reshape(-1, 1) / max(w, 1)), (ys.reshape(-1, 1) / max(h, 1))],
        axis=1,
    )

    side = int(np.ceil(np.sqrt(n_segments)))
    grid_y = np.linspace(0, h - 1, side + 2)[1:-1] if side > 1 else np.array([h // 2])
    grid_x = np.linspace(0, w - 1, side + 2)[1:-1] if side > 1 else np.array([w // 2])
    seeds = [(int(round(gy)), int(round(gx))) for gy in grid_y for gx in grid_x]
    centers = np.stack([feats[gy * w + gx] for gy, gx in seeds[:n_segments]])
    while len(centers) < n_segments:  # more clusters than grid cells
        centers = np.vstack([centers, feats[len(centers) % (h * w)]])

    labels = np.zeros(h * w, dtype=np.int64)
    for _ in range(max_iters):
        d2 = ((feats[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        for k in range(len(centers)):
            members = feats[new_labels == k]
            if len(members):
                centers[k] = members.mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels.reshape(h, w), centers


def segment_palette(n_segments, seed):
    """Seeded distinct colors, snapped to the 8-bit grid."""
    rng = np.random.default_rng(seed)
    return quantize_unit(rng.random((n_segments, 3)))


def stub_parse(image, n_segments, seed):
    """Render a stub parser map for a degraded image.

    Clusters whose color centroids coincide (after 8-bit quantization)
    collapse into one effective segment, so a constant image yields a
    constant map even though the k-means features include position. Pure
    function of (image, n_segments, seed); the output is already quantized
    to 8-bit levels so caching to PNG and regenerating in memory agree bit
    for bit.
    """
    labels, centers = kmeans_segments(image, n_segments)
    color_keys = quantize_unit(np.clip(centers[:, :3], 0.0, 1.0))
    effective = {}
    cluster_to_segment = np.zeros(len(centers), dtype=np.int64)
    for k, key in enumerate(map(tuple, color_keys)):
        cluster_to_segment[k] = effective.setdefault(key, len(effective))
    palette = segment_palette(n_segments, seed)
    return palette[cluster_to_segment[labels]]


def parser_cache_path(cache_dir, split, image_path):
    return Path(cache_dir) / split / (Path(image_path).stem + ".png")


class ResidualConvBlock(nn.Module):
    """3x3 depth-wise + 1x1 point-wise with a residual, GELU in between."""

    def __init__(self, dim, bias=False):
        super().__init__()
        self.depth = nn.Conv2d(dim, dim, kernel_size=3, padding=1, groups=dim, bias=bias)
        self.point = nn.Conv2d(dim, dim, kernel_size=1, bias=bias)

    def forward(self, x):
        return x + self.point(F.gelu(self.depth(x)))


class PPFGNet(nn.Module):
    """Parser-feature branch: encodes the parser map into a feature pyramid.

    The stem and per-level residual conv stages share the restoration
    branch's dyadic widths; a 1x1 tap at each scale emits the feature the
    matching encoder/decoder level consumes.
    """

    def __init__(self, config: ModelConfig, in_channels=3, bias=False):
        super().__init__()
        self.config = config
        widths = [config.level_channels(l) for l in range(config.levels)]
        self.stem = nn.Conv2d(in_channels, widths[0], kernel_size=3, padding=1, bias=bias)
        self.stages = nn.ModuleList([
            nn.Sequential(ResidualConvBlock(widths[l], bias), ResidualConvBlock(widths[l], bias))
            for l in range(config.levels)
        ])
        self.taps = nn.ModuleList([
            nn.Conv2d(widths[l], widths[l], kernel_size=1, bias=bias)
            for l in range(config.levels)
        ])
        self.downs = nn.ModuleList([
            Downsample(widths[l], bias) for l in range(config.levels - 1)
        ])

    def forward(self, m):
        mult = self.config.spatial_multiple
        h, w = m.shape[-2:]
        if h % mult != 0 or w % mult != 0:
            raise InvalidArgumentError(
                f"parser map dims {(h, w)} not divisible by {mult}; pad first"
            )
        x = self.stem(m)
        pyramid = []
        for l, stage in enumerate(self.stages):
            x = stage(x)
            pyramid.append(self.taps[l](x))
            if l < len(self.downs):
                x = self.downs[l](x)
        return pyramid
