"""Procedural clean images and synthetic degradations for desk-scale runs."""

import numpy as np

from .errors import InvalidArgumentError

DEGRADATIONS = ("rain_streaks", "low_light")

LOW_LIGHT_GAMMA_RANGE = (2.0, 4.0)
LOW_LIGHT_NOISE_SIGMA = 0.01
RAIN_STREAK_COUNT_RANGE = (40, 120)


def _check_image(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidArgumentError(f"expected (H, W, 3) image, got {image.shape}")
    return image


def low_light(image, gamma, noise_sigma, rng):
    """Gamma-darkening plus Gaussian read noise, clipped to [0, 1]."""
    image = _check_image(image)
    if gamma < 1.0:
        raise InvalidArgumentError(f"low-light gamma must be >= 1, got {gamma}")
    dark = np.power(image, gamma)
    if noise_sigma > 0.0:
        dark = dark + rng.normal(0.0, noise_sigma, size=dark.shape)
    return np.clip(dark, 0.0, 1.0).astype(np.float32)


def rain_streaks(image, n_streaks, rng, length_range=(8, 24), intensity_range=(0.15, 0.45)):
    """Additive oriented bright line segments; n_streaks=0 is the identity."""
    image = _check_image(image)
    if n_streaks == 0:
        return image.astype(np.float32)
    h, w = image.shape[:2]
    layer = np.zeros((h, w), dtype=np.float64)
    # One dominant slant per image, jittered per streak.
    base_angle = rng.uniform(-0.5, 0.5)  # radians off vertical
    for _ in range(int(n_streaks)):
        cx = rng.uniform(0, w - 1)
        cy = rng.uniform(0, h - 1)
        angle = base_angle + rng.uniform(-0.08, 0.08)
        length = rng.uniform(*length_range)
        intensity = rng.uniform(*intensity_range)
        dx, dy = np.sin(angle), np.cos(angle)
        steps = max(2, int(np.ceil(length * 2)))
        ts = np.linspace(-length / 2, length / 2, steps)
        xs = np.round(cx + ts * dx).astype(int)
        ys = np.round(cy + ts * dy).astype(int)
        keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        layer[ys[keep], xs[keep]] = np.maximum(layer[ys[keep], xs[keep]], intensity)
    return np.clip(image + layer[..., None], 0.0, 1.0).astype(np.float32)


def degrade(clean, degradation, rng):
    """Apply one named degradation with parameters drawn from ``rng``."""
    if degradation == "low_light":
        gamma = rng.uniform(*LOW_LIGHT_GAMMA_RANGE)
        return low_light(clean, gamma, LOW_LIGHT_NOISE_SIGMA, rng)
    if degradation == "rain_streaks":
        n = int(rng.integers(*RAIN_STREAK_COUNT_RANGE))
        return rain_streaks(clean, n, rng)
    raise InvalidArgumentError(f"unknown degradation {degradation!r}; expected one of {DEGRADATIONS}")


# ---------------------------------------------------------------------------
# Procedural clean images
# ---------------------------------------------------------------------------

def _coords(h, w):
    ys, xs = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    return ys, xs


def _gradient_layer(h, w, rng):
    ys, xs = _coords(h, w)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = xs * np.cos(theta) + ys * np.sin(theta)
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    c0, c1 = rng.uniform(0.1, 0.9, size=(2, 3))
    return c0 + ramp[..., None] * (c1 - c0)


def _shape_layer(base, rng):
    h, w = base.shape[:2]
    ys, xs = _coords(h, w)
    out = base.copy()
    for _ in range(int(rng.integers(2, 6))):
        color = rng.uniform(0.05, 0.95, size=3)
        if rng.random() < 0.5:  # disc
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            r = rng.uniform(0.08, 0.3)
            mask = (ys - cy) ** 2 + (xs - cx) ** 2 <= r**2
        else:  # axis-aligned rectangle
            y0, x0 = rng.uniform(0.0, 0.6, size=2)
            y1 = y0 + rng.uniform(0.15, 0.4)
            x1 = x0 + rng.uniform(0.15, 0.4)
            mask = (ys >= y0) & (ys <= y1) & (xs >= x0) & (xs <= x1)
        out[mask] = color
    return out


def _texture_layer(h, w, rng, amplitude=0.08):
    ys, xs = _coords(h, w)
    fy, fx = rng.uniform(2, 9, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    plaid = np.sin(2 * np.pi * fy * ys + phase[0]) * np.sin(2 * np.pi * fx * xs + phase[1])
    return amplitude * plaid[..., None]


def procedural_clean(rng, size=(96, 96)):
    """One clean image built from a gradient base, flat shapes, and a plaid texture."""
    h, w = size
    img = _gradient_layer(h, w, rng)
    img = _shape_layer(img, rng)
    img = img + _texture_layer(h, w, rng)
    return np.clip(img, 0.0, 1.0).astype(np.float32)
