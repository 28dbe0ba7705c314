"""8-bit PNG image IO; internal compute stays in unit-interval float32."""

from pathlib import Path

import numpy as np
from PIL import Image


def load_image(path):
    """Load an image file as float32 (H, W, 3) in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_image(path, arr):
    """Save float (H, W, 3) values in [0, 1] as an 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.round(np.clip(np.asarray(arr), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def quantize_unit(arr):
    """Snap unit-interval floats to the 8-bit grid (k/255)."""
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.float32) / np.float32(255.0)
