"""Reading and writing images as float arrays in [0, 1].

Grayscale files load as 2-D planes and are treated as luminance
directly; everything else converts to RGB. Saving rounds to 8-bit and is
deterministic: the same array always produces the same file bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


def load_image(path) -> np.ndarray:
    """Load an image as float64 in [0, 1]: (H, W) if grayscale on disk,
    else (H, W, 3) RGB."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
            return arr / 255.0
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path, img: np.ndarray) -> None:
    """Write a [0, 1] float array ((H, W) or (H, W, 3)) as an 8-bit image."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError(f"expected a 2-D or 3-D image, got shape {img.shape}")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def list_images(directory) -> list[Path]:
    """Image files directly under `directory`, sorted by name."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    return sorted(p for p in root.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
