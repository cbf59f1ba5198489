"""Image file I/O and range conversion.

Arrays are channel-first ``(C, H, W)`` float32. Files on disk are 8-bit PNG/JPEG;
masks are single-channel PNG with 255 marking a defect.
"""
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, InvalidInputError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def check_image(img, name="img"):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise InvalidInputError(f"{name} must have shape (C,H,W) with C in {{1,3}}, got {img.shape}")
    if img.shape[1] < 1 or img.shape[2] < 1:
        raise InvalidInputError(f"{name} has empty spatial extent")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return img.astype(np.float32, copy=False)


def check_mask(mask, shape=None):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InvalidInputError(f"mask must be 2-D, got shape {mask.shape}")
    if shape is not None and mask.shape != tuple(shape):
        raise InvalidInputError(f"mask shape {mask.shape} does not match image {tuple(shape)}")
    if not np.all((mask == 0) | (mask == 1)):
        raise InvalidInputError("mask must be binary")
    return mask.astype(np.uint8, copy=False)


def to_signed(img):
    return img * 2.0 - 1.0


def to_unit(img):
    return (img + 1.0) * 0.5


def quantize(img):
    """Unit-range float -> uint8, rounding half away like PIL does on save."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"directory not found: {directory}")
    return sorted(
        p for p in directory.iterdir()
        if p.suffix.lower() in IMAGE_SUFFIXES and not p.name.endswith(".mask.png")
    )


def read_image(path, channels=3):
    try:
        with Image.open(path) as im:
            im = im.convert("RGB" if channels == 3 else "L")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return np.ascontiguousarray(arr)


def write_image(path, img):
    img = check_image(img)
    arr = quantize(img)
    if arr.shape[0] == 1:
        pil = Image.fromarray(arr[0])
    else:
        pil = Image.fromarray(np.ascontiguousarray(arr.transpose(1, 2, 0)))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")


def read_mask(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    return (arr >= 128).astype(np.uint8)


def write_mask(path, mask):
    mask = check_mask(mask)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask * 255).save(path, format="PNG")
