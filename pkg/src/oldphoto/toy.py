"""Procedural stand-in data for desk-scale runs: smooth scenes and cartoon faces."""
import cv2
import numpy as np


def toy_scene(rng, size=64):
    """Smooth colour gradient with a few flat shapes, unit range ``(3, size, size)``."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    c0, c1, c2 = rng.uniform(0.15, 0.85, (3, 3))
    img = (c0[:, None, None] * (1 - xx) + c1[:, None, None] * xx) * (1 - yy) + c2[:, None, None] * yy
    img = np.ascontiguousarray(img.transpose(1, 2, 0))
    for _ in range(int(rng.integers(2, 5))):
        color = tuple(float(v) for v in rng.uniform(0.05, 0.95, 3))
        center = (int(rng.integers(size)), int(rng.integers(size)))
        if rng.random() < 0.5:
            r = int(rng.integers(size // 10, size // 4))
            cv2.circle(img, center, r, color, -1, lineType=cv2.LINE_AA)
        else:
            w, h = rng.integers(size // 8, size // 3, 2)
            cv2.rectangle(img, center, (int(center[0] + w), int(center[1] + h)), color, -1)
    img = cv2.GaussianBlur(img, (3, 3), 0.8)
    return np.clip(img.transpose(2, 0, 1), 0, 1).astype(np.float32)


def toy_face(rng, size=64):
    """A cartoon face: skin ellipse, eyes, mouth on a plain background."""
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = rng.uniform(0.2, 0.8, 3)
    s = size / 64.0
    skin = tuple(float(v) for v in np.array([0.85, 0.65, 0.5]) * rng.uniform(0.7, 1.1))
    cx, cy = size // 2 + int(rng.integers(-3, 4) * s), size // 2 + int(rng.integers(-3, 4) * s)
    cv2.ellipse(img, (cx, cy), (int(20 * s), int(26 * s)), 0, 0, 360, skin, -1, cv2.LINE_AA)
    eye = tuple(float(v) for v in rng.uniform(0.0, 0.3, 3))
    dx, dy = int(8 * s), int(6 * s)
    for sx in (-1, 1):
        cv2.circle(img, (cx + sx * dx, cy - dy), max(1, int(3 * s)), eye, -1, cv2.LINE_AA)
    mouth = (0.6, 0.2, 0.2)
    cv2.ellipse(img, (cx, cy + int(10 * s)), (int(7 * s), int(3 * s)), 0, 0, 180, mouth,
                max(1, int(2 * s)), cv2.LINE_AA)
    return np.clip(img.transpose(2, 0, 1), 0, 1).astype(np.float32)


def toy_images(seed, n, size=64, kind="scene"):
    rng = np.random.default_rng(seed)
    make = toy_scene if kind == "scene" else toy_face
    return np.stack([make(rng, size) for _ in range(n)])
