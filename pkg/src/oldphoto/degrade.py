"""Seeded synthesis of old-photo degradations.

Unstructured defects (noise, blur, JPEG, colour shift, defocus) are sampled as a
:class:`DegradationRecipe` and applied in random order. Structured defects
(scratches, holes exposing paper) come with a ground-truth :data:`DefectMask`.

All images are float32 ``(C, H, W)`` arrays in the unit range. Every op is a
pure function of its inputs and seed. Filters are evaluated in float64 and
rounded back to float32, which keeps constant images exactly constant.
"""
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import (
    ConfigurationError,
    DegradationOpError,
    InvalidInputError,
    InvalidParameterError,
    InvalidPlacementError,
)
from .images import check_image, list_images, read_image

KINDS = ("gaussian_noise", "gaussian_blur", "jpeg", "color_jitter", "box_blur")

NOISE_SIGMA = (5.0, 50.0)
BLUR_KERNELS = (3, 5, 7)
BLUR_SIGMA = (1.0, 5.0)
JPEG_QUALITY = (40, 100)  # open interval
COLOR_SHIFT = (-20.0, 20.0)
BOX_KERNELS = (3, 5, 7)

BLEND_MODES = ("add", "lighten_only", "screen")


def _finish(out):
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _filter(img, kernel):
    img64 = img.astype(np.float64)
    out = np.empty_like(img64)
    for c in range(img64.shape[0]):
        out[c] = cv2.filter2D(img64[c], cv2.CV_64F, kernel, borderType=cv2.BORDER_REPLICATE)
    return out


# --------------------------------------------------------------------------
# unstructured ops


def apply_gaussian_noise(img, sigma, seed):
    """Additive white noise; ``sigma`` is on the 0-255 scale."""
    img = check_image(img)
    if not np.isfinite(sigma) or sigma < 0:
        raise InvalidParameterError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma / 255.0, size=img.shape)
    return _finish(img.astype(np.float64) + noise)


def gaussian_kernel(k, sigma):
    x = np.arange(k, dtype=np.float64) - (k // 2)
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def apply_gaussian_blur(img, k, sigma):
    img = check_image(img)
    if k not in BLUR_KERNELS:
        raise InvalidParameterError(f"gaussian blur kernel must be one of {BLUR_KERNELS}, got {k}")
    if not sigma > 0:
        raise InvalidParameterError(f"gaussian blur sigma must be > 0, got {sigma}")
    return _finish(_filter(img, gaussian_kernel(int(k), float(sigma))))


def apply_jpeg(img, quality):
    img = check_image(img)
    quality = int(quality)
    if not 1 <= quality <= 100:
        raise InvalidParameterError(f"jpeg quality must be in [1, 100], got {quality}")
    u8 = np.clip(np.rint(img.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    hwc = u8[0] if u8.shape[0] == 1 else np.ascontiguousarray(u8.transpose(1, 2, 0)[..., ::-1])
    try:
        ok, buf = cv2.imencode(".jpg", hwc, [cv2.IMWRITE_JPEG_QUALITY, quality])
        if not ok:
            raise RuntimeError("encoder returned failure")
        flag = cv2.IMREAD_GRAYSCALE if u8.shape[0] == 1 else cv2.IMREAD_COLOR
        dec = cv2.imdecode(buf, flag)
        if dec is None:
            raise RuntimeError("decoder returned nothing")
    except (cv2.error, RuntimeError) as exc:
        raise DegradationOpError("jpeg", str(exc)) from exc
    if dec.ndim == 2:
        out = dec[None]
    else:
        out = dec[..., ::-1].transpose(2, 0, 1)
    return _finish(out.astype(np.float64) / 255.0)


def apply_color_jitter(img, shifts):
    img = check_image(img)
    if img.shape[0] != 3:
        raise InvalidInputError("color jitter needs a 3-channel image")
    shifts = np.asarray(shifts, dtype=np.float64).reshape(3, 1, 1)
    return _finish(img.astype(np.float64) + shifts / 255.0)


def apply_box_blur(img, k):
    img = check_image(img)
    if int(k) != k or k < 3 or k % 2 == 0:
        raise InvalidParameterError(f"box blur kernel must be odd and >= 3, got {k}")
    k = int(k)
    return _finish(_filter(img, np.full((k, k), 1.0 / (k * k))))


_APPLY = {
    "gaussian_noise": lambda img, p: apply_gaussian_noise(img, p["sigma"], p["seed"]),
    "gaussian_blur": lambda img, p: apply_gaussian_blur(img, p["k"], p["sigma"]),
    "jpeg": lambda img, p: apply_jpeg(img, p["quality"]),
    "color_jitter": lambda img, p: apply_color_jitter(img, (p["r"], p["g"], p["b"])),
    "box_blur": lambda img, p: apply_box_blur(img, p["k"]),
}


# --------------------------------------------------------------------------
# recipes


@dataclass
class DegradationRecipe:
    seed: int
    ops: list = field(default_factory=list)  # [(kind, {param: value})]
    drop_prob: float = 0.3

    def to_text(self):
        lines = [f"# seed={self.seed} drop_prob={self.drop_prob!r}"]
        for kind, params in self.ops:
            kv = " ".join(f"{k}={v!r}" for k, v in params.items())
            lines.append(f"{kind} {kv}".rstrip())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        seed, drop_prob, ops = 0, 0.3, []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key == "seed":
                        seed = int(val)
                    elif key == "drop_prob":
                        drop_prob = float(val)
                continue
            kind, *tokens = line.split()
            if kind not in KINDS:
                raise InvalidParameterError(f"unknown degradation kind {kind!r}")
            params = {}
            for tok in tokens:
                key, _, val = tok.partition("=")
                params[key] = int(val) if val.lstrip("-").isdigit() else float(val)
            ops.append((kind, params))
        return cls(seed=seed, ops=ops, drop_prob=drop_prob)


def _sample_params(kind, rng):
    if kind == "gaussian_noise":
        return {"sigma": float(rng.uniform(*NOISE_SIGMA)), "seed": int(rng.integers(2**31))}
    if kind == "gaussian_blur":
        return {"k": int(rng.choice(BLUR_KERNELS)), "sigma": float(rng.uniform(*BLUR_SIGMA))}
    if kind == "jpeg":
        return {"quality": int(rng.integers(JPEG_QUALITY[0] + 1, JPEG_QUALITY[1]))}
    if kind == "color_jitter":
        r, g, b = rng.uniform(*COLOR_SHIFT, size=3)
        return {"r": float(r), "g": float(g), "b": float(b)}
    if kind == "box_blur":
        return {"k": int(rng.choice(BOX_KERNELS))}
    raise InvalidParameterError(kind)


def make_recipe(seed, drop_prob=0.3):
    if not 0.0 <= drop_prob <= 1.0:
        raise InvalidParameterError(f"drop_prob must be in [0,1], got {drop_prob}")
    rng = np.random.default_rng(seed)
    ops = []
    for idx in rng.permutation(len(KINDS)):
        kind = KINDS[idx]
        keep = rng.random() >= drop_prob
        params = _sample_params(kind, rng)
        if keep:
            ops.append((kind, params))
    return DegradationRecipe(seed=int(seed), ops=ops, drop_prob=drop_prob)


def synthesize_unstructured(img, recipe):
    out = check_image(img).copy()
    for kind, params in recipe.ops:
        try:
            out = _APPLY[kind](out, params)
        except KeyError as exc:
            raise DegradationOpError(kind, f"missing parameter {exc}") from exc
    return out


# --------------------------------------------------------------------------
# structured defects


@dataclass
class ScratchAsset:
    texture: np.ndarray  # (H, W) float32 in [0, 1]
    kind: str = "scratch"  # or "paper"

    def __post_init__(self):
        tex = np.asarray(self.texture, dtype=np.float32)
        if tex.ndim == 3 and tex.shape[0] == 1:
            tex = tex[0]
        if tex.ndim != 2:
            raise InvalidInputError("asset texture must be single-channel")
        if tex.min() < 0 or tex.max() > 1:
            raise InvalidInputError("asset texture must be in the unit range")
        if self.kind not in ("scratch", "paper"):
            raise InvalidParameterError(f"asset kind must be scratch or paper, got {self.kind!r}")
        self.texture = tex


@dataclass
class Placement:
    top: int = 0
    left: int = 0
    flip_h: bool = False
    flip_v: bool = False
    rot90: int = 0
    elastic_std: float = 8.0
    elastic_smooth: int = 17


def elastic_warp(tex, std, smooth, rng):
    """Grid-displacement warp; the smoothed field is rescaled to ``std`` pixels."""
    if std <= 0:
        return tex
    h, w = tex.shape
    k = int(smooth) | 1
    fields = []
    for _ in range(2):
        d = rng.normal(size=(h, w))
        d = cv2.GaussianBlur(d, (k, k), 0, borderType=cv2.BORDER_REFLECT101)
        s = d.std()
        fields.append(d * (std / s) if s > 0 else d)
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float32)
    map_x = gx + fields[0].astype(np.float32)
    map_y = gy + fields[1].astype(np.float32)
    out = cv2.remap(tex.astype(np.float32), map_x, map_y, cv2.INTER_LINEAR,
                    borderMode=cv2.BORDER_REFLECT101)
    return np.clip(out, 0.0, 1.0)


def _blend(img, alpha, mode):
    img = img.astype(np.float64)
    a = alpha.astype(np.float64)[None]
    if mode == "add":
        return _finish(img + a)
    if mode == "lighten_only":
        return np.maximum(img, a).astype(np.float32)
    if mode == "screen":
        return _finish(1.0 - (1.0 - img) * (1.0 - a))
    raise InvalidParameterError(f"blend mode must be one of {BLEND_MODES}, got {mode!r}")


def blend_scratch(img, asset, mode, opacity, placement=None, seed=0, tau=0.05):
    """Blend a grayscale texture over ``img``; returns ``(image, mask)``.

    The texture, scaled by ``opacity``, acts as the blend layer. The mask marks
    pixels where that layer exceeds ``tau``.
    """
    img = check_image(img)
    if not 0.0 <= opacity <= 1.0:
        raise InvalidParameterError(f"opacity must be in [0,1], got {opacity}")
    if mode not in BLEND_MODES:
        raise InvalidParameterError(f"blend mode must be one of {BLEND_MODES}, got {mode!r}")
    placement = placement or Placement()
    tex = asset.texture
    if placement.flip_h:
        tex = tex[:, ::-1]
    if placement.flip_v:
        tex = tex[::-1]
    tex = np.ascontiguousarray(np.rot90(tex, placement.rot90))
    tex = elastic_warp(tex, placement.elastic_std, placement.elastic_smooth,
                       np.random.default_rng(seed))
    _, h, w = img.shape
    th, tw = tex.shape
    top, left = placement.top, placement.left
    if top < 0 or left < 0 or top + th > h or left + tw > w:
        raise InvalidPlacementError(
            f"texture {th}x{tw} at ({top},{left}) does not fit image {h}x{w}")
    alpha = np.zeros((h, w), dtype=np.float64)
    alpha[top:top + th, left:left + tw] = tex.astype(np.float64) * opacity
    out = _blend(img, alpha, mode)
    return out, (alpha > tau).astype(np.uint8)


def fit_texture(tex, h, w, rng):
    """Scale a texture so it just covers ``h x w``, then random-crop the excess.

    Textures are treated as whole-photo overlays, so large scans are shrunk
    rather than cropped to a small window.
    """
    th, tw = tex.shape
    scale = max(h / th, w / tw)
    if scale != 1:
        size = (max(w, int(np.ceil(tw * scale))), max(h, int(np.ceil(th * scale))))
        tex = cv2.resize(tex, size, interpolation=cv2.INTER_AREA if scale < 1 else cv2.INTER_LINEAR)
        th, tw = tex.shape
    top = int(rng.integers(0, th - h + 1))
    left = int(rng.integers(0, tw - w + 1))
    return np.ascontiguousarray(tex[top:top + h, left:left + w])


@dataclass
class StructuredConfig:
    n_scratch: tuple = (1, 6)  # inclusive
    hole_prob: float = 0.5
    opacity: tuple = (0.6, 1.0)
    modes: tuple = BLEND_MODES
    grain_sigma: tuple = (3.0, 15.0)
    blur_kernels: tuple = (3, 5)
    blur_sigma: tuple = (0.5, 1.5)
    elastic_std: float = 8.0
    elastic_smooth: int = 17
    tau: float = 0.05
    hole_radius: tuple = (0.05, 0.2)  # fraction of min(H, W)


def stage_seeds(seed):
    """Independent seeds for the scratch, hole and global-defect stages."""
    return [int(s) for s in np.random.SeedSequence(int(seed)).generate_state(3)]


def apply_global_defects(img, seed, config=None):
    """Film grain then a small Gaussian blur."""
    cfg = config or StructuredConfig()
    rng = np.random.default_rng(seed)
    sigma = float(rng.uniform(*cfg.grain_sigma))
    noise_seed = int(rng.integers(2**31))
    k = int(rng.choice(cfg.blur_kernels))
    bsig = float(rng.uniform(*cfg.blur_sigma))
    out = apply_gaussian_noise(img, sigma, noise_seed)
    return apply_gaussian_blur(out, k, bsig)


def _hole_alpha(h, w, rng, cfg):
    canvas = np.zeros((h, w), dtype=np.uint8)
    short = min(h, w)
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    for _ in range(int(rng.integers(2, 6))):
        r = rng.uniform(*cfg.hole_radius) * short
        axes = (max(1, int(r * rng.uniform(0.5, 1.0))), max(1, int(r * rng.uniform(0.5, 1.0))))
        center = (int(cx + rng.normal(0, r * 0.6)), int(cy + rng.normal(0, r * 0.6)))
        cv2.ellipse(canvas, center, axes, float(rng.uniform(0, 180)), 0, 360, 255, -1)
    feather = max(3, int(short * 0.03)) | 1
    alpha = cv2.GaussianBlur(canvas.astype(np.float64) / 255.0, (feather, feather), 0)
    return np.clip(alpha, 0.0, 1.0)


def synthesize_structured(img, assets, seed, config=None, return_parts=False):
    """Scratches, an optional paper-revealing hole, then grain and blur.

    Returns ``(image, mask)``; with ``return_parts`` also the list of
    per-defect masks whose union is ``mask``.
    """
    cfg = config or StructuredConfig()
    img = check_image(img)
    scratches = [a for a in assets if a.kind == "scratch"]
    papers = [a for a in assets if a.kind == "paper"]
    if not scratches or not papers:
        raise ConfigurationError("structured synthesis needs at least one scratch and one paper asset")
    scratch_seed, hole_seed, global_seed = stage_seeds(seed)
    _, h, w = img.shape
    out = img
    parts = []

    rng = np.random.default_rng(scratch_seed)
    lo, hi = cfg.n_scratch
    for _ in range(int(rng.integers(lo, hi + 1))):
        asset = scratches[int(rng.integers(len(scratches)))]
        tex = ScratchAsset(fit_texture(asset.texture, h, w, rng), "scratch")
        placement = Placement(
            flip_h=bool(rng.random() < 0.5), flip_v=bool(rng.random() < 0.5),
            rot90=0 if h != w else int(rng.integers(4)),
            elastic_std=cfg.elastic_std, elastic_smooth=cfg.elastic_smooth,
        )
        mode = cfg.modes[int(rng.integers(len(cfg.modes)))]
        opacity = float(rng.uniform(*cfg.opacity))
        out, m = blend_scratch(out, tex, mode, opacity, placement,
                               seed=int(rng.integers(2**31)), tau=cfg.tau)
        parts.append(m)

    rng = np.random.default_rng(hole_seed)
    if rng.random() < cfg.hole_prob:
        alpha = _hole_alpha(h, w, rng, cfg)
        paper = fit_texture(papers[int(rng.integers(len(papers)))].texture, h, w, rng)
        tint = rng.uniform(0.85, 1.0, size=(out.shape[0], 1, 1))
        fill = paper[None].astype(np.float64) * tint
        a = alpha[None]
        out = _finish(out.astype(np.float64) * (1.0 - a) + fill * a)
        parts.append((alpha > cfg.tau).astype(np.uint8))

    out = apply_global_defects(out, global_seed, cfg)
    mask = np.zeros((h, w), dtype=np.uint8)
    for m in parts:
        mask |= m
    if return_parts:
        return out, mask, parts
    return out, mask


# --------------------------------------------------------------------------
# texture assets


def procedural_assets(seed, n_scratch=8, n_paper=4, size=256):
    """Stand-in scratch and paper textures drawn procedurally."""
    rng = np.random.default_rng(seed)
    assets = []
    for _ in range(n_scratch):
        canvas = np.zeros((size, size), dtype=np.uint8)
        for _ in range(int(rng.integers(2, 7))):
            n_pts = int(rng.integers(3, 7))
            x0, y0 = rng.uniform(0, size, 2)
            ang = rng.uniform(0, np.pi)
            length = rng.uniform(0.3, 1.2) * size
            t = np.linspace(0, 1, n_pts)
            xs = x0 + np.cos(ang) * length * (t - 0.5) + rng.normal(0, size * 0.02, n_pts)
            ys = y0 + np.sin(ang) * length * (t - 0.5) + rng.normal(0, size * 0.02, n_pts)
            pts = np.stack([xs, ys], 1).astype(np.int32).reshape(-1, 1, 2)
            cv2.polylines(canvas, [pts], False, int(rng.integers(150, 256)),
                          thickness=int(rng.integers(1, 4)), lineType=cv2.LINE_AA)
        for _ in range(int(rng.integers(0, 20))):
            c = (int(rng.integers(size)), int(rng.integers(size)))
            cv2.circle(canvas, c, int(rng.integers(1, 3)), int(rng.integers(150, 256)), -1)
        assets.append(ScratchAsset(canvas.astype(np.float32) / 255.0, "scratch"))
    for _ in range(n_paper):
        low = rng.normal(size=(8, 8))
        low = cv2.resize(low, (size, size), interpolation=cv2.INTER_CUBIC)
        tex = rng.uniform(0.6, 0.85) + 0.05 * low + 0.03 * rng.normal(size=(size, size))
        assets.append(ScratchAsset(np.clip(tex, 0, 1).astype(np.float32), "paper"))
    return assets


def load_assets(directory):
    """Textures from ``directory/scratch/*`` and ``directory/paper/*``."""
    directory = Path(directory)
    assets = []
    for kind in ("scratch", "paper"):
        sub = directory / kind
        if sub.is_dir():
            for p in list_images(sub):
                assets.append(ScratchAsset(read_image(p, channels=1)[0], kind))
    if not assets:
        raise ConfigurationError(f"no scratch/paper textures found under {directory}")
    return assets
