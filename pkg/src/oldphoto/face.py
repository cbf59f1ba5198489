"""Face enhancement: a coarse-to-fine generator modulated by the degraded face.

The generator starts from the degraded face downsampled to 8x8 and doubles
the resolution per stage. At each injection scale the activations are
normalised per channel and rescaled/shifted by maps predicted from the face
resized to that scale. Results are colour-corrected by histogram matching and
blended back into the photo.
"""
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import param_hash
from .errors import ConfigurationError, DataError, InvalidInputError
from .images import check_image, to_signed, to_unit
from .restore.losses import feature_l1, lsgan_d_loss, lsgan_g_loss, restore_image
from .restore.networks import Discriminator, PerceptualExtractor
from .training import StageRunner, adam, frozen, scalars

SEED_SIZE = 8
NORM_EPS = 1e-5


@dataclass
class FaceCrop:
    image: np.ndarray  # (3, S, S) unit range
    box: tuple  # (x, y, w, h) in the parent photo


class ModulationParams(nn.Module):
    """Shared conv on the condition, then separate convs for scale and shift.

    The scale is parameterised as ``1 + gamma`` so zero weights give identity.
    """

    def __init__(self, channels, cond_channels=3, hidden=128):
        super().__init__()
        self.shared = nn.Sequential(nn.Conv2d(cond_channels, hidden, 3, 1, 1), nn.ReLU())
        self.gamma = nn.Conv2d(hidden, channels, 3, 1, 1)
        self.beta = nn.Conv2d(hidden, channels, 3, 1, 1)


def channel_normalize(h, eps=NORM_EPS):
    """Normalise each channel by its mean and (biased) variance over batch and space."""
    mean = h.mean(dim=(0, 2, 3), keepdim=True)
    var = h.var(dim=(0, 2, 3), unbiased=False, keepdim=True)
    return (h - mean) / torch.sqrt(var + eps)


def spade_modulate(h, cond, params, eps=NORM_EPS):
    if h.shape[-2:] != cond.shape[-2:]:
        raise InvalidInputError(
            f"condition {tuple(cond.shape[-2:])} does not match activations {tuple(h.shape[-2:])}")
    act = params.shared(cond)
    return channel_normalize(h, eps) * (1.0 + params.gamma(act)) + params.beta(act)


class ProgressiveGenerator(nn.Module):
    def __init__(self, size=256, width=512, hidden=128, scales=None, min_width=16):
        super().__init__()
        n_stages = int(round(np.log2(size / SEED_SIZE)))
        if SEED_SIZE * 2 ** n_stages != size or n_stages < 1:
            raise InvalidInputError(f"face size {size} must be 8 times a power of two")
        self.size = size
        all_scales = [SEED_SIZE * 2 ** (i + 1) for i in range(n_stages)]
        self.scales = tuple(all_scales if scales is None else scales)
        bad = set(self.scales) - set(all_scales)
        if bad:
            raise InvalidInputError(f"injection scales {sorted(bad)} are not generator scales")
        widths = [max(width // 2 ** i, min_width) for i in range(n_stages + 1)]
        self.stem = nn.Sequential(nn.Conv2d(3, widths[0], 3, 1, 1), nn.LeakyReLU(0.2))
        self.ups = nn.ModuleList(nn.ConvTranspose2d(widths[i], widths[i + 1], 4, 2, 1)
                                 for i in range(n_stages))
        self.convs = nn.ModuleList(nn.Conv2d(widths[i + 1], widths[i + 1], 3, 1, 1)
                                   for i in range(n_stages))
        self.mods = nn.ModuleDict({
            str(s): ModulationParams(widths[i + 1], 3, hidden)
            for i, s in enumerate(all_scales) if s in self.scales
        })
        self.head = nn.Sequential(nn.Conv2d(widths[-1], 3, 3, 1, 1), nn.Tanh())

    def forward(self, z, cond):
        x = self.stem(z)
        for up, conv in zip(self.ups, self.convs):
            x = up(x)
            key = str(x.shape[-1])
            if key in self.mods:
                c = F.interpolate(cond, size=x.shape[-2:], mode="area")
                x = spade_modulate(x, c, self.mods[key])
            else:
                x = channel_normalize(x)
            x = conv(F.leaky_relu(x, 0.2))
        return self.head(F.leaky_relu(x, 0.2))


def build_face_nets(cfg, seed=None):
    torch.manual_seed(cfg.seed if seed is None else seed)
    gen = ProgressiveGenerator(cfg.face_size, cfg.face_width, cfg.face_hidden, cfg.scales())
    disc = Discriminator(3, cfg.ndf, cfg.d_layers)
    perc = PerceptualExtractor(3, cfg.perceptual_width, cfg.perceptual_layers)
    if cfg.perceptual_weights:
        perc.load_weights(cfg.perceptual_weights)
    return gen, disc, perc


def face_generate(gen, r_f):
    """Enhance a signed-range degraded face ``(3, S, S)`` or batch thereof."""
    r_f = torch.as_tensor(r_f, dtype=torch.float32)
    squeeze = r_f.dim() == 3
    if squeeze:
        r_f = r_f.unsqueeze(0)
    if r_f.dim() != 4 or r_f.shape[1] != 3 or tuple(r_f.shape[-2:]) != (gen.size, gen.size):
        raise InvalidInputError(f"face crop must be 3x{gen.size}x{gen.size}, got {tuple(r_f.shape)}")
    z = F.interpolate(r_f, size=(SEED_SIZE, SEED_SIZE), mode="area")
    out = gen(z, r_f)
    return out[0] if squeeze else out


def face_losses(gen_out, r_c, disc, perceptual, gan_weight=1.0):
    if gen_out.shape != r_c.shape:
        raise InvalidInputError("generated and clean faces differ in shape")
    with frozen(disc):
        gan = lsgan_g_loss(disc(gen_out))
    comps = {"perc": feature_l1(perceptual.features(gen_out), perceptual.features(r_c)), "gan": gan}
    return comps["perc"] + gan_weight * comps["gan"], comps


def face_d_loss(disc, r_c, fake):
    return lsgan_d_loss(disc(r_c), disc(fake.detach()))


# --------------------------------------------------------------------------
# colour correction and compositing


def histogram_match(src, ref):
    """Per-channel 256-bin histogram specification of ``src`` onto ``ref``.

    Each source level maps to the lowest reference level whose CDF reaches the
    source CDF, so the remap is monotone.
    """
    src = check_image(src, "src")
    ref = check_image(ref, "ref")
    if src.shape[0] != ref.shape[0]:
        raise InvalidInputError("source and reference channel counts differ")
    qs = np.clip(np.rint(src.astype(np.float64) * 255), 0, 255).astype(np.int64)
    qr = np.clip(np.rint(ref.astype(np.float64) * 255), 0, 255).astype(np.int64)
    n_s, n_r = qs[0].size, qr[0].size
    out = np.empty(src.shape, dtype=np.float32)
    for c in range(src.shape[0]):
        cdf_s = np.cumsum(np.bincount(qs[c].ravel(), minlength=256))
        cdf_r = np.cumsum(np.bincount(qr[c].ravel(), minlength=256))
        # compare cdf_s / n_s against cdf_r / n_r in exact integer arithmetic
        lut = np.searchsorted(cdf_r * n_s, cdf_s * n_r, side="left").clip(0, 255)
        out[c] = lut[qs[c]] / 255.0
    return out


def feather_alpha(h, w, feather):
    """Linear ramp from 0 at the box edge to 1 at ``feather`` pixels inside."""
    if feather <= 0:
        return np.ones((h, w))
    dy = np.minimum(np.arange(h) + 0.5, h - np.arange(h) - 0.5)
    dx = np.minimum(np.arange(w) + 0.5, w - np.arange(w) - 0.5)
    d = np.minimum(dy[:, None], dx[None, :])
    return np.clip(d / feather, 0.0, 1.0)


def _check_box(box, shape):
    x, y, w, h = (int(v) for v in box)
    _, H, W = shape
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise InvalidInputError(f"box {box} is outside the {H}x{W} photo")
    return x, y, w, h


def _resize(img, w, h):
    if img.shape[1:] == (h, w):
        return img.astype(np.float64)
    hwc = np.ascontiguousarray(img.transpose(1, 2, 0).astype(np.float32))
    out = cv2.resize(hwc, (w, h), interpolation=cv2.INTER_AREA if w < img.shape[2] else cv2.INTER_LINEAR)
    if out.ndim == 2:
        out = out[:, :, None]
    return out.transpose(2, 0, 1).astype(np.float64)


def crop_face(photo, box, size):
    photo = check_image(photo, "photo")
    x, y, w, h = _check_box(box, photo.shape)
    region = photo[:, y:y + h, x:x + w]
    return FaceCrop(np.clip(_resize(region, size, size), 0, 1).astype(np.float32), (x, y, w, h))


def blend_face(photo, enhanced, feather=16):
    """Paste ``enhanced`` (a :class:`FaceCrop`) back with a feathered border.

    Pixels outside the box are returned bit-identical.
    """
    photo = check_image(photo, "photo")
    x, y, w, h = _check_box(enhanced.box, photo.shape)
    patch = _resize(check_image(enhanced.image, "enhanced"), w, h)
    region = photo[:, y:y + h, x:x + w].astype(np.float64)
    alpha = feather_alpha(h, w, feather)[None]
    out = photo.copy()
    out[:, y:y + h, x:x + w] = np.clip(region + alpha * (patch - region), 0, 1).astype(np.float32)
    return out


def read_boxes(path):
    """Sidecar face boxes: one ``x y w h`` line per face."""
    boxes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 'x y w h'")
        boxes.append(tuple(int(float(p)) for p in parts))
    return boxes


@torch.no_grad()
def enhance_faces(photo, boxes, gen, feather=16, debug=None):
    """Enhance each boxed face of a unit-range photo and blend it back.

    ``debug``, if a list, receives the pre-blend enhanced crops.
    """
    gen.eval()
    out = check_image(photo, "photo").copy()
    for box in boxes:
        crop = crop_face(out, box, gen.size)
        enhanced = to_unit(face_generate(gen, to_signed(torch.from_numpy(crop.image))))
        enhanced = np.clip(enhanced.numpy(), 0, 1)
        matched = histogram_match(enhanced, crop.image)
        if debug is not None:
            debug.append(matched)
        out = blend_face(out, FaceCrop(matched, crop.box), feather)
    return out


# --------------------------------------------------------------------------
# training


def prepare_face_inputs(clean, degrade_fn, restoration=None, joint=True):
    """Degrade clean unit-range faces and, in joint mode, pass them through restoration.

    Returns signed-range ``(inputs, targets)`` tensors.
    """
    clean = np.asarray(clean, dtype=np.float32)
    degraded = np.stack([degrade_fn(img, i) for i, img in enumerate(clean)])
    inputs = to_signed(torch.from_numpy(degraded))
    if joint:
        if restoration is None or restoration.mapping is None:
            raise ConfigurationError("joint face training needs the restoration checkpoints (vae1, vae2, mapping)")
        with frozen(restoration.vae1, restoration.vae2, restoration.mapping):
            inputs = torch.cat([restore_image(inputs[i:i + 1], restoration)
                                for i in range(len(inputs))])
    return inputs, to_signed(torch.from_numpy(clean))


def train_face(clean, cfg, degrade_fn, restoration=None, joint=True, nets=None,
               log_path=None, ckpt_path=None, resume=None):
    """Alternating critic/generator updates on (degraded or restored face, clean face) pairs.

    Restoration networks are only read; a hash check guards against mutation.
    Returns ``((gen, disc, perceptual), log)``.
    """
    if len(clean) == 0:
        raise ConfigurationError("face dataset is empty")
    before = param_hash(restoration.vae1, restoration.vae2, restoration.mapping) \
        if restoration is not None and restoration.mapping is not None else None
    inputs, targets = prepare_face_inputs(clean, degrade_fn, restoration, joint)
    gen, disc, perc = nets or build_face_nets(cfg)
    g_opt = adam(gen.parameters(), cfg)
    d_opt = adam(disc.parameters(), cfg)
    runner = StageRunner("face", cfg, {"face_gen": gen, "face_disc": disc}, {"g": g_opt, "d": d_opt},
                         {"f": len(inputs)}, log_path, ckpt_path, resume)
    gen.train()

    def body(idx):
        r_f, r_c = inputs[idx["f"]], targets[idx["f"]]
        fake = face_generate(gen, r_f)
        d_opt.zero_grad()
        d_loss = face_d_loss(disc, r_c, fake)
        d_loss.backward()
        d_opt.step()

        g_opt.zero_grad()
        total, comps = face_losses(fake, r_c, disc, perc, cfg.face_gan_weight)
        total.backward()
        g_opt.step()
        return scalars(comps) | {"d": d_loss.item()}

    log = runner.run(body)
    gen.eval()
    if before is not None and param_hash(restoration.vae1, restoration.vae2, restoration.mapping) != before:
        raise RuntimeError("face training modified the restoration networks")
    return (gen, disc, perc), log
