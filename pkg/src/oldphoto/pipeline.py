"""Directory-level workflows behind the command line: synthesis, staged training,
restoration of whole photos and the latent-gap diagnostic.
"""
import hashlib
import json
import sys
import zlib
from pathlib import Path

import cv2
import numpy as np
import torch

from . import degrade
from .checkpoint import apply_checkpoint, load_checkpoint
from .config import from_dict
from .detect import build_detector, predict_mask, train_detector
from .errors import ConfigurationError, DataError
from .face import build_face_nets, enhance_faces, read_boxes, train_face
from .images import list_images, read_image, read_mask, to_signed, to_unit, write_image, write_mask
from .metrics import sliced_wasserstein
from .restore.losses import restore_image
from .restore.networks import build_nets
from .restore.train import train_stage2, train_vae1, train_vae2

STAGES = ("vae1", "vae2", "mapping", "detector", "face")
STAGE_MODULES = {
    "vae1": ("vae1", "d_vae1", "d_latent"),
    "vae2": ("vae2", "d_vae2"),
    "mapping": ("mapping", "d_mapping"),
}


def item_seed(seed, name, stream=0):
    """A per-file seed that depends on the file name, not its position in a listing."""
    state = np.random.SeedSequence([int(seed), zlib.crc32(name.encode()), stream]).generate_state(1)
    return int(state[0])


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# synthesis


def structured_config(cfg):
    return degrade.StructuredConfig(n_scratch=(cfg.n_scratch_min, cfg.n_scratch_max), hole_prob=cfg.hole_prob)


def synth_assets(cfg, seed):
    if cfg.asset_dir:
        return degrade.load_assets(cfg.asset_dir)
    return degrade.procedural_assets(seed)


def degrade_image(img, cfg, assets, seed_structured, seed_recipe):
    """Structured defects first, then the unstructured recipe on top.

    Returns ``(degraded, mask, recipe)``; either part may be disabled by config.
    """
    mask = np.zeros(img.shape[1:], dtype=np.uint8)
    out = img
    if cfg.structured:
        out, mask = degrade.synthesize_structured(out, assets, seed_structured, structured_config(cfg))
    recipe = degrade.make_recipe(seed_recipe, cfg.drop_prob)
    if cfg.unstructured:
        out = degrade.synthesize_unstructured(out, recipe)
    else:
        recipe = degrade.DegradationRecipe(seed_recipe, [], cfg.drop_prob)
    return out, mask, recipe


def synth_dir(in_dir, out_dir, cfg, seed=None):
    """Degrade every image of ``in_dir`` into ``out_dir/{clean,degraded,recipes}``.

    Writes and returns a manifest with sha256 checksums of every file.
    """
    seed = cfg.seed if seed is None else seed
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    if not in_dir.is_dir():
        raise DataError(f"input directory not found: {in_dir}")
    paths = list_images(in_dir)
    if not paths:
        raise DataError(f"no images in {in_dir}")
    assets = synth_assets(cfg, seed) if cfg.structured else []
    entries, skipped = [], []
    for path in paths:
        try:
            img = read_image(path)
        except DataError as exc:
            print(f"warning: skipping {path.name}: {exc}", file=sys.stderr)
            skipped.append(path.name)
            continue
        name = path.stem + ".png"
        degraded, mask, recipe = degrade_image(
            img, cfg, assets, item_seed(seed, path.name, 0), item_seed(seed, path.name, 1))
        files = {
            "clean": out_dir / "clean" / name,
            "degraded": out_dir / "degraded" / name,
            "mask": out_dir / "degraded" / (path.stem + ".mask.png"),
            "recipe": out_dir / "recipes" / (path.stem + ".txt"),
        }
        write_image(files["clean"], img)
        write_image(files["degraded"], degraded)
        write_mask(files["mask"], mask)
        files["recipe"].parent.mkdir(parents=True, exist_ok=True)
        files["recipe"].write_text(recipe.to_text())
        entry = {k: str(v.relative_to(out_dir)) for k, v in files.items()}
        entry["sha256"] = {k: sha256_file(v) for k, v in files.items()}
        entry["mask_pixels"] = int(mask.sum())
        entries.append(entry)
    manifest = {"seed": int(seed), "count": len(entries), "skipped": len(skipped),
                "skipped_files": skipped, "entries": entries}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# --------------------------------------------------------------------------
# datasets


def fit_square(img, size, interpolation=cv2.INTER_AREA):
    """Resize so the short side is ``size`` and centre-crop to ``size x size``."""
    _, h, w = img.shape
    scale = size / min(h, w)
    if (h, w) != (size, size):
        nh, nw = max(size, round(h * scale)), max(size, round(w * scale))
        hwc = cv2.resize(np.ascontiguousarray(img.transpose(1, 2, 0)), (nw, nh), interpolation=interpolation)
        img = hwc.reshape(nh, nw, -1).transpose(2, 0, 1)
        top, left = (nh - size) // 2, (nw - size) // 2
        img = img[:, top:top + size, left:left + size]
    return np.ascontiguousarray(img)


def load_stack(paths, size):
    if not paths:
        return np.zeros((0, 3, size, size), dtype=np.float32)
    return np.stack([fit_square(read_image(p), size) for p in paths]).astype(np.float32)


def load_masks(paths, size):
    masks = [fit_square(read_mask(p)[None].astype(np.float32), size, cv2.INTER_NEAREST) for p in paths]
    return np.stack(masks).astype(np.float32)


def _images(directory, what):
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigurationError(f"{what} directory not found: {directory}")
    paths = list_images(directory)
    if not paths:
        raise ConfigurationError(f"{what} directory is empty: {directory}")
    return paths


def synthetic_pairs(cfg):
    """Degraded/clean/mask stacks from a directory written by :func:`synth_dir`."""
    root = Path(cfg.synth_dir)
    degraded = _images(root / "degraded", "synthetic degraded")
    clean = [root / "clean" / p.name for p in degraded]
    masks = [p.with_name(p.stem + ".mask.png") for p in degraded]
    missing = [str(p) for p in clean + masks if not p.is_file()]
    if missing:
        raise DataError("synthetic set is incomplete; missing:\n" + "\n".join(missing))
    return (to_signed(load_stack(degraded, cfg.crop)), to_signed(load_stack(clean, cfg.crop)),
            load_masks(masks, cfg.crop))


def annotated_real(cfg):
    """Real photos that come with a ``name.mask.png`` annotation."""
    root = Path(cfg.real_dir)
    if not root.is_dir():
        return None, None
    paths = [p for p in list_images(root) if p.with_name(p.stem + ".mask.png").is_file()]
    if not paths:
        return None, None
    return (to_signed(load_stack(paths, cfg.crop)),
            load_masks([p.with_name(p.stem + ".mask.png") for p in paths], cfg.crop))


# --------------------------------------------------------------------------
# checkpoints


def stage_path(ckpt_dir, stage):
    return Path(ckpt_dir) / f"{stage}.pt"


def require_stage(ckpt_dir, stage, needed_by):
    path = stage_path(ckpt_dir, stage)
    if not path.is_file():
        raise ConfigurationError(
            f"stage '{needed_by}' needs the '{stage}' checkpoint ({path} is missing); "
            f"run 'train --stage {stage}' first")
    return load_checkpoint(path)


def load_restoration(ckpt_dir, cfg=None, needed_by="restore", stages=("vae1", "vae2", "mapping")):
    """Rebuild the restoration nets with the architecture echoed in the VAE checkpoint."""
    payloads = {s: require_stage(ckpt_dir, s, needed_by) for s in stages}
    arch_cfg = from_dict(payloads[stages[0]]["config"])
    nets = build_nets(arch_cfg.restore_arch(), arch_cfg.seed)
    perceptual = (cfg or arch_cfg).perceptual_weights
    if perceptual:
        nets.perceptual.load_weights(perceptual)
    for stage, payload in payloads.items():
        apply_checkpoint(payload, {n: getattr(nets, n) for n in STAGE_MODULES[stage]})
    for module in (nets.vae1, nets.vae2, nets.mapping):
        module.eval()
    return nets, arch_cfg


def load_detector(ckpt_dir, needed_by="restore"):
    fine = stage_path(ckpt_dir, "detector_finetune")
    payload = load_checkpoint(fine) if fine.is_file() else require_stage(ckpt_dir, "detector", needed_by)
    unet = build_detector(from_dict(payload["config"]))
    apply_checkpoint(payload, {"detector": unet})
    return unet.eval()


def load_face(ckpt_dir, needed_by="restore"):
    payload = require_stage(ckpt_dir, "face", needed_by)
    face_cfg = from_dict(payload["config"])
    gen, _, _ = build_face_nets(face_cfg)
    apply_checkpoint(payload, {"face_gen": gen})
    return gen.eval(), face_cfg


# --------------------------------------------------------------------------
# training


def face_degrade_fn(cfg):
    def fn(img, i):
        return degrade.synthesize_unstructured(img, degrade.make_recipe(item_seed(cfg.seed, f"face{i}"), cfg.drop_prob))
    return fn


def train_stage(stage, cfg, resume=False):
    """Train one stage from the directories named in ``cfg``; returns the loss log(s)."""
    if stage not in STAGES:
        raise ConfigurationError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt = stage_path(ckpt_dir, stage)
    log_path = ckpt_dir / f"{stage}_loss.csv"
    resume_from = None
    if resume:
        if not ckpt.is_file():
            raise ConfigurationError(f"cannot resume '{stage}': {ckpt} is missing")
        resume_from = ckpt

    if stage in ("vae1", "vae2"):
        nets = build_nets(cfg.restore_arch(), cfg.seed)
        if cfg.perceptual_weights:
            nets.perceptual.load_weights(cfg.perceptual_weights)
        if stage == "vae1":
            real = to_signed(load_stack(_images(cfg.real_dir, "real-photo"), cfg.crop))
            synth, _, _ = synthetic_pairs(cfg)
            return train_vae1(real, synth, cfg, nets, log_path, ckpt, resume_from)[1]
        clean = to_signed(load_stack(_images(cfg.clean_dir, "clean"), cfg.crop))
        return train_vae2(clean, cfg, nets, log_path, ckpt, resume_from)[1]

    if stage == "mapping":
        nets, _ = load_restoration(ckpt_dir, cfg, "mapping", ("vae1", "vae2"))
        synth, clean, masks = synthetic_pairs(cfg)
        return train_stage2(synth, clean, masks, nets, cfg, log_path, ckpt, resume_from)[1]

    if stage == "detector":
        synth, _, masks = synthetic_pairs(cfg)
        real, real_masks = annotated_real(cfg)
        return train_detector(synth, masks, cfg, real, real_masks, None, log_path, ckpt, resume_from)[1]

    restoration = None
    if cfg.joint_face:
        restoration, _ = load_restoration(ckpt_dir, cfg, "face")
    faces = load_stack(_images(cfg.face_dir, "face"), cfg.face_size)
    return train_face(faces, cfg, face_degrade_fn(cfg), restoration, cfg.joint_face, None,
                      log_path, ckpt, resume_from)[1]


# --------------------------------------------------------------------------
# inference


def tile_starts(length, tile, overlap):
    if length <= tile:
        return [0]
    step = tile - overlap
    starts = list(range(0, length - tile, step))
    return starts + [length - tile]


def tile_weight(size, overlap):
    """1-D blend weight: linear ramp over ``overlap`` pixels at each end."""
    if overlap <= 0:
        return np.ones(size)
    i = np.arange(size)
    return np.clip(np.minimum(i + 0.5, size - i - 0.5) / overlap, 1e-3, 1.0)


def restore_array(img, nets, mask=None, tile=256, overlap=32):
    """Restore a unit-range ``(3, H, W)`` photo of any size.

    The photo is reflect-padded to a multiple of 4; photos larger than ``tile``
    are processed in overlapping tiles blended with linear ramps.
    """
    _, h, w = img.shape
    ph, pw = (-h) % 4, (-w) % 4
    mode = "reflect" if min(h, w) > max(ph, pw) else "edge"
    padded = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode=mode)
    m = np.zeros(padded.shape[1:], dtype=np.float32)
    if mask is not None:
        m[:h, :w] = mask
    H, W = padded.shape[1:]
    tile = max(4, tile - tile % 4)
    ys, xs = tile_starts(H, tile, overlap), tile_starts(W, tile, overlap)
    acc = np.zeros(padded.shape, dtype=np.float64)
    norm = np.zeros((H, W), dtype=np.float64)
    for y in ys:
        for x in xs:
            th, tw = min(tile, H), min(tile, W)
            patch = torch.from_numpy(to_signed(padded[:, y:y + th, x:x + tw])).float()
            mpatch = torch.from_numpy(m[y:y + th, x:x + tw])[None, None]
            out = to_unit(restore_image(patch, nets, mpatch).numpy().astype(np.float64))
            wgt = np.outer(tile_weight(th, overlap if len(ys) > 1 else 0),
                           tile_weight(tw, overlap if len(xs) > 1 else 0))
            acc[:, y:y + th, x:x + tw] += out * wgt
            norm[y:y + th, x:x + tw] += wgt
    out = acc / norm
    return np.clip(out[:, :h, :w], 0, 1).astype(np.float32)


class Restorer:
    """Loads whatever checkpoints a restore run needs, once."""

    def __init__(self, cfg, with_scratch=False, faces=False):
        self.cfg = cfg
        self.nets, _ = load_restoration(cfg.checkpoint_dir, cfg)
        self.detector = load_detector(cfg.checkpoint_dir) if with_scratch else None
        self.face_gen = load_face(cfg.checkpoint_dir)[0] if faces else None

    def __call__(self, img, mask=None, boxes=None, debug=None):
        """Restore one unit-range photo; ``debug`` (a dict) collects intermediates."""
        if mask is None and self.detector is not None:
            _, mask = predict_mask(self.detector, to_signed(torch.from_numpy(img)), self.cfg.threshold)
            mask = mask.numpy()
        if debug is not None and mask is not None:
            debug["mask"] = mask.astype(np.uint8)
        out = restore_array(img, self.nets, mask, self.cfg.tile, self.cfg.tile_overlap)
        if boxes:
            if self.face_gen is None:
                raise ConfigurationError("face boxes given but no face checkpoint loaded")
            crops = [] if debug is not None else None
            out = enhance_faces(out, boxes, self.face_gen, self.cfg.feather, crops)
            if debug is not None:
                debug["faces"] = crops
        return out


def restore_paths(inputs, output, cfg, with_scratch=False, mask_path=None, boxes_path=None,
                  debug_dir=None):
    """Restore one file or every image of a directory.

    For directories, ``name.mask.png`` and ``name.boxes.txt`` sidecars next to
    each image are picked up automatically.
    """
    inputs, output = Path(inputs), Path(output)
    if inputs.is_dir():
        jobs = [(p, output / (p.stem + ".png"), p.with_name(p.stem + ".mask.png"),
                 p.with_name(p.stem + ".boxes.txt")) for p in list_images(inputs)]
        if not jobs:
            raise DataError(f"no images in {inputs}")
    elif inputs.is_file():
        jobs = [(inputs, output, Path(mask_path) if mask_path else None,
                 Path(boxes_path) if boxes_path else None)]
        for side in jobs[0][2:]:
            if side is not None and not side.is_file():
                raise DataError(f"sidecar file not found: {side}")
    else:
        raise DataError(f"input not found: {inputs}")
    any_faces = any(b is not None and b.is_file() for *_, b in jobs)
    restorer = Restorer(cfg, with_scratch, any_faces)
    written = []
    for src, dst, mpath, bpath in jobs:
        img = read_image(src)
        mask = read_mask(mpath) if mpath is not None and mpath.is_file() else None
        boxes = read_boxes(bpath) if bpath is not None and bpath.is_file() else None
        debug = {} if debug_dir else None
        out = restorer(img, mask, boxes, debug)
        write_image(dst, out)
        written.append(dst)
        if debug_dir:
            ddir = Path(debug_dir)
            if "mask" in debug:
                write_mask(ddir / f"{src.stem}.mask.png", debug["mask"])
            for i, face in enumerate(debug.get("faces") or []):
                write_image(ddir / f"{src.stem}.face{i}.png", face)
    return written


# --------------------------------------------------------------------------
# diagnostics


@torch.no_grad()
def encode_dir(directory, nets, size, which="vae1"):
    """Posterior means for every image of a directory, one row per image."""
    imgs = to_signed(load_stack(_images(directory, "latent-gap"), size))
    enc = getattr(nets, which).encoder
    return np.stack([enc(torch.from_numpy(x)[None])[0][0].reshape(-1).numpy() for x in imgs])


def latent_gap(dir_a, dir_b, cfg, which="vae1"):
    payload = require_stage(cfg.checkpoint_dir, which, "latent-gap")
    arch_cfg = from_dict(payload["config"])
    nets = build_nets(arch_cfg.restore_arch(), arch_cfg.seed)
    apply_checkpoint(payload, {which: getattr(nets, which)})
    getattr(nets, which).eval()
    a = encode_dir(dir_a, nets, cfg.crop, which)
    b = encode_dir(dir_b, nets, cfg.crop, which)
    dist = sliced_wasserstein(a, b, cfg.n_projections, cfg.seed)
    return {"distance": dist, "n_a": len(a), "n_b": len(b), "dim": int(a.shape[1]),
            "n_projections": cfg.n_projections, "encoder": which}
