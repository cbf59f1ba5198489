"""Desk-scale run of the whole pipeline on procedural data.

Small networks, 64x64 images, a few thousand optimiser steps in total on one
CPU core. Used by the acceptance suite and ``scripts/run_toy_pipeline.py``.
"""
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import degrade
from .checkpoint import param_hash
from .config import PipelineConfig
from .detect import predict_mask, roc_auc, train_detector
from .face import train_face
from .images import to_signed, to_unit
from .metrics import psnr
from .pipeline import degrade_image
from .restore.losses import restore_image
from .restore.networks import build_nets
from .restore.train import train_stage2, train_vae1, train_vae2
from .toy import toy_images


@dataclass
class ToyRunConfig:
    size: int = 64
    # textures drawn at image size keep strokes crisp instead of faint and wide
    asset_size: int = 64
    n_train: int = 320
    n_real: int = 48
    n_test: int = 16
    vae1_steps: int = 800
    vae2_steps: int = 1200
    mapping_steps: int = 1000
    detector_steps: int = 1000
    detector_lr: float = 1e-3
    face_steps: int = 30
    seed: int = 0
    base: PipelineConfig = field(default_factory=lambda: PipelineConfig(
        crop=64, batch_size=4, epochs=100, log_every=1, checkpoint_every=0,
        # instance norm discards per-image colour, which is most of the signal in
        # flat toy scenes
        norm="none",
        ngf=32, latent_channels=32, n_res=2, mapping_width=128, n_shared_res=2,
        ndf=32, d_layers=3, latent_d_layers=2, perceptual_width=16, perceptual_layers=3,
        unet_base=16, unet_depth=3,
        face_size=32, face_width=64, face_hidden=16,
        # KL summed over a 32x16x16 latent against a per-pixel mean L1: scaled so
        # the prior does not swamp reconstruction at this size
        kl_weight=1.0 / (3 * 64 * 64),
        n_scratch_min=1, n_scratch_max=3, hole_prob=0.3,
    ))


def _degrade_set(images, cfg, assets, seed, tint=None):
    deg, masks = [], []
    for i, img in enumerate(images):
        rs = np.random.SeedSequence([seed, i]).generate_state(2)
        out, mask, _ = degrade_image(img, cfg, assets, int(rs[0]), int(rs[1]))
        if tint is not None:
            out = np.clip(out * tint[:, None, None], 0, 1).astype(np.float32)
        deg.append(out)
        masks.append(mask)
    return np.stack(deg), np.stack(masks)[:, None].astype(np.float32)


def make_toy_data(rc):
    cfg = rc.base.replace(seed=rc.seed)
    assets = degrade.procedural_assets(rc.seed, size=rc.asset_size)
    clean = toy_images(rc.seed, rc.n_train, rc.size)
    synth, masks = _degrade_set(clean, cfg, assets, rc.seed + 1)
    # "real" photos: unseen content, different degradation draws and a warm cast
    real_clean = toy_images(rc.seed + 100, rc.n_real, rc.size)
    real, _ = _degrade_set(real_clean, cfg, assets, rc.seed + 2, tint=np.array([1.0, 0.93, 0.8]))
    test_clean = toy_images(rc.seed + 200, rc.n_test, rc.size)
    test_deg, test_masks = _degrade_set(test_clean, cfg, assets, rc.seed + 3)
    return {
        "clean": clean, "synth": synth, "masks": masks, "real": real,
        "test_clean": test_clean, "test_degraded": test_deg, "test_masks": test_masks,
    }


def run_toy_pipeline(rc=None, log=print):
    """Train every stage on toy data and measure what the acceptance suite checks."""
    rc = rc or ToyRunConfig()
    torch.manual_seed(rc.seed)
    cfg = rc.base.replace(seed=rc.seed)
    data = make_toy_data(rc)
    sig = {k: to_signed(torch.from_numpy(v)) for k, v in data.items()
           if k not in ("masks", "test_masks")}
    nets = build_nets(cfg.restore_arch(), cfg.seed)
    out = {"timings": {}}

    t0 = time.time()
    _, log1 = train_vae1(sig["real"], sig["synth"], cfg.replace(max_steps=rc.vae1_steps), nets)
    out["timings"]["vae1"] = time.time() - t0
    out["vae1_l1"] = [(a + b) / 2 for a, b in zip(log1.series("r_l1"), log1.series("x_l1"))]
    log(f"vae1: {rc.vae1_steps} steps in {out['timings']['vae1']:.0f}s")

    t0 = time.time()
    _, log2 = train_vae2(sig["clean"], cfg.replace(max_steps=rc.vae2_steps), nets)
    out["timings"]["vae2"] = time.time() - t0
    out["vae2_l1"] = log2.series("l1")
    log(f"vae2: {rc.vae2_steps} steps in {out['timings']['vae2']:.0f}s")

    out["vae_hash_before"] = param_hash(nets.vae1, nets.vae2)
    t0 = time.time()
    _, log3 = train_stage2(sig["synth"], sig["clean"], torch.from_numpy(data["masks"]), nets,
                           cfg.replace(max_steps=rc.mapping_steps))
    out["timings"]["mapping"] = time.time() - t0
    out["vae_hash_after"] = param_hash(nets.vae1, nets.vae2)
    out["latent_l1"] = log3.series("latent_l1")
    log(f"mapping: {rc.mapping_steps} steps in {out['timings']['mapping']:.0f}s")

    t0 = time.time()
    unet, dlogs = train_detector(sig["synth"], torch.from_numpy(data["masks"]),
                                 cfg.replace(max_steps=rc.detector_steps, lr=rc.detector_lr))
    out["timings"]["detector"] = time.time() - t0
    out["detector_loss"] = [a + cfg.beta_fl * b for a, b in
                            zip(dlogs[0].series("ce"), dlogs[0].series("fl"))]
    probs = [predict_mask(unet, x, cfg.threshold)[0].numpy() for x in sig["test_degraded"]]
    gts = [m[0] for m in data["test_masks"]]
    out["auc"] = roc_auc(probs, gts)[1] if any(g.any() for g in gts) else float("nan")
    log(f"detector: {rc.detector_steps} steps in {out['timings']['detector']:.0f}s, AUC {out['auc']:.3f}")

    restored, deg_psnr, res_psnr = [], [], []
    for x, gt in zip(sig["test_degraded"], data["test_clean"]):
        _, m = predict_mask(unet, x, cfg.threshold)
        y = np.clip(to_unit(restore_image(x, nets, m[None, None].float())).numpy(), 0, 1)
        restored.append(y)
        res_psnr.append(psnr(y, gt))
        deg_psnr.append(psnr(to_unit(x).numpy(), gt))
    out["restored"] = np.stack(restored)
    out["psnr_degraded"] = float(np.mean(deg_psnr))
    out["psnr_restored"] = float(np.mean(res_psnr))
    log(f"end to end: PSNR degraded {out['psnr_degraded']:.2f} dB, restored {out['psnr_restored']:.2f} dB")

    t0 = time.time()
    faces = toy_images(rc.seed + 300, 16, cfg.face_size, "face")

    def face_degrade(img, i):
        return degrade.synthesize_unstructured(img, degrade.make_recipe(rc.seed * 1000 + i))

    restoration_hash = param_hash(nets.vae1, nets.vae2, nets.mapping)
    train_face(faces, cfg.replace(max_steps=rc.face_steps, batch_size=4), face_degrade, nets, joint=True)
    out["restoration_hash_before_face"] = restoration_hash
    out["restoration_hash_after_face"] = param_hash(nets.vae1, nets.vae2, nets.mapping)
    out["timings"]["face"] = time.time() - t0
    out["data"] = data
    out["nets"] = nets
    out["detector"] = unet
    return out
