"""Scratch and hole segmentation: a U-Net trained with class-weighted CE plus focal loss."""
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, InvalidInputError, UndefinedMetricError
from .training import StageRunner, adam, scalars

EPS = 1e-7
ALPHA_CLAMP = 1e-6


def _double_conv(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, 1, 1), nn.BatchNorm2d(cout), nn.LeakyReLU(0.2),
        nn.Conv2d(cout, cout, 3, 1, 1), nn.BatchNorm2d(cout), nn.LeakyReLU(0.2),
    )


class UNet(nn.Module):
    """Encoder/decoder with skip connections; returns one-channel logits.

    Inputs of any size are reflect-padded to a multiple of ``2**depth`` and the
    output is cropped back, so spatial dims always match the input.
    """

    def __init__(self, in_channels=3, base=32, depth=4):
        super().__init__()
        self.depth = depth
        widths = [base * 2 ** i for i in range(depth + 1)]
        self.down = nn.ModuleList([_double_conv(in_channels, widths[0])])
        self.down.extend(_double_conv(widths[i], widths[i + 1]) for i in range(depth))
        self.up = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], 2, 2) for i in reversed(range(depth)))
        self.merge = nn.ModuleList(_double_conv(2 * widths[i], widths[i]) for i in reversed(range(depth)))
        self.head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        k = 2 ** self.depth
        ph, pw = (-h) % k, (-w) % k
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect" if min(h, w) > max(ph, pw) else "replicate")
        skips = []
        for i, block in enumerate(self.down):
            x = block(x if i == 0 else F.max_pool2d(x, 2))
            skips.append(x)
        x = skips.pop()
        for up, merge in zip(self.up, self.merge):
            x = merge(torch.cat([up(x), skips.pop()], 1))
        return self.head(x)[..., :h, :w]


def _per_sample(t):
    t = torch.as_tensor(t)
    if t.dim() <= 2:
        return t.reshape(1, -1)
    return t.reshape(t.shape[0], -1)


def _alpha_rows(flat):
    frac = (flat == 1).sum(1).double() / flat.shape[1]
    return frac.clamp(ALPHA_CLAMP, 1.0 - ALPHA_CLAMP)


def alpha_weight(y):
    """Fraction of positive pixels per sample, clamped away from 0 and 1."""
    frac = _alpha_rows(_per_sample(y))
    return frac[0] if frac.numel() == 1 else frac


def weighted_ce(pred, y, invert_alpha=False, eps=EPS):
    """Class-weighted binary cross-entropy, mean over pixels then over the batch.

    The positive term is weighted by the positive fraction itself; with
    ``invert_alpha`` it is weighted by the negative fraction instead.
    """
    p = _per_sample(pred)
    t = _per_sample(y).to(p.dtype)
    if p.shape != t.shape:
        raise InvalidInputError(f"prediction {tuple(p.shape)} and target {tuple(t.shape)} differ")
    a = _alpha_rows(t).to(p.dtype).reshape(-1, 1)
    if invert_alpha:
        a = 1.0 - a
    p = p.clamp(eps, 1.0 - eps)
    loss = -(a * t * torch.log(p) + (1.0 - a) * (1.0 - t) * torch.log(1.0 - p))
    return loss.mean(1).mean()


def focal_loss(pred, y, gamma=0.2, eps=EPS):
    if gamma < 0:
        raise InvalidInputError(f"focal gamma must be >= 0, got {gamma}")
    p = _per_sample(pred)
    t = _per_sample(y).to(p.dtype)
    if p.shape != t.shape:
        raise InvalidInputError(f"prediction {tuple(p.shape)} and target {tuple(t.shape)} differ")
    p = p.clamp(eps, 1.0 - eps)
    pt = torch.where(t == 1, p, 1.0 - p)
    return (-(1.0 - pt) ** gamma * torch.log(pt)).mean(1).mean()


def detection_loss(pred, y, gamma=0.2, beta=10.0, invert_alpha=False):
    comps = {"ce": weighted_ce(pred, y, invert_alpha), "fl": focal_loss(pred, y, gamma)}
    return comps["ce"] + beta * comps["fl"], comps


@torch.no_grad()
def predict_mask(unet, img, threshold=0.5):
    """Probabilities and the thresholded mask (``prob > threshold``) for a signed-range image."""
    if unet is None:
        raise ConfigurationError("no trained detector available")
    img = torch.as_tensor(img, dtype=torch.float32)
    squeeze = img.dim() == 3
    if squeeze:
        img = img.unsqueeze(0)
    was_training = unet.training
    unet.eval()
    try:
        prob = torch.sigmoid(unet(img))
    finally:
        unet.train(was_training)
    mask = (prob > threshold).to(torch.uint8)
    if squeeze:
        return prob[0, 0], mask[0, 0]
    return prob, mask


def roc_auc(probs, gts):
    """Pixel-level ROC over every distinct score, AUC by the trapezoid rule.

    Returns ``((fpr, tpr, thresholds), auc)``.
    """
    if len(probs) != len(gts):
        raise InvalidInputError("probability and ground-truth lists differ in length")
    scores = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in probs])
    labels = np.concatenate([np.asarray(g).ravel() for g in gts]).astype(bool)
    if scores.shape != labels.shape:
        raise InvalidInputError("probability and ground-truth pixel counts differ")
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC is undefined when ground truth has a single class")
    order = np.argsort(-scores, kind="mergesort")
    scores, labels = scores[order], labels[order]
    last = np.r_[np.nonzero(np.diff(scores))[0], scores.size - 1]
    tps = np.cumsum(labels)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, scores[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return (fpr, tpr, thresholds), auc


def build_detector(cfg, seed=None):
    torch.manual_seed(cfg.seed if seed is None else seed)
    return UNet(3, cfg.unet_base, cfg.unet_depth)


def _pairs(images, masks):
    images = torch.as_tensor(images, dtype=torch.float32)
    masks = torch.as_tensor(masks, dtype=torch.float32)
    if masks.dim() == 3:
        masks = masks.unsqueeze(1)
    if len(images) == 0 or len(images) != len(masks):
        raise ConfigurationError("detector data needs equally many images and masks")
    return torch.cat([images, masks], 1)


def train_detector(synth_images, synth_masks, cfg, real_images=None, real_masks=None,
                   unet=None, log_path=None, ckpt_path=None, resume=None):
    """Pretrain on synthetic pairs, then finetune on annotated real pairs when given.

    The finetune phase runs for half the pretraining step budget.
    Returns ``(unet, logs)`` where ``logs`` holds one :class:`LossLog` per phase.
    """
    synth = _pairs(synth_images, synth_masks)
    unet = unet or build_detector(cfg)
    phases = [("detector", synth, cfg)]
    if real_images is not None and len(real_images):
        real = _pairs(real_images, real_masks)
        budget = cfg.max_steps or cfg.epochs * max(1, len(synth) // min(cfg.batch_size, len(synth)))
        phases.append(("detector_finetune", real, cfg.replace(max_steps=max(1, budget // 2))))
    logs = []
    for stage, data, phase_cfg in phases:
        opt = adam(unet.parameters(), phase_cfg)
        path = ckpt_path if stage == "detector" or ckpt_path is None else \
            str(ckpt_path).replace(".pt", "_finetune.pt")
        log = log_path if stage == "detector" or log_path is None else \
            str(log_path).replace(".csv", "_finetune.csv")
        runner = StageRunner(stage, phase_cfg, {"detector": unet}, {"g": opt}, {"s": len(data)},
                             log, path, resume if stage == "detector" else None)
        unet.train()

        def body(idx, data=data, runner=runner, opt=opt, cfg=phase_cfg):
            batch = runner.crop(data[idx["s"]])
            img, y = batch[:, :3], batch[:, 3:]
            opt.zero_grad()
            total, comps = detection_loss(torch.sigmoid(unet(img)), y, cfg.gamma, cfg.beta_fl,
                                          cfg.invert_alpha)
            total.backward()
            opt.step()
            return scalars(comps) | {"total": total.item()}

        logs.append(runner.run(body))
    unet.eval()
    return unet, logs
