"""Image quality metrics and the latent-gap diagnostic."""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from skimage.metrics import structural_similarity

from .errors import DataError, InvalidInputError
from .images import list_images, read_image

PSNR_CAP = 99.0


def psnr(pred, gt, max_val=1.0):
    """Peak signal-to-noise ratio in dB, capped at 99 for identical images."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = np.mean((pred - gt) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(max_val ** 2 / mse)))


def ssim(pred, gt, data_range=1.0):
    """Mean SSIM with an 11-tap Gaussian window (sigma 1.5), K1=0.01, K2=0.03.

    Channel-first colour images are averaged over channels.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if min(pred.shape[-2:]) < 11:
        raise InvalidInputError("SSIM needs images of at least 11x11 pixels")
    kw = dict(data_range=data_range, gaussian_weights=True, sigma=1.5,
              use_sample_covariance=False, K1=0.01, K2=0.03)
    if pred.ndim == 3:
        return float(structural_similarity(pred, gt, channel_axis=0, **kw))
    return float(structural_similarity(pred, gt, **kw))


def wasserstein_1d(a, b):
    """Exact 1-D W1 between two empirical distributions, via the integrated CDF gap."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == len(b):
        return float(np.mean(np.abs(a - b)))
    grid = np.concatenate([a, b])
    grid.sort(kind="mergesort")
    cdf_a = np.searchsorted(a, grid[:-1], side="right") / len(a)
    cdf_b = np.searchsorted(b, grid[:-1], side="right") / len(b)
    return float(np.sum(np.abs(cdf_a - cdf_b) * np.diff(grid)))


def random_projections(dim, n, seed=0):
    """``n`` unit vectors drawn uniformly from the sphere in ``dim`` dimensions."""
    u = np.random.default_rng(seed).standard_normal((n, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def sliced_wasserstein(a, b, n_projections=128, seed=0, projections=None):
    """Mean 1-D W1 of the two sample sets projected onto random directions.

    ``a`` and ``b`` are ``(n, d)`` arrays (or stacks of latents, flattened per sample).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("latent sets must be nonempty")
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    if projections is None:
        projections = random_projections(a.shape[1], n_projections, seed)
    pa, pb = a @ projections.T, b @ projections.T
    return float(np.mean([wasserstein_1d(pa[:, i], pb[:, i]) for i in range(len(projections))]))


@dataclass
class EvalReport:
    per_image: list = field(default_factory=list)
    mean_psnr: float = 0.0
    mean_ssim: float = 0.0
    count: int = 0
    config: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evaluate_dirs(pred_dir, gt_dir, config=None):
    """PSNR/SSIM for every same-named pair in two directories."""
    pred = {p.name: p for p in list_images(pred_dir)}
    gt = {p.name: p for p in list_images(gt_dir)}
    missing = sorted((set(pred) - set(gt)) | (set(gt) - set(pred)))
    if missing:
        lines = [f"{n}: missing from {'ground truth' if n in pred else 'predictions'}" for n in missing]
        raise DataError("unpaired files:\n" + "\n".join(lines))
    if not pred:
        raise DataError(f"no images found in {pred_dir}")
    rows = []
    for name in sorted(pred):
        p, g = read_image(pred[name]), read_image(gt[name])
        if p.shape != g.shape:
            raise DataError(f"{name}: size {p.shape[1:]} differs from ground truth {g.shape[1:]}")
        rows.append({"name": name, "psnr": psnr(p, g), "ssim": ssim(p, g)})
    return EvalReport(
        per_image=rows,
        mean_psnr=float(np.mean([r["psnr"] for r in rows])),
        mean_ssim=float(np.mean([r["ssim"] for r in rows])),
        count=len(rows),
        config=dict(config or {}),
    )


def write_report(report, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(report.to_json() + "\n")
