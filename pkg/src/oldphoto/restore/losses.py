"""Encoding/decoding helpers and the objectives of both training stages.

Images entering these functions are signed-range ``(B, 3, H, W)`` tensors.
"""
from dataclasses import dataclass

import torch

from ..errors import ConfigurationError, InvalidInputError
from ..partial_nonlocal import as_mask
from ..training import frozen
from .networks import downscale_mask


@dataclass
class LatentCode:
    mu: torch.Tensor
    logvar: torch.Tensor
    z: torch.Tensor


def _batched(img):
    img = torch.as_tensor(img)
    if img.dim() == 3:
        return img.unsqueeze(0), True
    if img.dim() != 4:
        raise InvalidInputError(f"expected (C,H,W) or (B,C,H,W), got {tuple(img.shape)}")
    return img, False


def reparameterize(mu, logvar, eps=None, generator=None):
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    return mu + torch.exp(0.5 * logvar) * eps


def encode(vae, img, eps=None, generator=None, sample=True):
    img, _ = _batched(img)
    h, w = img.shape[-2:]
    if h % 4 or w % 4:
        raise InvalidInputError(f"spatial size {h}x{w} must be divisible by 4")
    mu, logvar = vae.encoder(img)
    z = reparameterize(mu, logvar, eps, generator) if sample else mu
    return LatentCode(mu, logvar, z)


def decode(vae, z):
    z, squeeze = _batched(z)
    if z.shape[1] != vae.latent_channels:
        raise InvalidInputError(f"latent has {z.shape[1]} channels, expected {vae.latent_channels}")
    out = vae.generator(z)
    return out[0] if squeeze else out


def kl_divergence(mu, logvar):
    """KL to N(0, I): summed over latent elements, averaged over the leading batch axis."""
    per = 0.5 * (mu ** 2 + torch.exp(logvar) - 1.0 - logvar)
    if per.dim() <= 1:
        return per.sum()
    return per.flatten(1).sum(1).mean()


def lsgan_d_loss(d_real, d_fake):
    return ((1.0 - d_real) ** 2).mean() + (d_fake ** 2).mean()


def lsgan_g_loss(d_fake):
    return ((1.0 - d_fake) ** 2).mean()


def lsgan_losses(d_real, d_fake):
    """``(discriminator loss, generator loss)`` for least-squares GANs."""
    return lsgan_d_loss(d_real, d_fake), lsgan_g_loss(d_fake)


def vae_objective(recon, target, mu, logvar, d_fake, alpha=10.0, kl_weight=1.0):
    comps = {
        "kl": kl_divergence(mu, logvar),
        "l1": (recon - target).abs().mean(),
        "gan": lsgan_g_loss(d_fake),
    }
    total = kl_weight * comps["kl"] + alpha * comps["l1"] + comps["gan"]
    return total, comps


def vae1_loss(img, vae, disc, alpha=10.0, kl_weight=1.0, eps=None, generator=None,
              return_outputs=False):
    """Reconstruction objective for one image stream (also used for the clean VAE).

    The discriminator only scores the reconstruction here; its parameters
    receive no gradient.
    """
    img, _ = _batched(img)
    lat = encode(vae, img, eps=eps, generator=generator)
    recon = vae.generator(lat.z)
    with frozen(disc):
        d_fake = disc(recon)
    total, comps = vae_objective(recon, img, lat.mu, lat.logvar, d_fake, alpha, kl_weight)
    if return_outputs:
        return total, comps, {"latent": lat, "recon": recon}
    return total, comps


def latent_adv_loss(z_x, z_r, d_latent):
    """Latent alignment: ``(critic loss, encoder loss)``.

    The critic pushes synthetic codes to 0 and real codes to 1; the encoder
    term swaps the targets and never updates the critic.
    """
    d_loss = (d_latent(z_x.detach()) ** 2).mean() + ((1.0 - d_latent(z_r.detach())) ** 2).mean()
    with frozen(d_latent):
        e_loss = ((1.0 - d_latent(z_x)) ** 2).mean() + (d_latent(z_r) ** 2).mean()
    return d_loss, e_loss


def feature_l1(feats_a, feats_b):
    """Sum over layers of the mean absolute activation difference."""
    return sum((a - b).abs().mean() for a, b in zip(feats_a, feats_b))


def feature_matching_loss(x_restored, y_recon, disc, perceptual=None):
    """Multi-layer L1 between critic activations plus perceptual activations."""
    with frozen(disc):
        fa = disc.features(x_restored)[:-1]
        fb = disc.features(y_recon)[:-1]
    loss = feature_l1(fa, fb)
    if perceptual is not None:
        loss = loss + feature_l1(perceptual.features(x_restored), perceptual.features(y_recon))
    return loss


def latent_mask(m, z):
    """Mask at latent resolution, from either latent or image resolution."""
    b, _, h, w = z.shape
    if m is None:
        return torch.zeros(b, 1, h, w, dtype=z.dtype, device=z.device)
    m = torch.as_tensor(m, dtype=z.dtype, device=z.device)
    if m.dim() == 2:
        m = m[None, None]
    elif m.dim() == 3:
        m = m.unsqueeze(1)
    mh, mw = m.shape[-2:]
    if (mh, mw) == (h, w):
        return as_mask(m, z)
    if (mh, mw) == (4 * h, 4 * w):
        return as_mask(downscale_mask(m, (h, w)), z)
    raise InvalidInputError(f"mask {mh}x{mw} matches neither latent {h}x{w} nor image {4 * h}x{4 * w}")


def mapping_forward(mapping, z, m=None):
    z, squeeze = _batched(z)
    out = mapping(z, latent_mask(m, z))
    return out[0] if squeeze else out


def mapping_loss(x, y, nets, m=None, lambda1=60.0, lambda2=10.0, return_outputs=False):
    """Stage-two objective; only the mapping network receives gradients."""
    x, _ = _batched(x)
    y, _ = _batched(y)
    with frozen(nets.vae1, nets.vae2):
        with torch.no_grad():
            z_x = nets.vae1.encoder(x)[0]
            z_y = nets.vae2.encoder(y)[0]
            y_yy = nets.vae2.generator(z_y)
        t = mapping_forward(nets.mapping, z_x, m)
        x_xy = nets.vae2.generator(t)
        with frozen(nets.d_mapping):
            gan = lsgan_g_loss(nets.d_mapping(x_xy))
        comps = {
            "latent_l1": (t - z_y).abs().mean(),
            "gan": gan,
            "fm": feature_matching_loss(x_xy, y_yy, nets.d_mapping, nets.perceptual),
        }
    total = lambda1 * comps["latent_l1"] + comps["gan"] + lambda2 * comps["fm"]
    if return_outputs:
        return total, comps, {"restored": x_xy, "z_y": z_y, "mapped": t}
    return total, comps


@torch.no_grad()
def restore_image(r, nets, m=None):
    """``G_Y(T(mu_RX(r)))``; deterministic, no latent sampling."""
    if nets.mapping is None:
        raise ConfigurationError("restoration needs a trained mapping network")
    r, squeeze = _batched(r)
    h, w = r.shape[-2:]
    if h % 4 or w % 4:
        raise InvalidInputError(f"spatial size {h}x{w} must be divisible by 4")
    mu = nets.vae1.encoder(r)[0]
    out = nets.vae2.generator(mapping_forward(nets.mapping, mu, m))
    return out[0] if squeeze else out
