"""Latent-space restoration: two VAEs and a mask-aware mapping network."""
from .losses import (
    LatentCode,
    decode,
    encode,
    feature_matching_loss,
    kl_divergence,
    latent_adv_loss,
    lsgan_losses,
    mapping_forward,
    mapping_loss,
    restore_image,
    vae1_loss,
    vae_objective,
)
from .networks import (
    VAE,
    Discriminator,
    MappingNet,
    PerceptualExtractor,
    RestorationNets,
    RestoreArch,
    build_nets,
    downscale_mask,
)
from .train import train_stage1, train_stage2, train_vae1, train_vae2
